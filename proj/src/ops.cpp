// SPDX-License-Identifier: Apache-2.0

#include "hcn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace hcn {

namespace {

Tape& tape_of(Var a) {
    if (!a.tape()) throw std::invalid_argument("op on an unbound Var");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("operands on different tapes");
    return tape_of(a);
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

// Elementwise unary op with derivative expressed through input and output values.
template <typename F, typename D>
Var unary(Var a, F f, D df) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return tape_of(a).record(std::move(y), {a},
        [df](const Tensor& g, const Tensor& out, auto in, auto grads) {
            if (!grads[0]) return;
            const Tensor& x = *in[0];
            Tensor& gx = *grads[0];
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], out[i]);
        });
}

struct Counts {
    double c0 = 0, c1 = 0;
};

Counts class_counts(const std::vector<bool>& labels) {
    Counts c;
    for (bool m : labels) (m ? c.c1 : c.c0) += 1;
    return c;
}

void check_labels(const char* op, Var pred, const std::vector<bool>& labels) {
    if (pred.value().rank() != 1 || pred.value().size() != labels.size())
        throw ShapeError(std::string(op) + ": predictions " + shape_str(pred.shape()) +
                         " vs labels (" + std::to_string(labels.size()) + ",)");
}

// Shared by weighted and unweighted BCE: per-element weights on the positive
// and negative log terms.
Var weighted_log_loss(Var pred, const std::vector<bool>& labels, double w_pos, double w_neg) {
    const Tensor& p = pred.value();
    double loss = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_prob(p[i]);
        loss -= labels[i] ? w_pos * std::log(q) : w_neg * std::log(1.0 - q);
    }
    return tape_of(pred).record(Tensor::scalar(loss), {pred},
        [labels, w_pos, w_neg](const Tensor& g, const Tensor&, auto in, auto grads) {
            if (!grads[0]) return;
            const Tensor& p = *in[0];
            Tensor& gp = *grads[0];
            for (std::size_t i = 0; i < p.size(); ++i) {
                // Clamped entries are locally constant.
                if (p[i] < kProbEpsilon || p[i] > 1.0 - kProbEpsilon) continue;
                gp[i] += g[0] * (labels[i] ? -w_pos / p[i] : w_neg / (1.0 - p[i]));
            }
        });
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
        mismatch("matmul", A.shape(), B.shape());
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tensor C(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) C[i * m + j] += aip * B[p * m + j];
        }
    return tape.record(std::move(C), {a, b},
        [n, k, m](const Tensor& G, const Tensor&, auto in, auto grads) {
            const Tensor& A = *in[0];
            const Tensor& B = *in[1];
            if (Tensor* gA = grads[0]) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0;
                        for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * B[p * m + j];
                        (*gA)[i * k + p] += acc;
                    }
            }
            if (Tensor* gB = grads[1]) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) (*gB)[p * m + j] += aip * G[i * m + j];
                    }
            }
        });
}

namespace {

// a + sign*b with b optionally broadcast over rows.
Var add_signed(const char* op, Var a, Var b, double sign) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    bool broadcast = false;
    if (A.shape() != B.shape()) {
        const bool row_like = (B.rank() == 1 || (B.rank() == 2 && B.rows() == 1));
        if (A.rank() == 2 && row_like && B.cols() == A.cols())
            broadcast = true;
        else
            mismatch(op, A.shape(), B.shape());
    }
    Tensor C = A;
    const std::size_t d = A.cols();
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += sign * B[broadcast ? i % d : i];
    return tape.record(std::move(C), {a, b},
        [broadcast, d, sign](const Tensor& G, const Tensor&, auto, auto grads) {
            if (grads[0]) grads[0]->accumulate(G);
            if (Tensor* gB = grads[1]) {
                for (std::size_t i = 0; i < G.size(); ++i)
                    (*gB)[broadcast ? i % d : i] += sign * G[i];
            }
        });
}

}  // namespace

Var add(Var a, Var b) { return add_signed("add", a, b, 1.0); }
Var sub(Var a, Var b) { return add_signed("sub", a, b, -1.0); }

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.shape() != B.shape()) mismatch("mul", A.shape(), B.shape());
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    return tape.record(std::move(C), {a, b},
        [](const Tensor& G, const Tensor&, auto in, auto grads) {
            for (std::size_t i = 0; i < G.size(); ++i) {
                if (grads[0]) (*grads[0])[i] += G[i] * (*in[1])[i];
                if (grads[1]) (*grads[1])[i] += G[i] * (*in[0])[i];
            }
        });
}

Var scale(Var a, double factor) {
    return unary(a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
    return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var concat(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != B.rank() || A.rank() == 0 || A.rows() != B.rows())
        mismatch("concat", A.shape(), B.shape());
    const std::size_t n = A.rows(), da = A.cols(), db = B.cols();
    Shape shape = A.rank() == 2 ? Shape{n, da + db} : Shape{da + db};
    Tensor C(shape);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(&A.data()[i * da], da, &C.data()[i * (da + db)]);
        std::copy_n(&B.data()[i * db], db, &C.data()[i * (da + db) + da]);
    }
    return tape.record(std::move(C), {a, b},
        [n, da, db](const Tensor& G, const Tensor&, auto, auto grads) {
            for (std::size_t i = 0; i < n; ++i) {
                if (grads[0])
                    for (std::size_t j = 0; j < da; ++j) (*grads[0])[i * da + j] += G[i * (da + db) + j];
                if (grads[1])
                    for (std::size_t j = 0; j < db; ++j)
                        (*grads[1])[i * db + j] += G[i * (da + db) + da + j];
            }
        });
}

Var relu(Var a) {
    return unary(a, [](double x) { return x <= 0 ? 0.0 : x; },
                 [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
    return unary(a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
    for (double v : a.value().data())
        if (!(v > 0)) throw std::domain_error("log: non-positive input");
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
    double s = 0;
    for (double v : a.value().data()) s += v;
    return tape_of(a).record(Tensor::scalar(s), {a},
        [](const Tensor& G, const Tensor&, auto, auto grads) {
            if (!grads[0]) return;
            for (auto& v : grads[0]->data()) v += G[0];
        });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(Var a) {
    const Tensor& A = a.value();
    if (A.rank() != 2) throw ShapeError("mean_rows: expected matrix, got " + shape_str(A.shape()));
    const std::size_t n = A.rows(), d = A.cols();
    Tensor C(Shape{1, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) C[j] += A[i * d + j];
    for (std::size_t j = 0; j < d; ++j) C[j] /= static_cast<double>(n);
    return tape_of(a).record(std::move(C), {a},
        [n, d](const Tensor& G, const Tensor&, auto, auto grads) {
            if (!grads[0]) return;
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) (*grads[0])[i * d + j] += G[j] * inv;
        });
}

Var softmax(Var a) {
    const Tensor& A = a.value();
    if (A.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t n = A.rows(), d = A.cols();
    Tensor Y(A.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = &A.data()[i * d];
        double* y = &Y.data()[i * d];
        const double mx = *std::max_element(x, x + d);
        double z = 0;
        for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < d; ++j) y[j] /= z;
    }
    return tape_of(a).record(std::move(Y), {a},
        [n, d](const Tensor& G, const Tensor& Y, auto, auto grads) {
            if (!grads[0]) return;
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += G[i * d + j] * Y[i * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    (*grads[0])[i * d + j] += Y[i * d + j] * (G[i * d + j] - dot);
            }
        });
}

Var row_select(Var a, const std::vector<std::size_t>& indices) {
    const Tensor& A = a.value();
    if (A.rank() == 0 || indices.empty())
        throw ShapeError("row_select: need non-empty indices into " + shape_str(A.shape()));
    const std::size_t width = A.rank() == 2 ? A.cols() : 1;
    const std::size_t rows = A.rank() == 2 ? A.rows() : A.size();
    for (std::size_t r : indices)
        if (r >= rows)
            throw ShapeError("row_select: index " + std::to_string(r) + " out of range for " +
                             shape_str(A.shape()));
    Shape shape = A.rank() == 2 ? Shape{indices.size(), width} : Shape{indices.size()};
    Tensor C(shape);
    for (std::size_t k = 0; k < indices.size(); ++k)
        std::copy_n(&A.data()[indices[k] * width], width, &C.data()[k * width]);
    return tape_of(a).record(std::move(C), {a},
        [indices, width](const Tensor& G, const Tensor&, auto, auto grads) {
            if (!grads[0]) return;
            for (std::size_t k = 0; k < indices.size(); ++k)
                for (std::size_t j = 0; j < width; ++j)
                    (*grads[0])[indices[k] * width + j] += G[k * width + j];
        });
}

Var transpose(Var a) {
    const Tensor& A = a.value();
    if (A.rank() != 2) throw ShapeError("transpose: expected matrix, got " + shape_str(A.shape()));
    const std::size_t n = A.rows(), m = A.cols();
    Tensor C(Shape{m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) C[j * n + i] = A[i * m + j];
    return tape_of(a).record(std::move(C), {a},
        [n, m](const Tensor& G, const Tensor&, auto, auto grads) {
            if (!grads[0]) return;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) (*grads[0])[i * m + j] += G[j * n + i];
        });
}

Var reshape(Var a, Shape shape) {
    return tape_of(a).record(a.value().reshaped(std::move(shape)), {a},
        [](const Tensor& G, const Tensor&, auto, auto grads) {
            if (!grads[0]) return;
            for (std::size_t i = 0; i < G.size(); ++i) (*grads[0])[i] += G[i];
        });
}

Var scale_rows(Var x, Var w) {
    Tape& tape = tape_of(x, w);
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    if (X.rank() != 2 || W.rank() != 1 || W.size() != X.rows())
        mismatch("scale_rows", X.shape(), W.shape());
    const std::size_t n = X.rows(), d = X.cols();
    Tensor C = X;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) C[i * d + j] *= W[i];
    return tape.record(std::move(C), {x, w},
        [n, d](const Tensor& G, const Tensor&, auto in, auto grads) {
            const Tensor& X = *in[0];
            const Tensor& W = *in[1];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    if (grads[0]) (*grads[0])[i * d + j] += G[i * d + j] * W[i];
                    if (grads[1]) (*grads[1])[i] += G[i * d + j] * X[i * d + j];
                }
        });
}

Var weighted_bce(Var pred, const std::vector<bool>& labels) {
    check_labels("weighted_bce", pred, labels);
    const Counts c = class_counts(labels);
    if (c.c0 == 0 || c.c1 == 0)
        throw DegenerateClassError("weighted_bce: needs both classes, got c0=" +
                                   std::to_string(static_cast<long>(c.c0)) +
                                   " c1=" + std::to_string(static_cast<long>(c.c1)));
    const double norm = (c.c0 + c.c1) / static_cast<double>(labels.size());
    return weighted_log_loss(pred, labels, norm / c.c1, norm / c.c0);
}

Var bce_mean(Var pred, const std::vector<bool>& labels) {
    check_labels("bce_mean", pred, labels);
    if (labels.empty()) throw ShapeError("bce_mean: empty input");
    const double w = 1.0 / static_cast<double>(labels.size());
    return weighted_log_loss(pred, labels, w, w);
}

Var cross_entropy(Var logits, std::size_t label) {
    const Tensor& L = logits.value();
    if (!(L.rank() == 1 || (L.rank() == 2 && L.rows() == 1)))
        throw ShapeError("cross_entropy: expected (V,) or (1,V) logits, got " +
                         shape_str(L.shape()));
    const std::size_t V = L.size();
    if (label >= V)
        throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(V) + " classes");
    const double mx = *std::max_element(L.data().begin(), L.data().end());
    double z = 0;
    for (double v : L.data()) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    return tape_of(logits).record(Tensor::scalar(lse - L[label]), {logits},
        [label, lse, V](const Tensor& G, const Tensor&, auto in, auto grads) {
            if (!grads[0]) return;
            const Tensor& L = *in[0];
            for (std::size_t j = 0; j < V; ++j)
                (*grads[0])[j] += G[0] * (std::exp(L[j] - lse) - (j == label ? 1.0 : 0.0));
        });
}

}  // namespace hcn
