// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hcn/model.hpp"
#include "hcn/ops.hpp"
#include "support.hpp"

using namespace hcn;
using oracle::Mat;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d_obj = 5;
    c.d_text = 4;
    c.d_base = 8;
    c.d_phase = 8;
    c.d_att = 3;
    c.d_hidden = 7;
    c.vocab_size = 6;
    return c;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Tensor t(Shape{r, c});
    for (auto& v : t.data()) v = g(rng);
    return t;
}

TensorMap random_params(const ModelConfig& cfg, std::uint64_t seed) {
    TensorMap p = init_params(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> g(0, 0.2);
    for (auto& [name, t] : p)
        if (name.ends_with("bias"))
            for (auto& v : t.data()) v = g(rng);
    return p;
}

Mat run_mlp(const TensorMap& p, const std::string& prefix, std::size_t depth, Mat x) {
    for (std::size_t k = 0; k < depth; ++k) {
        const std::string n = prefix + "." + std::to_string(k);
        x = oracle::dense(x, p.at(n + ".weight"), p.at(n + ".bias"), k + 1 < depth);
    }
    return x;
}

struct OracleOut {
    Mat f_base;
    std::vector<std::vector<double>> masks;
    std::vector<double> logits;
    std::vector<double> attention;
};

// Restatement of the model on nested vectors.
OracleOut oracle_forward(const ModelConfig& cfg, const TensorMap& p, const Mat& tokens, const Mat& text) {
    OracleOut o;
    o.f_base = run_mlp(p, "extractor", cfg.extractor_depth, tokens);
    Mat prev;
    for (const char* phase : {"cg", "fg", "if"}) {
        const std::string pre = std::string("hsm.") + phase;
        const Mat in = prev.empty() ? o.f_base : oracle::hcat(o.f_base, prev);
        prev = run_mlp(p, pre, cfg.phase_depth, in);
        // The phase MLP ends linear; its head is a separate layer.
        const Mat logit = oracle::dense(prev, p.at(pre + ".head.weight"), p.at(pre + ".head.bias"), false);
        std::vector<double> m;
        for (const auto& row : logit) m.push_back(oracle::sigmoid(row[0]));
        o.masks.push_back(m);
    }
    Mat tok = tokens;
    for (std::size_t i = 0; i < tok.size(); ++i)
        for (auto& v : tok[i]) v *= o.masks[2][i] + 1;

    const std::size_t n = tok.size();
    Mat pooled_text(1, std::vector<double>(cfg.d_text, 0));
    for (const auto& row : text)
        for (std::size_t j = 0; j < row.size(); ++j) pooled_text[0][j] += row[j] / text.size();
    const Mat q = oracle::matmul(pooled_text, oracle::from_tensor(p.at("answer.query.weight")));
    const Mat k = oracle::matmul(tok, oracle::from_tensor(p.at("answer.key.weight")));
    std::vector<double> s(n);
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = 0;
        for (std::size_t j = 0; j < cfg.d_att; ++j) s[i] += k[i][j] * q[0][j];
        s[i] /= std::sqrt(double(cfg.d_att));
        mx = std::max(mx, s[i]);
    }
    double z = 0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (auto& v : s) v /= z;
    o.attention = s;
    Mat feat(1, std::vector<double>(2 * cfg.d_obj, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cfg.d_obj; ++j) {
            feat[0][j] += s[i] * tok[i][j];
            feat[0][cfg.d_obj + j] += tok[i][j] / n;
        }
    o.logits = run_mlp(p, "answer.mlp", 2, feat)[0];
    return o;
}

ForwardResult model_forward(Tape& t, const ModelConfig& cfg, const TensorMap& p, const Tensor& tokens,
                            const Tensor& text) {
    const VarMap v = bind_params(t, p, false);
    return forward(cfg, v, t.constant(tokens), t.constant(text));
}

}  // namespace

TEST_CASE("forward pass equals the nested-vector re-implementation") {
    const ModelConfig cfg = small_config();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const TensorMap p = random_params(cfg, seed);
        const Tensor tokens = random_matrix(6, cfg.d_obj, seed + 10);
        const Tensor text = random_matrix(4, cfg.d_text, seed + 20);
        Tape t;
        const ForwardResult r = model_forward(t, cfg, p, tokens, text);
        const OracleOut o = oracle_forward(cfg, p, oracle::from_tensor(tokens), oracle::from_tensor(text));
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < cfg.d_base; ++j)
                CHECK(std::abs(r.f_base.value().at(i, j) - o.f_base[i][j]) < 1e-12);
        const Var masks[3] = {r.hsm.m_cg, r.hsm.m_fg, r.hsm.m_if};
        for (int ph = 0; ph < 3; ++ph)
            for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(masks[ph].value()[i] - o.masks[ph][i]) < 1e-12);
        for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(r.answer.attention.value()[i] - o.attention[i]) < 1e-12);
        for (std::size_t v = 0; v < cfg.vocab_size; ++v)
            CHECK(std::abs(r.answer.logits.value()[v] - o.logits[v]) < 1e-12);
    }
}

TEST_CASE("identity extractor passes non-negative tokens through") {
    ModelConfig cfg = small_config();
    cfg.d_obj = cfg.d_base = 4;
    TensorMap p = init_params(cfg, 0);
    for (std::size_t k = 0; k < 4; ++k) {
        Tensor& w = p.at("extractor." + std::to_string(k) + ".weight");
        w.fill(0);
        for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1;
    }
    const Tensor tokens = Tensor::matrix({{0.5, 0, 2, 1}, {3, 0.25, 0, 7}});
    Tape t;
    const VarMap v = bind_params(t, p, false);
    CHECK(pre_hsm_extract(cfg, v, t.constant(tokens)).value() == tokens);
}

TEST_CASE("hsm shape trace and zero parameters") {
    ModelConfig cfg = small_config();
    cfg.d_base = 8;
    cfg.d_phase = 8;
    TensorMap p = init_params(cfg, 0);
    CHECK(p.at("hsm.cg.0.weight").shape() == Shape{8, 8});
    CHECK(p.at("hsm.fg.0.weight").shape() == Shape{16, 8});
    CHECK(p.at("hsm.if.0.weight").shape() == Shape{16, 8});
    for (auto& [name, t] : p) t.fill(0);
    Tape t;
    const VarMap v = bind_params(t, p, false);
    const HsmOutput h = hsm_forward(cfg, v, t.constant(random_matrix(6, 8, 1)));
    for (const Var m : {h.m_cg, h.m_fg, h.m_if}) {
        CHECK(m.shape() == Shape{6});
        for (double x : m.value().values()) CHECK(x == 0.5);
    }
}

TEST_CASE("object order is equivariant for masks and invariant for logits") {
    const ModelConfig cfg = small_config();
    const TensorMap p = random_params(cfg, 7);
    const Tensor tokens = random_matrix(5, cfg.d_obj, 8);
    const Tensor text = random_matrix(3, cfg.d_text, 9);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor permuted(tokens.shape());
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < cfg.d_obj; ++j) permuted.at(i, j) = tokens.at(perm[i], j);
    Tape t;
    const auto a = model_forward(t, cfg, p, tokens, text);
    const auto b = model_forward(t, cfg, p, permuted, text);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(b.hsm.m_if.value()[i] == doctest::Approx(a.hsm.m_if.value()[perm[i]]).epsilon(1e-13));
        CHECK(b.reweighted.value().at(i, 0) == doctest::Approx(a.reweighted.value().at(perm[i], 0)).epsilon(1e-13));
    }
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
        CHECK(b.answer.logits.value()[v] == doctest::Approx(a.answer.logits.value()[v]).epsilon(1e-12));
}

TEST_CASE("later phase parameters cannot change earlier masks") {
    const ModelConfig cfg = small_config();
    TensorMap p = random_params(cfg, 3);
    const Tensor base = random_matrix(6, cfg.d_base, 4);
    auto run = [&](const TensorMap& params) {
        Tape t;
        const VarMap v = bind_params(t, params, false);
        const HsmOutput h = hsm_forward(cfg, v, t.constant(base));
        return std::pair{h.m_cg.value(), h.m_fg.value()};
    };
    const auto before = run(p);
    for (auto& [name, t] : p)
        if (name.starts_with("hsm.if.")) t.fill(0);
    const auto after = run(p);
    CHECK(before.first == after.first);
    CHECK(before.second == after.second);
}

TEST_CASE("reweighting") {
    Tape t;
    const Tensor tokens = random_matrix(4, 3, 2);
    const Var x = t.constant(tokens);
    CHECK(reweight_tokens(x, t.constant(Tensor(Shape{4}, 0.0))).value() == tokens);
    const Tensor doubled = reweight_tokens(x, t.constant(Tensor::vector({0, 1, 0, 0.5}))).value();
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(doubled.at(1, j) == 2 * tokens.at(1, j));
        CHECK(doubled.at(0, j) == tokens.at(0, j));
        CHECK(std::abs(doubled.at(3, j) - 1.5 * tokens.at(3, j)) < 1e-15);
    }
    CHECK_THROWS_AS(reweight_tokens(x, t.constant(Tensor(Shape{3}, 0.0))), ShapeError);
}

TEST_CASE("attention over a single object is exactly one") {
    const ModelConfig cfg = small_config();
    const TensorMap p = random_params(cfg, 5);
    Tape t;
    const VarMap v = bind_params(t, p, false);
    const auto out = answer_head(cfg, v, t.constant(random_matrix(1, cfg.d_obj, 1)),
                                 t.constant(random_matrix(2, cfg.d_text, 2)));
    CHECK(out.attention.value()[0] == 1.0);
}

TEST_CASE("scaling up a token raises its attention score when its score is positive") {
    const ModelConfig cfg = small_config();
    const TensorMap p = random_params(cfg, 6);
    const Tensor text = random_matrix(2, cfg.d_text, 3);
    Tensor tokens = random_matrix(4, cfg.d_obj, 4);
    Tape t;
    const VarMap v = bind_params(t, p, false);
    const auto base = answer_head(cfg, v, t.constant(tokens), t.constant(text));
    // Pick the token with the highest attention: its raw score exceeds the others.
    std::size_t top = 0;
    for (std::size_t i = 1; i < 4; ++i)
        if (base.attention.value()[i] > base.attention.value()[top]) top = i;
    std::vector<double> w(4, 0.0);
    w[top] = 1.0;
    const Var rw = reweight_tokens(t.constant(tokens), t.constant(Tensor::vector(w)));
    const auto boosted = answer_head(cfg, v, rw, t.constant(text));
    bool positive_score = false;
    {
        const Mat q = oracle::matmul(oracle::from_tensor(text), oracle::from_tensor(p.at("answer.query.weight")));
        const Mat k = oracle::matmul(oracle::from_tensor(tokens), oracle::from_tensor(p.at("answer.key.weight")));
        double s = 0;
        for (std::size_t j = 0; j < cfg.d_att; ++j) s += k[top][j] * (q[0][j] + q[1][j]) / 2;
        positive_score = s > 0;
    }
    if (positive_score) CHECK(boosted.attention.value()[top] > base.attention.value()[top]);
    else CHECK(boosted.attention.value()[top] <= base.attention.value()[top]);
}

TEST_CASE("hard mask mode feeds thresholded weights") {
    ModelConfig cfg = small_config();
    cfg.mask_mode = MaskMode::hard;
    const TensorMap p = random_params(cfg, 2);
    const Tensor tokens = random_matrix(5, cfg.d_obj, 3);
    Tape t;
    const auto r = model_forward(t, cfg, p, tokens, random_matrix(2, cfg.d_text, 4));
    for (std::size_t i = 0; i < 5; ++i) {
        const double factor = r.hsm.m_if.value()[i] >= 0.5 ? 2.0 : 1.0;
        CHECK(r.reweighted.value().at(i, 0) == factor * tokens.at(i, 0));
    }
    cfg.mask_threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("init is deterministic and checked") {
    const ModelConfig cfg = small_config();
    CHECK(init_params(cfg, 4) == init_params(cfg, 4));
    CHECK(init_params(cfg, 4) != init_params(cfg, 5));
    TensorMap p = init_params(cfg, 4);
    CHECK_NOTHROW(check_params(cfg, p));
    p.erase("answer.key.weight");
    CHECK_THROWS_AS(check_params(cfg, p), ShapeError);
    const ModelConfig back = model_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("flops closed form") {
    CHECK(linear_flops(4, 8, 10) == 640);
    const ModelConfig cfg = small_config();
    const std::size_t n = 6;
    const FlopsReport r = count_flops(cfg, n, 9, 1e9);
    double hsm = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        const double in = p == 0 ? cfg.d_base : cfg.d_base + cfg.d_phase;
        hsm += 2 * in * cfg.d_phase * n + 2.0 * cfg.d_phase * cfg.d_phase * n + 2.0 * cfg.d_phase * 1 * n;
    }
    CHECK(r.hsm_total == hsm);
    CHECK(r.hsm_ratio == hsm / 1e9);
    CHECK(count_flops(cfg, n, 9, std::numeric_limits<double>::infinity()).hsm_ratio == 0);
}
