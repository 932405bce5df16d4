// SPDX-License-Identifier: Apache-2.0

#include "hcn/grad_suite.hpp"

#include <cmath>
#include <random>

#include "hcn/model.hpp"
#include "hcn/ops.hpp"
#include "hcn/synth.hpp"
#include "hcn/train.hpp"

namespace hcn {

namespace {

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(Shape shape, double lo, double hi) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> d(lo, hi);
        for (auto& v : t.data()) v = d(rng_);
        return t;
    }

    // Values bounded away from zero so kinks sit far from the probe step.
    Tensor away_from_zero(Shape shape) {
        Tensor t = uniform(std::move(shape), 0.2, 1.5);
        std::bernoulli_distribution sign(0.5);
        for (auto& v : t.data())
            if (sign(rng_)) v = -v;
        return t;
    }

    std::vector<bool> labels(std::size_t n) {
        std::vector<bool> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = (i % 3 == 0);
        return out;
    }

private:
    std::mt19937_64 rng_;
};

// Contracts a tensor-valued graph against a fixed random cotangent so every
// Jacobian entry contributes to the scalar.
Var project(Tape& tape, Var y, std::uint64_t seed) {
    Sampler s(seed);
    const Var r = tape.constant(s.uniform(y.shape(), -1, 1));
    return sum(mul(y, r));
}

}  // namespace

std::vector<NamedGradcheck> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts,
                                                std::size_t n_objects) {
    Sampler s(mix_seed(seed, "gradcheck"));
    const std::uint64_t proj_seed = mix_seed(seed, "projection");
    std::vector<NamedGradcheck> out;
    auto check = [&](const std::string& name, const GraphBuilder& f, const TensorMap& inputs) {
        out.push_back({name, gradcheck(f, inputs, opts)});
    };
    auto unary = [&](const std::string& name, Var (*op)(Var), Tensor x) {
        check(name, [&, op](Tape& t, const VarMap& v) { return project(t, op(v.at("x")), proj_seed); },
              {{"x", std::move(x)}});
    };

    check("matmul", [&](Tape& t, const VarMap& v) { return project(t, matmul(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 4}, -1, 1)}, {"b", s.uniform({4, 2}, -1, 1)}});
    check("add", [&](Tape& t, const VarMap& v) { return project(t, add(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 4}, -1, 1)}, {"b", s.uniform({3, 4}, -1, 1)}});
    check("add_broadcast", [&](Tape& t, const VarMap& v) { return project(t, add(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 4}, -1, 1)}, {"b", s.uniform({4}, -1, 1)}});
    check("sub_broadcast", [&](Tape& t, const VarMap& v) { return project(t, sub(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 4}, -1, 1)}, {"b", s.uniform({1, 4}, -1, 1)}});
    check("mul", [&](Tape& t, const VarMap& v) { return project(t, mul(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 4}, -1, 1)}, {"b", s.uniform({3, 4}, -1, 1)}});
    check("scale", [&](Tape& t, const VarMap& v) { return project(t, scale(v.at("x"), -1.7), proj_seed); },
          {{"x", s.uniform({2, 3}, -1, 1)}});
    check("add_scalar", [&](Tape& t, const VarMap& v) { return project(t, add_scalar(v.at("x"), 0.3), proj_seed); },
          {{"x", s.uniform({2, 3}, -1, 1)}});
    check("concat", [&](Tape& t, const VarMap& v) { return project(t, concat(v.at("a"), v.at("b")), proj_seed); },
          {{"a", s.uniform({3, 2}, -1, 1)}, {"b", s.uniform({3, 4}, -1, 1)}});
    unary("relu", relu, s.away_from_zero({3, 4}));
    unary("sigmoid", sigmoid, s.uniform({3, 4}, -3, 3));
    unary("log", log, s.uniform({3, 4}, 0.2, 2.0));
    unary("mean", mean, s.uniform({3, 4}, -1, 1));
    unary("sum", sum, s.uniform({3, 4}, -1, 1));
    unary("mean_rows", mean_rows, s.uniform({5, 3}, -1, 1));
    unary("softmax", softmax, s.uniform({2, 5}, -2, 2));
    unary("transpose", transpose, s.uniform({3, 4}, -1, 1));
    check("row_select", [&](Tape& t, const VarMap& v) { return project(t, row_select(v.at("x"), {2, 0, 2}), proj_seed); },
          {{"x", s.uniform({4, 3}, -1, 1)}});
    check("reshape", [&](Tape& t, const VarMap& v) { return project(t, reshape(v.at("x"), {2, 6}), proj_seed); },
          {{"x", s.uniform({3, 4}, -1, 1)}});
    check("scale_rows", [&](Tape& t, const VarMap& v) { return project(t, scale_rows(v.at("x"), v.at("w")), proj_seed); },
          {{"x", s.uniform({4, 3}, -1, 1)}, {"w", s.uniform({4}, -1, 1)}});
    const auto labels = s.labels(6);
    check("weighted_bce", [&](Tape&, const VarMap& v) { return weighted_bce(v.at("p"), labels); },
          {{"p", s.uniform({6}, 0.1, 0.9)}});
    check("bce_mean", [&](Tape&, const VarMap& v) { return bce_mean(v.at("p"), labels); },
          {{"p", s.uniform({6}, 0.1, 0.9)}});
    check("cross_entropy", [&](Tape&, const VarMap& v) { return cross_entropy(v.at("z"), 2); },
          {{"z", s.uniform({5}, -2, 2)}});
    check("linear", [&](Tape& t, const VarMap& v) {
              return project(t, linear(v.at("x"), v.at("w"), v.at("b")), proj_seed);
          },
          {{"x", s.uniform({3, 4}, -1, 1)}, {"w", s.uniform({4, 2}, -1, 1)}, {"b", s.uniform({2}, -1, 1)}});

    ModelConfig cfg;
    cfg.d_obj = 6;
    cfg.d_text = 5;
    cfg.d_base = 8;
    cfg.d_phase = 6;
    cfg.d_att = 4;
    cfg.d_hidden = 8;
    cfg.vocab_size = 5;
    TensorMap inputs = init_params(cfg, mix_seed(seed, "params"));
    for (auto& [name, t] : inputs)
        if (name.ends_with("bias")) t = s.uniform(t.shape(), -0.1, 0.1);
    inputs.emplace("input.tokens", s.uniform({n_objects, cfg.d_obj}, -1, 1));
    inputs.emplace("input.text", s.uniform({4, cfg.d_text}, -1, 1));
    MaskTriple masks;
    masks.boi.assign(n_objects, false);
    masks.ooi.assign(n_objects, false);
    masks.oot.assign(n_objects, false);
    for (std::size_t i = 0; i < n_objects; ++i) {
        masks.boi[i] = i < 4;
        masks.ooi[i] = i < 2;
        masks.oot[i] = i == 0;
    }
    const LossWeights weights;
    const SupervisionFlags flags;
    check("full_stack",
          [&](Tape&, const VarMap& v) {
              VarMap params = v;
              const Var tokens = params.at("input.tokens");
              const Var text = params.at("input.text");
              params.erase("input.tokens");
              params.erase("input.text");
              const ForwardResult fw = forward(cfg, params, tokens, text);
              const HsmLoss hsm = hsm_loss(fw.hsm, masks, weights, flags);
              return total_loss(hsm.total, cross_entropy(fw.answer.logits, 1), weights);
          },
          inputs);
    return out;
}

}  // namespace hcn
