// SPDX-License-Identifier: Apache-2.0

#include "hcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "hcn/ops.hpp"
#include "hcn/scene.hpp"

namespace hcn {

namespace {

struct LayerSpec {
    std::string name;
    std::size_t in, out;
};

std::string layer_name(const std::string& prefix, std::size_t k) {
    return prefix + "." + std::to_string(k);
}

std::vector<LayerSpec> extractor_layers(const ModelConfig& cfg) {
    std::vector<LayerSpec> out;
    for (std::size_t k = 0; k < cfg.extractor_depth; ++k)
        out.push_back({layer_name("extractor", k), k == 0 ? cfg.d_obj : cfg.d_base, cfg.d_base});
    return out;
}

std::size_t phase_input_width(const ModelConfig& cfg, std::size_t phase) {
    return phase == 0 ? cfg.d_base : cfg.d_base + cfg.d_phase;
}

std::vector<LayerSpec> phase_layers(const ModelConfig& cfg, std::size_t phase) {
    const std::string prefix = std::string("hsm.") + kPhaseNames[phase];
    std::vector<LayerSpec> out;
    for (std::size_t k = 0; k < cfg.phase_depth; ++k)
        out.push_back({layer_name(prefix, k), k == 0 ? phase_input_width(cfg, phase) : cfg.d_phase,
                       cfg.d_phase});
    out.push_back({prefix + ".head", cfg.d_phase, 1});
    return out;
}

std::vector<LayerSpec> answer_layers(const ModelConfig& cfg) {
    return {{"answer.mlp.0", 2 * cfg.d_obj, cfg.d_hidden},
            {"answer.mlp.1", cfg.d_hidden, cfg.vocab_size}};
}

std::vector<LayerSpec> all_biased_layers(const ModelConfig& cfg) {
    auto layers = extractor_layers(cfg);
    for (std::size_t p = 0; p < 3; ++p) {
        auto ph = phase_layers(cfg, p);
        layers.insert(layers.end(), ph.begin(), ph.end());
    }
    auto ans = answer_layers(cfg);
    layers.insert(layers.end(), ans.begin(), ans.end());
    return layers;
}

// Relu between layers, identity after the last.
Var mlp(const VarMap& params, const std::vector<LayerSpec>& layers, Var x) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        x = linear(x, params.at(layers[k].name + ".weight"), params.at(layers[k].name + ".bias"));
        if (k + 1 < layers.size()) x = relu(x);
    }
    return x;
}

void require_width(const char* what, Var x, std::size_t width) {
    if (x.value().rank() != 2 || x.value().cols() != width)
        throw ShapeError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                         shape_str(x.shape()));
}

}  // namespace

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw ValidationError(std::string("model config: ") + name + " must be >= 1");
    };
    positive(d_obj, "d_obj");
    positive(d_text, "d_text");
    positive(d_base, "d_base");
    positive(d_phase, "d_phase");
    positive(extractor_depth, "extractor_depth");
    positive(phase_depth, "phase_depth");
    positive(d_att, "d_att");
    positive(d_hidden, "d_hidden");
    positive(vocab_size, "vocab_size");
    if (mask_mode == MaskMode::hard && !(mask_threshold > 0 && mask_threshold < 1))
        throw ValidationError("model config: mask_threshold must lie in (0,1)");
}

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["d_obj"] = cfg.d_obj;
    j["d_text"] = cfg.d_text;
    j["d_base"] = cfg.d_base;
    j["d_phase"] = cfg.d_phase;
    j["extractor_depth"] = cfg.extractor_depth;
    j["phase_depth"] = cfg.phase_depth;
    j["d_att"] = cfg.d_att;
    j["d_hidden"] = cfg.d_hidden;
    j["vocab_size"] = cfg.vocab_size;
    j["mask_mode"] = cfg.mask_mode == MaskMode::soft ? "soft" : "hard";
    j["mask_threshold"] = cfg.mask_threshold;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.d_obj = j.value("d_obj", cfg.d_obj);
        cfg.d_text = j.value("d_text", cfg.d_text);
        cfg.d_base = j.value("d_base", cfg.d_base);
        cfg.d_phase = j.value("d_phase", cfg.d_phase);
        cfg.extractor_depth = j.value("extractor_depth", cfg.extractor_depth);
        cfg.phase_depth = j.value("phase_depth", cfg.phase_depth);
        cfg.d_att = j.value("d_att", cfg.d_att);
        cfg.d_hidden = j.value("d_hidden", cfg.d_hidden);
        cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
        const std::string mode = j.value("mask_mode", std::string("soft"));
        if (mode == "soft")
            cfg.mask_mode = MaskMode::soft;
        else if (mode == "hard")
            cfg.mask_mode = MaskMode::hard;
        else
            throw ValidationError("model config: mask_mode must be soft or hard, got '" + mode + "'");
        cfg.mask_threshold = j.value("mask_threshold", cfg.mask_threshold);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<std::string> param_names(const ModelConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& l : all_biased_layers(cfg)) {
        names.push_back(l.name + ".weight");
        names.push_back(l.name + ".bias");
    }
    names.push_back("answer.query.weight");
    names.push_back("answer.key.weight");
    std::sort(names.begin(), names.end());
    return names;
}

TensorMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    TensorMap params;
    auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-a, a);
        Tensor w(Shape{in, out});
        for (auto& v : w.data()) v = dist(rng);
        params.emplace(name, std::move(w));
    };
    for (const auto& l : all_biased_layers(cfg)) {
        weight(l.name + ".weight", l.in, l.out);
        params.emplace(l.name + ".bias", Tensor(Shape{l.out}, 0.0));
    }
    weight("answer.query.weight", cfg.d_text, cfg.d_att);
    weight("answer.key.weight", cfg.d_obj, cfg.d_att);
    return params;
}

void check_params(const ModelConfig& cfg, const TensorMap& params) {
    TensorMap expected;
    for (const auto& l : all_biased_layers(cfg)) {
        expected.emplace(l.name + ".weight", Tensor(Shape{l.in, l.out}));
        expected.emplace(l.name + ".bias", Tensor(Shape{l.out}));
    }
    expected.emplace("answer.query.weight", Tensor(Shape{cfg.d_text, cfg.d_att}));
    expected.emplace("answer.key.weight", Tensor(Shape{cfg.d_obj, cfg.d_att}));
    for (const auto& [name, t] : expected) {
        auto it = params.find(name);
        if (it == params.end()) throw ShapeError("parameters: missing '" + name + "'");
        if (it->second.shape() != t.shape())
            throw ShapeError("parameters: '" + name + "' has shape " + shape_str(it->second.shape()) +
                             ", expected " + shape_str(t.shape()));
    }
    if (params.size() != expected.size())
        throw ShapeError("parameters: " + std::to_string(params.size()) + " entries, expected " +
                         std::to_string(expected.size()));
}

VarMap bind_params(Tape& tape, const TensorMap& params, bool requires_grad) {
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t, requires_grad));
    return vars;
}

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

Var pre_hsm_extract(const ModelConfig& cfg, const VarMap& params, Var tokens) {
    require_width("pre_hsm_extract", tokens, cfg.d_obj);
    return mlp(params, extractor_layers(cfg), tokens);
}

HsmOutput hsm_forward(const ModelConfig& cfg, const VarMap& params, Var f_base) {
    require_width("hsm_forward", f_base, cfg.d_base);
    const std::size_t n = f_base.value().rows();
    Var features[3];
    Var masks[3];
    for (std::size_t p = 0; p < 3; ++p) {
        const Var input = p == 0 ? f_base : concat(f_base, features[p - 1]);
        auto layers = phase_layers(cfg, p);
        const LayerSpec head = layers.back();
        layers.pop_back();
        features[p] = mlp(params, layers, input);
        const Var logit = linear(features[p], params.at(head.name + ".weight"),
                                 params.at(head.name + ".bias"));
        masks[p] = sigmoid(reshape(logit, Shape{n}));
    }
    return HsmOutput{features[0], features[1], features[2], masks[0], masks[1], masks[2]};
}

Var reweight_tokens(Var tokens, Var weights) {
    if (weights.value().rank() != 1 || tokens.value().rank() != 2 ||
        weights.value().size() != tokens.value().rows())
        throw ShapeError("reweight_tokens: weights " + shape_str(weights.shape()) + " vs tokens " +
                         shape_str(tokens.shape()));
    return scale_rows(tokens, add_scalar(weights, 1.0));
}

AnswerHeadOutput answer_head(const ModelConfig& cfg, const VarMap& params, Var tokens, Var text) {
    require_width("answer_head tokens", tokens, cfg.d_obj);
    require_width("answer_head text", text, cfg.d_text);
    const std::size_t n = tokens.value().rows();
    const Var query = matmul(mean_rows(text), params.at("answer.query.weight"));  // (1, d_att)
    const Var keys = matmul(tokens, params.at("answer.key.weight"));              // (n, d_att)
    const Var scores = scale(matmul(keys, transpose(query)),
                             1.0 / std::sqrt(static_cast<double>(cfg.d_att)));   // (n, 1)
    const Var attention = softmax(reshape(scores, Shape{1, n}));
    const Var attended = matmul(attention, tokens);                               // (1, d_obj)
    const Var pooled = mean_rows(tokens);
    const Var logits = mlp(params, answer_layers(cfg), concat(attended, pooled));
    return AnswerHeadOutput{reshape(logits, Shape{cfg.vocab_size}), attention};
}

ForwardResult forward(const ModelConfig& cfg, const VarMap& params, Var tokens, Var text) {
    ForwardResult r;
    r.f_base = pre_hsm_extract(cfg, params, tokens);
    r.hsm = hsm_forward(cfg, params, r.f_base);
    Var weights = r.hsm.m_if;
    if (cfg.mask_mode == MaskMode::hard) {
        Tensor hard = r.hsm.m_if.value();
        for (auto& v : hard.data()) v = v >= cfg.mask_threshold ? 1.0 : 0.0;
        weights = tokens.tape()->constant(std::move(hard));
    }
    r.reweighted = reweight_tokens(tokens, weights);
    r.answer = answer_head(cfg, params, r.reweighted, text);
    return r;
}

double linear_flops(std::size_t in, std::size_t out, std::size_t rows) {
    return 2.0 * static_cast<double>(in) * static_cast<double>(out) * static_cast<double>(rows);
}

FlopsReport count_flops(const ModelConfig& cfg, std::size_t n_objects, std::size_t t_text,
                        double backbone_flops) {
    cfg.validate();
    (void)t_text;  // text is mean-pooled before the query projection
    FlopsReport r;
    r.backbone_flops = backbone_flops;
    auto add_layer = [&](std::string name, std::string component, std::size_t in, std::size_t out,
                         std::size_t rows) {
        LayerFlops l{std::move(name), std::move(component), in, out, rows,
                     linear_flops(in, out, rows)};
        if (l.component == "extractor") r.extractor_total += l.flops;
        else if (l.component == "hsm") r.hsm_total += l.flops;
        else r.answer_total += l.flops;
        r.layers.push_back(std::move(l));
    };
    for (const auto& l : extractor_layers(cfg)) add_layer(l.name, "extractor", l.in, l.out, n_objects);
    for (std::size_t p = 0; p < 3; ++p)
        for (const auto& l : phase_layers(cfg, p)) add_layer(l.name, "hsm", l.in, l.out, n_objects);
    add_layer("answer.query", "answer", cfg.d_text, cfg.d_att, 1);
    add_layer("answer.key", "answer", cfg.d_obj, cfg.d_att, n_objects);
    add_layer("answer.scores", "answer", cfg.d_att, 1, n_objects);
    add_layer("answer.attend", "answer", n_objects, cfg.d_obj, 1);
    for (const auto& l : answer_layers(cfg)) add_layer(l.name, "answer", l.in, l.out, 1);
    r.model_total = r.extractor_total + r.hsm_total + r.answer_total;
    r.hsm_ratio = std::isinf(backbone_flops) ? 0.0 : r.hsm_total / backbone_flops;
    return r;
}

nlohmann::ordered_json to_json(const FlopsReport& r) {
    nlohmann::ordered_json j;
    auto layers = nlohmann::ordered_json::array();
    for (const auto& l : r.layers) {
        nlohmann::ordered_json e;
        e["name"] = l.name;
        e["component"] = l.component;
        e["in"] = l.in;
        e["out"] = l.out;
        e["rows"] = l.rows;
        e["flops"] = l.flops;
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    j["extractor_total"] = r.extractor_total;
    j["hsm_total"] = r.hsm_total;
    j["answer_total"] = r.answer_total;
    j["model_total"] = r.model_total;
    j["backbone_flops"] = r.backbone_flops;
    j["hsm_ratio"] = r.hsm_ratio;
    return j;
}

}  // namespace hcn
