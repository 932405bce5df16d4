// SPDX-License-Identifier: Apache-2.0

#include "hcn/optim.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hcn/scene.hpp"

namespace hcn {

namespace {

const Tensor& grad_for(const TensorMap& grads, const std::string& name, const Tensor& param) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ShapeError("optimizer: no gradient for parameter '" + name + "'");
    if (it->second.shape() != param.shape())
        throw ShapeError("optimizer: gradient " + shape_str(it->second.shape()) +
                         " does not match parameter '" + name + "' " + shape_str(param.shape()));
    return it->second;
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ValidationError("optimizer: unknown kind '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

void sgd_step(TensorMap& params, const TensorMap& grads, double lr) {
    for (auto& [name, p] : params) {
        const Tensor& g = grad_for(grads, name, p);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
}

void adam_step(TensorMap& params, const TensorMap& grads, OptimizerState& s) {
    ++s.step;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (auto& [name, p] : params) {
        const Tensor& g = grad_for(grads, name, p);
        Tensor& m = s.first_moment.try_emplace(name, p.shape(), 0.0).first->second;
        Tensor& v = s.second_moment.try_emplace(name, p.shape(), 0.0).first->second;
        if (m.shape() != p.shape() || v.shape() != p.shape())
            throw ShapeError("adam: moment buffers for '" + name + "' do not match " +
                             shape_str(p.shape()));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
        }
    }
}

void optimizer_step(TensorMap& params, const TensorMap& grads, OptimizerState& state) {
    if (state.kind == OptimizerKind::sgd) {
        sgd_step(params, grads, state.lr);
        ++state.step;
    } else {
        adam_step(params, grads, state);
    }
}

std::string checkpoint_to_json_text(const Checkpoint& ckpt) {
    nlohmann::ordered_json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["meta"] = ckpt.meta;
    auto params = nlohmann::ordered_json::object();
    for (const auto& [name, t] : ckpt.params) {
        nlohmann::ordered_json entry;
        entry["shape"] = t.shape();
        entry["values"] = t.values();
        params[name] = std::move(entry);
    }
    j["params"] = std::move(params);
    return j.dump() + "\n";
}

Checkpoint checkpoint_from_json_text(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    if (j.value("format", "") != kCheckpointFormat)
        throw ParseError("checkpoint: missing or wrong format tag");
    if (j.value("version", 0) != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + j.value("version", nlohmann::json()).dump());
    Checkpoint ckpt;
    if (j.contains("meta")) ckpt.meta = j["meta"];
    try {
        for (const auto& [name, entry] : j.at("params").items()) {
            auto shape = entry.at("shape").get<Shape>();
            auto values = entry.at("values").get<std::vector<double>>();
            ckpt.params.emplace(name, Tensor(std::move(shape), std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint params: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("checkpoint params: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << checkpoint_to_json_text(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json_text(ss.str());
}

}  // namespace hcn
