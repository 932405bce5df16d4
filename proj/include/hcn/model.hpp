// SPDX-License-Identifier: Apache-2.0
//
// Object-token model: pre-HSM extractor, the three-phase hierarchical
// supervision module (coarse grounding -> fine grounding -> inference), the
// (M + 1) token reweighting and a single-query attention answer head.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcn/gradcheck.hpp"
#include "hcn/optim.hpp"
#include "hcn/tape.hpp"

namespace hcn {

enum class MaskMode { soft, hard };

struct ModelConfig {
    std::size_t d_obj = 16;
    std::size_t d_text = 16;
    std::size_t d_base = 32;
    std::size_t d_phase = 32;
    std::size_t extractor_depth = 4;
    std::size_t phase_depth = 2;
    std::size_t d_att = 16;
    std::size_t d_hidden = 64;
    std::size_t vocab_size = 2;
    MaskMode mask_mode = MaskMode::soft;
    double mask_threshold = 0.5;

    void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// The three phases in data-flow order.
inline constexpr const char* kPhaseNames[3] = {"cg", "fg", "if"};

/// Deterministic initialisation (uniform fan-in scaling, zero biases).
TensorMap init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Every parameter name the config requires, in name order.
std::vector<std::string> param_names(const ModelConfig& cfg);
/// Throws ShapeError if a parameter is missing or has the wrong shape.
void check_params(const ModelConfig& cfg, const TensorMap& params);

VarMap bind_params(Tape& tape, const TensorMap& params, bool requires_grad);

/// x·W + b.
Var linear(Var x, Var weight, Var bias);

/// Per-object MLP (relu between layers, linear last): (n, d_obj) -> (n, d_base).
Var pre_hsm_extract(const ModelConfig& cfg, const VarMap& params, Var tokens);

struct HsmOutput {
    Var f_cg, f_fg, f_if;  ///< (n, d_phase)
    Var m_cg, m_fg, m_if;  ///< (n,) probabilities
};

/// cg reads F_base; fg reads [F_base, F_cg]; if reads [F_base, F_fg].
HsmOutput hsm_forward(const ModelConfig& cfg, const VarMap& params, Var f_base);

/// Row i scaled by (weights[i] + 1).
Var reweight_tokens(Var tokens, Var weights);

struct AnswerHeadOutput {
    Var logits;     ///< (V,)
    Var attention;  ///< (1, n)
};

AnswerHeadOutput answer_head(const ModelConfig& cfg, const VarMap& params, Var tokens, Var text);

struct ForwardResult {
    Var f_base;
    HsmOutput hsm;
    Var reweighted;
    AnswerHeadOutput answer;
};

/// Full forward pass for one question. `tokens` (n, d_obj), `text` (t, d_text).
ForwardResult forward(const ModelConfig& cfg, const VarMap& params, Var tokens, Var text);

struct LayerFlops {
    std::string name;
    std::string component;  ///< "extractor", "hsm" or "answer"
    std::size_t in = 0, out = 0, rows = 0;
    double flops = 0;
};

struct FlopsReport {
    std::vector<LayerFlops> layers;
    double extractor_total = 0;
    double hsm_total = 0;
    double answer_total = 0;
    double model_total = 0;
    double backbone_flops = 0;
    /// hsm_total / backbone_flops.
    double hsm_ratio = 0;
};

/// Multiply-adds of one dense product: 2 * in * out * rows.
double linear_flops(std::size_t in, std::size_t out, std::size_t rows);

FlopsReport count_flops(const ModelConfig& cfg, std::size_t n_objects, std::size_t t_text,
                        double backbone_flops);
nlohmann::ordered_json to_json(const FlopsReport& report);

}  // namespace hcn
