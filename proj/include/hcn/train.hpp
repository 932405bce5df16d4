// SPDX-License-Identifier: Apache-2.0
//
// Loss assembly and the deterministic minibatch training loop.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcn/labelgen.hpp"
#include "hcn/model.hpp"
#include "hcn/synth.hpp"

namespace hcn {

struct LossWeights {
    double cg = 0.2;
    double fg = 0.3;
    double if_ = 0.5;
    double ans = 1.0;

    void validate() const;
};

/// Which intermediate phases receive mask supervision. The answer is always supervised.
struct SupervisionFlags {
    bool cg = true;
    bool fg = true;
    bool if_ = true;
    bool vqa = true;

    static SupervisionFlags answer_only() { return {false, false, false, true}; }
    void validate() const;
    /// e.g. "CG+FG+IF+VQA", "VQA".
    std::string label() const;
    bool operator==(const SupervisionFlags&) const = default;
};

struct PhaseLosses {
    double cg = 0, fg = 0, if_ = 0;
};

/// lambda_cg L_cg + lambda_fg L_fg + lambda_if L_if over enabled phases.
double combine_hsm(const PhaseLosses& losses, const LossWeights& w, const SupervisionFlags& flags);
double total_loss(double hsm, double ans, const LossWeights& w);

/// Class-balanced BCE; falls back to plain mean BCE when one class is empty.
Var mask_loss(Var pred, const ObjectMask& labels);

struct HsmLoss {
    Var total;            ///< null tape when no phase is enabled
    PhaseLosses values;   ///< every phase, enabled or not (for logging)
    bool has_terms = false;
};

/// Disabled phases contribute nothing and get no gradient through this loss.
HsmLoss hsm_loss(const HsmOutput& preds, const MaskTriple& labels, const LossWeights& w,
                 const SupervisionFlags& flags);
Var total_loss(Var hsm, Var ans, const LossWeights& w);

struct Example {
    std::string question_id;
    Tensor tokens;
    Tensor text;
    MaskTriple masks;
    std::optional<std::size_t> answer;  ///< training target: first in-vocab answer
    std::vector<std::size_t> gold;      ///< every in-vocab answer index
    std::vector<std::string> answers;
};

/// Featurizes and labels `questions` against the dataset's scenes.
std::vector<Example> build_examples(const Dataset& data, const std::vector<QuestionRecord>& questions);

struct Split {
    std::vector<Example> train;
    std::vector<Example> val;
};
Split split_examples(std::vector<Example> examples);

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 3e-3;
    std::uint64_t seed = 0;
    LossWeights weights;
    SupervisionFlags flags;
    ModelConfig model;
    /// Stop once validation EM@1 reaches this value.
    std::optional<double> target_em1;

    void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Sets the data-dependent model widths (token widths, vocabulary size).
void fit_model_to_data(ModelConfig& cfg, const Dataset& data);

struct EpochLog {
    std::size_t epoch = 0;
    double loss_total = 0;
    double loss_cg = 0;
    double loss_fg = 0;
    double loss_if = 0;
    double loss_ans = 0;
    double val_em1 = 0;
};

nlohmann::ordered_json to_json(const EpochLog& log);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitResult {
    TensorMap best_params;   ///< state at the best validation EM@1
    TensorMap final_params;
    std::vector<EpochLog> log;
    double best_val_em1 = 0;
    std::size_t best_epoch = 0;
};

FitResult fit(const TrainConfig& cfg, const std::vector<Example>& train,
              const std::vector<Example>& val);

/// Loss of one example under the configured weights (no parameter update).
double example_loss(const TrainConfig& cfg, const TensorMap& params, const Example& ex);

/// Vocabulary indices best-first per example.
std::vector<std::vector<std::size_t>> rank_answers(const ModelConfig& cfg, const TensorMap& params,
                                                   const std::vector<Example>& examples);
/// Fraction of examples whose top-ranked index is a gold index.
double accuracy_at_1(const ModelConfig& cfg, const TensorMap& params,
                     const std::vector<Example>& examples);

}  // namespace hcn
