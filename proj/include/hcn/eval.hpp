// SPDX-License-Identifier: Apache-2.0
//
// Evaluation workflows: scoring a trained model, the improvement ratio,
// synonym perturbation, the shortcut probe and supervision ablations.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcn/metrics.hpp"
#include "hcn/train.hpp"

namespace hcn {

/// (mask - none) / (objectids - none). Throws std::domain_error when
/// objectids == none.
double improvement_ratio(double score_none, double score_objectids, double score_mask);

/// Ranks the vocabulary for each example and scores against its answers.
MetricsReport evaluate(const ModelConfig& cfg, const TensorMap& params, const AnswerVocab& vocab,
                       const std::vector<Example>& examples);

struct PerturbationLexicon {
    std::map<std::string, std::vector<std::string>> entries;  ///< lowercase key -> synonyms
    std::uint64_t seed = 0;

    void validate() const;
    bool empty() const { return entries.empty(); }
};

PerturbationLexicon lexicon_from_json(const nlohmann::json& j, std::uint64_t seed);
nlohmann::ordered_json to_json(const PerturbationLexicon& lex);
PerturbationLexicon load_lexicon(const std::filesystem::path& path, std::uint64_t seed);

/// Replaces every whole-word occurrence of a lexicon key (case-insensitive)
/// by a synonym drawn from a stream seeded by (lexicon seed, question id).
QuestionRecord perturb_question(const QuestionRecord& q, const PerturbationLexicon& lex);
std::vector<QuestionRecord> perturb_questions(const std::vector<QuestionRecord>& questions,
                                              const PerturbationLexicon& lex);

struct ShortcutReport {
    double em1_before = 0;
    double em1_after = 0;
    double delta = 0;
    std::size_t count = 0;
    std::size_t perturbed = 0;  ///< questions whose text changed
};

ShortcutReport shortcut_degradation(const ModelConfig& cfg, const TensorMap& params,
                                    const Dataset& data, const std::vector<QuestionRecord>& questions,
                                    const PerturbationLexicon& lex);
nlohmann::ordered_json to_json(const ShortcutReport& r);

struct AblationRow {
    SupervisionFlags flags;
    MetricsReport metrics;
    double best_val_em1 = 0;
    std::size_t best_epoch = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    std::string to_csv() const;
    nlohmann::ordered_json to_json() const;
};

/// VQA only, CG+FG, CG+IF, FG+IF, all.
std::vector<SupervisionFlags> standard_ablation_rows();
std::vector<SupervisionFlags> ablation_rows_from_json(const nlohmann::json& j);

/// Trains one model per row from the same seed and data; metrics are on the
/// validation split using the best checkpoint.
AblationTable run_ablation(const TrainConfig& base, const Dataset& data,
                           const std::vector<SupervisionFlags>& rows);

}  // namespace hcn
