// SPDX-License-Identifier: Apache-2.0
//
// Answer metrics: EM@k, BLEU-n and ROUGE-L over canonicalized strings.

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hcn {

/// Lowercase, punctuation replaced by spaces, whitespace collapsed and trimmed.
std::string canonicalize(const std::string& text);
/// Whitespace split of the canonical form.
std::vector<std::string> tokenize(const std::string& text);

/// Indices sorted by descending logit; equal logits keep ascending index order.
std::vector<std::size_t> rank_logits(std::span<const double> logits);

/// True iff any gold answer equals one of the first k ranked answers after
/// canonicalization. Throws std::invalid_argument when k < 1.
bool em_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& gold,
             std::size_t k);

struct TextScore {
    double score = 0;
    bool empty_candidate = false;
};

/// Corpus BLEU with clipped n-gram precision, uniform weights over orders
/// 1..n and brevity penalty against the closest reference length (ties to the
/// shorter). A single candidate gives sentence BLEU. No smoothing.
TextScore corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                      const std::vector<std::vector<std::vector<std::string>>>& references, int n);
TextScore bleu_n(const std::vector<std::string>& candidate,
                 const std::vector<std::vector<std::string>>& references, int n);

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure with beta = 1.2, best over references.
TextScore rouge_l(const std::vector<std::string>& candidate,
                  const std::vector<std::vector<std::string>>& references);

struct MetricsReport {
    double em1 = 0;
    double em10 = 0;
    std::map<int, double> bleu;  ///< order -> corpus BLEU
    double rouge_l = 0;          ///< mean over questions
    std::size_t count = 0;
    std::size_t empty_candidates = 0;
};

/// `ranked[i]` holds the answer strings for question i best-first;
/// `gold[i]` its accepted answers. The top-1 string is the text candidate.
MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& ranked,
                              const std::vector<std::vector<std::string>>& gold);

/// Scores scaled by 100, as in the usual leaderboard tables.
nlohmann::ordered_json to_json(const MetricsReport& report);

}  // namespace hcn
