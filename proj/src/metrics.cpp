// SPDX-License-Identifier: Apache-2.0

#include "hcn/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace hcn {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<Ngram, std::size_t> counts;
    const auto len = static_cast<int>(tokens.size());
    for (int i = 0; i + n <= len; ++i) ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
    return counts;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::string canonicalize(const std::string& text) {
    std::string out;
    bool space = false;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            if (space && !out.empty()) out.push_back(' ');
            space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            space = true;
        }
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::istringstream is(canonicalize(text));
    std::vector<std::string> tokens;
    for (std::string t; is >> t;) tokens.push_back(t);
    return tokens;
}

std::vector<std::size_t> rank_logits(std::span<const double> logits) {
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    return order;
}

bool em_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& gold,
             std::size_t k) {
    if (k < 1) throw std::invalid_argument("em_at_k: k must be >= 1");
    const std::size_t limit = std::min(k, ranked.size());
    for (std::size_t i = 0; i < limit; ++i) {
        const std::string cand = canonicalize(ranked[i]);
        for (const auto& g : gold)
            if (canonicalize(g) == cand) return true;
    }
    return false;
}

TextScore corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                      const std::vector<std::vector<std::vector<std::string>>>& references, int n) {
    if (n < 1) throw std::invalid_argument("bleu: order must be >= 1");
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu: candidate/reference count mismatch");
    TextScore result;
    std::vector<double> matched(n, 0), total(n, 0);
    double cand_len = 0, ref_len = 0;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        const auto& cand = candidates[s];
        const auto& refs = references[s];
        if (cand.empty()) result.empty_candidate = true;
        cand_len += static_cast<double>(cand.size());
        // Closest reference length, ties broken towards the shorter one.
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (const auto& r : refs) {
            const auto diff = [&](std::size_t len) {
                return len > cand.size() ? len - cand.size() : cand.size() - len;
            };
            if (best == std::numeric_limits<std::size_t>::max() || diff(r.size()) < diff(best) ||
                (diff(r.size()) == diff(best) && r.size() < best))
                best = r.size();
        }
        if (best != std::numeric_limits<std::size_t>::max()) ref_len += static_cast<double>(best);
        for (int order = 1; order <= n; ++order) {
            const auto counts = ngram_counts(cand, order);
            std::map<Ngram, std::size_t> max_ref;
            for (const auto& r : refs)
                for (const auto& [g, c] : ngram_counts(r, order))
                    max_ref[g] = std::max(max_ref[g], c);
            for (const auto& [g, c] : counts) {
                total[order - 1] += static_cast<double>(c);
                auto it = max_ref.find(g);
                if (it != max_ref.end()) matched[order - 1] += static_cast<double>(std::min(c, it->second));
            }
        }
    }
    if (cand_len == 0) {
        result.empty_candidate = true;
        return result;
    }
    double log_sum = 0;
    for (int k = 0; k < n; ++k) {
        if (matched[k] == 0 || total[k] == 0) return result;
        log_sum += std::log(matched[k] / total[k]);
    }
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    result.score = bp * std::exp(log_sum / n);
    return result;
}

TextScore bleu_n(const std::vector<std::string>& candidate,
                 const std::vector<std::vector<std::string>>& references, int n) {
    return corpus_bleu({candidate}, {references}, n);
}

TextScore rouge_l(const std::vector<std::string>& candidate,
                  const std::vector<std::vector<std::string>>& references) {
    TextScore result;
    if (candidate.empty()) {
        result.empty_candidate = true;
        return result;
    }
    const double beta2 = kRougeBeta * kRougeBeta;
    for (const auto& ref : references) {
        if (ref.empty()) continue;
        const double lcs = static_cast<double>(lcs_length(candidate, ref));
        if (lcs == 0) continue;
        const double p = lcs / static_cast<double>(candidate.size());
        const double r = lcs / static_cast<double>(ref.size());
        result.score = std::max(result.score, (1 + beta2) * p * r / (r + beta2 * p));
    }
    return result;
}

MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& ranked,
                              const std::vector<std::vector<std::string>>& gold) {
    if (ranked.size() != gold.size())
        throw std::invalid_argument("compute_metrics: prediction/gold count mismatch");
    MetricsReport rep;
    rep.count = ranked.size();
    if (ranked.empty()) return rep;
    std::vector<std::vector<std::string>> cands;
    std::vector<std::vector<std::vector<std::string>>> refs;
    double em1 = 0, em10 = 0, rouge = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        em1 += em_at_k(ranked[i], gold[i], 1);
        em10 += em_at_k(ranked[i], gold[i], 10);
        cands.push_back(ranked[i].empty() ? std::vector<std::string>{} : tokenize(ranked[i][0]));
        if (cands.back().empty()) ++rep.empty_candidates;
        std::vector<std::vector<std::string>> r;
        for (const auto& g : gold[i]) r.push_back(tokenize(g));
        rouge += rouge_l(cands.back(), r).score;
        refs.push_back(std::move(r));
    }
    const double n = static_cast<double>(ranked.size());
    rep.em1 = em1 / n;
    rep.em10 = em10 / n;
    rep.rouge_l = rouge / n;
    for (int order = 1; order <= 4; ++order) rep.bleu[order] = corpus_bleu(cands, refs, order).score;
    return rep;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["em1"] = 100 * r.em1;
    j["em10"] = 100 * r.em10;
    for (const auto& [order, score] : r.bleu) j["bleu" + std::to_string(order)] = 100 * score;
    j["rouge_l"] = 100 * r.rouge_l;
    j["count"] = r.count;
    j["empty_candidates"] = r.empty_candidates;
    return j;
}

}  // namespace hcn
