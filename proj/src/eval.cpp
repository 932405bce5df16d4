// SPDX-License-Identifier: Apache-2.0

#include "hcn/eval.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace hcn {

double improvement_ratio(double score_none, double score_objectids, double score_mask) {
    const double denom = score_objectids - score_none;
    if (denom == 0) throw std::domain_error("improvement_ratio: object-id score equals baseline score");
    return (score_mask - score_none) / denom;
}

MetricsReport evaluate(const ModelConfig& cfg, const TensorMap& params, const AnswerVocab& vocab,
                       const std::vector<Example>& examples) {
    const auto ranks = rank_answers(cfg, params, examples);
    std::vector<std::vector<std::string>> ranked, gold;
    ranked.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        std::vector<std::string> names;
        names.reserve(ranks[i].size());
        for (std::size_t idx : ranks[i]) names.push_back(vocab.at(idx));
        ranked.push_back(std::move(names));
        gold.push_back(examples[i].answers);
    }
    return compute_metrics(ranked, gold);
}

void PerturbationLexicon::validate() const {
    for (const auto& [key, syns] : entries) {
        if (key.empty()) throw ValidationError("lexicon: empty key");
        if (syns.empty()) throw ValidationError("lexicon: '" + key + "' has no synonyms");
        for (const auto& s : syns) {
            if (s.empty()) throw ValidationError("lexicon: '" + key + "' has an empty synonym");
            if (to_lower(s) == key) throw ValidationError("lexicon: '" + key + "' lists itself as a synonym");
        }
    }
}

PerturbationLexicon lexicon_from_json(const nlohmann::json& j, std::uint64_t seed) {
    if (!j.is_object()) throw ParseError("lexicon: expected a JSON object");
    PerturbationLexicon lex;
    lex.seed = seed;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_array()) throw ParseError("lexicon: '" + key + "' must map to an array");
        std::vector<std::string> syns;
        for (const auto& s : value) {
            if (!s.is_string()) throw ParseError("lexicon: '" + key + "' synonyms must be strings");
            syns.push_back(s.get<std::string>());
        }
        lex.entries[to_lower(key)] = std::move(syns);
    }
    lex.validate();
    return lex;
}

nlohmann::ordered_json to_json(const PerturbationLexicon& lex) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [key, syns] : lex.entries) j[key] = syns;
    return j;
}

PerturbationLexicon load_lexicon(const std::filesystem::path& path, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ValidationError("lexicon: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("lexicon " + path.string() + ": " + e.what());
    }
    return lexicon_from_json(j, seed);
}

QuestionRecord perturb_question(const QuestionRecord& q, const PerturbationLexicon& lex) {
    QuestionRecord out = q;
    if (lex.empty()) return out;
    std::mt19937_64 rng(mix_seed(lex.seed, q.question_id));
    const std::string& text = q.question;
    std::string result;
    result.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (!std::isalnum(static_cast<unsigned char>(text[i]))) {
            result.push_back(text[i++]);
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
        const std::string word = text.substr(i, j - i);
        auto it = lex.entries.find(to_lower(word));
        if (it == lex.entries.end()) {
            result += word;
        } else {
            result += it->second[rng() % it->second.size()];
        }
        i = j;
    }
    out.question = std::move(result);
    return out;
}

std::vector<QuestionRecord> perturb_questions(const std::vector<QuestionRecord>& questions,
                                              const PerturbationLexicon& lex) {
    lex.validate();
    std::vector<QuestionRecord> out;
    out.reserve(questions.size());
    for (const auto& q : questions) out.push_back(perturb_question(q, lex));
    return out;
}

ShortcutReport shortcut_degradation(const ModelConfig& cfg, const TensorMap& params,
                                    const Dataset& data, const std::vector<QuestionRecord>& questions,
                                    const PerturbationLexicon& lex) {
    const auto perturbed = perturb_questions(questions, lex);
    ShortcutReport r;
    r.count = questions.size();
    for (std::size_t i = 0; i < questions.size(); ++i)
        if (perturbed[i].question != questions[i].question) ++r.perturbed;
    r.em1_before = accuracy_at_1(cfg, params, build_examples(data, questions));
    r.em1_after = accuracy_at_1(cfg, params, build_examples(data, perturbed));
    r.delta = r.em1_before - r.em1_after;
    return r;
}

nlohmann::ordered_json to_json(const ShortcutReport& r) {
    nlohmann::ordered_json j;
    j["em1_before"] = r.em1_before;
    j["em1_after"] = r.em1_after;
    j["delta"] = r.delta;
    j["count"] = r.count;
    j["perturbed"] = r.perturbed;
    return j;
}

std::vector<SupervisionFlags> standard_ablation_rows() {
    return {SupervisionFlags::answer_only(),
            {true, true, false, true},
            {true, false, true, true},
            {false, true, true, true},
            {true, true, true, true}};
}

std::vector<SupervisionFlags> ablation_rows_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ParseError("ablation rows: expected a JSON array");
    std::vector<SupervisionFlags> rows;
    try {
        for (const auto& r : j) {
            SupervisionFlags f;
            f.cg = r.value("cg", false);
            f.fg = r.value("fg", false);
            f.if_ = r.value("if", false);
            f.vqa = r.value("vqa", true);
            f.validate();
            rows.push_back(f);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("ablation rows: ") + e.what());
    }
    if (rows.empty()) throw ValidationError("ablation rows: no rows given");
    return rows;
}

AblationTable run_ablation(const TrainConfig& base, const Dataset& data,
                           const std::vector<SupervisionFlags>& rows) {
    for (const auto& f : rows) f.validate();
    const Split split = split_examples(build_examples(data, data.questions));
    AblationTable table;
    for (const auto& flags : rows) {
        TrainConfig cfg = base;
        cfg.flags = flags;
        const FitResult fr = fit(cfg, split.train, split.val);
        AblationRow row;
        row.flags = flags;
        row.metrics = evaluate(cfg.model, fr.best_params, data.vocab, split.val);
        row.best_val_em1 = fr.best_val_em1;
        row.best_epoch = fr.best_epoch;
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string AblationTable::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "supervision,cg,fg,if,vqa,em1,em10,bleu1,bleu2,bleu3,bleu4,rouge_l,best_epoch\n";
    for (const auto& r : rows) {
        os << r.flags.label() << ',' << r.flags.cg << ',' << r.flags.fg << ',' << r.flags.if_ << ','
           << r.flags.vqa << ',' << 100 * r.metrics.em1 << ',' << 100 * r.metrics.em10;
        for (int n = 1; n <= 4; ++n) {
            auto it = r.metrics.bleu.find(n);
            os << ',' << 100 * (it == r.metrics.bleu.end() ? 0.0 : it->second);
        }
        os << ',' << 100 * r.metrics.rouge_l << ',' << r.best_epoch << '\n';
    }
    return os.str();
}

nlohmann::ordered_json AblationTable::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["supervision"] = r.flags.label();
        row["cg"] = r.flags.cg;
        row["fg"] = r.flags.fg;
        row["if"] = r.flags.if_;
        row["vqa"] = r.flags.vqa;
        row["metrics"] = hcn::to_json(r.metrics);
        row["best_epoch"] = r.best_epoch;
        j.push_back(std::move(row));
    }
    return j;
}

}  // namespace hcn
