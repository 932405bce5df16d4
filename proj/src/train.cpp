// SPDX-License-Identifier: Apache-2.0

#include "hcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hcn/metrics.hpp"
#include "hcn/ops.hpp"

namespace hcn {

void LossWeights::validate() const {
    for (double w : {cg, fg, if_, ans})
        if (!(w >= 0) || !std::isfinite(w))
            throw ValidationError("loss weights: every weight must be finite and non-negative");
    if (cg + fg + if_ + ans == 0) throw ValidationError("loss weights: all weights are zero");
}

void SupervisionFlags::validate() const {
    if (!vqa) throw ValidationError("supervision flags: the answer (vqa) is always supervised");
}

std::string SupervisionFlags::label() const {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += "+";
        out += name;
    };
    add(cg, "CG");
    add(fg, "FG");
    add(if_, "IF");
    add(vqa, "VQA");
    return out;
}

double combine_hsm(const PhaseLosses& l, const LossWeights& w, const SupervisionFlags& f) {
    double total = 0;
    if (f.cg) total += w.cg * l.cg;
    if (f.fg) total += w.fg * l.fg;
    if (f.if_) total += w.if_ * l.if_;
    return total;
}

double total_loss(double hsm, double ans, const LossWeights& w) { return hsm + w.ans * ans; }

Var mask_loss(Var pred, const ObjectMask& labels) {
    const bool any = std::find(labels.begin(), labels.end(), true) != labels.end();
    const bool all = std::find(labels.begin(), labels.end(), false) == labels.end();
    if (!any || all) return bce_mean(pred, labels);
    return weighted_bce(pred, labels);
}

HsmLoss hsm_loss(const HsmOutput& preds, const MaskTriple& labels, const LossWeights& w,
                 const SupervisionFlags& flags) {
    const Var cg = mask_loss(preds.m_cg, labels.boi);
    const Var fg = mask_loss(preds.m_fg, labels.ooi);
    const Var inf = mask_loss(preds.m_if, labels.oot);
    HsmLoss out;
    out.values = {cg.value().item(), fg.value().item(), inf.value().item()};
    auto add_term = [&](bool on, Var term, double weight) {
        if (!on) return;
        const Var scaled = scale(term, weight);
        out.total = out.has_terms ? add(out.total, scaled) : scaled;
        out.has_terms = true;
    };
    add_term(flags.cg, cg, w.cg);
    add_term(flags.fg, fg, w.fg);
    add_term(flags.if_, inf, w.if_);
    return out;
}

Var total_loss(Var hsm, Var ans, const LossWeights& w) { return add(hsm, scale(ans, w.ans)); }

std::vector<Example> build_examples(const Dataset& data,
                                    const std::vector<QuestionRecord>& questions) {
    const SceneIndex index = index_scenes(data.scenes);
    std::vector<Example> out;
    out.reserve(questions.size());
    for (const auto& q : questions) {
        auto it = index.find(q.scene_id);
        if (it == index.end())
            throw ValidationError("question " + q.question_id + ": unknown scene '" + q.scene_id + "'");
        const SceneRecord& scene = *it->second;
        Features f = featurize(scene, q, data.featurizer);
        Example ex;
        ex.question_id = q.question_id;
        ex.tokens = std::move(f.tokens);
        ex.text = std::move(f.text);
        ex.masks = generate_labels(scene, q, data.labelgen);
        ex.answers = q.answers;
        for (const auto& a : q.answers)
            if (auto idx = data.vocab.find(a)) ex.gold.push_back(*idx);
        if (!ex.gold.empty()) ex.answer = ex.gold.front();
        out.push_back(std::move(ex));
    }
    return out;
}

Split split_examples(std::vector<Example> examples) {
    Split s;
    for (auto& ex : examples) (is_validation(ex.question_id) ? s.val : s.train).push_back(std::move(ex));
    return s;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) throw ValidationError("train config: lr must be >= 0");
    weights.validate();
    flags.validate();
    model.validate();
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["optimizer"] = to_string(cfg.optimizer);
    j["lr"] = cfg.lr;
    j["seed"] = cfg.seed;
    j["weights"] = {{"cg", cfg.weights.cg}, {"fg", cfg.weights.fg}, {"if", cfg.weights.if_},
                    {"ans", cfg.weights.ans}};
    j["flags"] = {{"cg", cfg.flags.cg}, {"fg", cfg.flags.fg}, {"if", cfg.flags.if_},
                  {"vqa", cfg.flags.vqa}};
    j["model"] = to_json(cfg.model);
    if (cfg.target_em1) j["target_em1"] = *cfg.target_em1;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    try {
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.optimizer = parse_optimizer(j.value("optimizer", std::string("adam")));
        cfg.lr = j.value("lr", cfg.lr);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            cfg.weights.cg = w.value("cg", cfg.weights.cg);
            cfg.weights.fg = w.value("fg", cfg.weights.fg);
            cfg.weights.if_ = w.value("if", cfg.weights.if_);
            cfg.weights.ans = w.value("ans", cfg.weights.ans);
        }
        if (j.contains("flags")) {
            const auto& f = j["flags"];
            cfg.flags.cg = f.value("cg", true);
            cfg.flags.fg = f.value("fg", true);
            cfg.flags.if_ = f.value("if", true);
            cfg.flags.vqa = f.value("vqa", true);
        }
        if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
        if (j.contains("target_em1") && !j["target_em1"].is_null())
            cfg.target_em1 = j["target_em1"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void fit_model_to_data(ModelConfig& cfg, const Dataset& data) {
    cfg.d_obj = data.featurizer.object_width();
    cfg.d_text = data.featurizer.text_width();
    cfg.vocab_size = data.vocab.size();
    cfg.validate();
}

nlohmann::ordered_json to_json(const EpochLog& l) {
    nlohmann::ordered_json j;
    j["epoch"] = l.epoch;
    j["loss_total"] = l.loss_total;
    j["loss_cg"] = l.loss_cg;
    j["loss_fg"] = l.loss_fg;
    j["loss_if"] = l.loss_if;
    j["loss_ans"] = l.loss_ans;
    j["val_em1"] = l.val_em1;
    return j;
}

namespace {

struct ExampleTerms {
    std::optional<Var> loss;
    PhaseLosses phases;
    double ans = 0;
};

ExampleTerms example_terms(const TrainConfig& cfg, const VarMap& params, Tape& tape,
                           const Example& ex) {
    const Var tokens = tape.constant(ex.tokens);
    const Var text = tape.constant(ex.text);
    const ForwardResult fw = forward(cfg.model, params, tokens, text);
    HsmLoss hsm = hsm_loss(fw.hsm, ex.masks, cfg.weights, cfg.flags);
    ExampleTerms terms;
    terms.phases = hsm.values;
    if (hsm.has_terms) terms.loss = hsm.total;
    if (ex.answer) {
        const Var ans = cross_entropy(fw.answer.logits, *ex.answer);
        terms.ans = ans.value().item();
        terms.loss = terms.loss ? total_loss(*terms.loss, ans, cfg.weights) : scale(ans, cfg.weights.ans);
    }
    return terms;
}

}  // namespace

double example_loss(const TrainConfig& cfg, const TensorMap& params, const Example& ex) {
    Tape tape;
    const VarMap vars = bind_params(tape, params, false);
    const auto terms = example_terms(cfg, vars, tape, ex);
    return terms.loss ? terms.loss->value().item() : 0.0;
}

std::vector<std::vector<std::size_t>> rank_answers(const ModelConfig& cfg, const TensorMap& params,
                                                   const std::vector<Example>& examples) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(examples.size());
    Tape tape;
    const VarMap vars = bind_params(tape, params, false);
    for (const auto& ex : examples) {
        const Var logits =
            forward(cfg, vars, tape.constant(ex.tokens), tape.constant(ex.text)).answer.logits;
        out.push_back(rank_logits(logits.value().data()));
    }
    return out;
}

double accuracy_at_1(const ModelConfig& cfg, const TensorMap& params,
                     const std::vector<Example>& examples) {
    if (examples.empty()) return 0.0;
    const auto ranks = rank_answers(cfg, params, examples);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& gold = examples[i].gold;
        if (std::find(gold.begin(), gold.end(), ranks[i].front()) != gold.end()) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

FitResult fit(const TrainConfig& cfg, const std::vector<Example>& train,
              const std::vector<Example>& val) {
    cfg.validate();
    if (train.empty()) throw ValidationError("fit: empty training set");
    TensorMap params = init_params(cfg.model, cfg.seed);
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.lr = cfg.lr;

    FitResult result;
    result.best_params = params;
    result.best_val_em1 = -1;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        EpochLog log;
        log.epoch = epoch;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            const VarMap vars = bind_params(tape, params, true);
            std::optional<Var> batch_loss;
            for (std::size_t k = start; k < stop; ++k) {
                const Example& ex = train[order[k]];
                const ExampleTerms terms = example_terms(cfg, vars, tape, ex);
                if (!terms.loss) continue;
                const double value = terms.loss->value().item();
                if (!std::isfinite(value))
                    throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                                           " on " + ex.question_id);
                log.loss_total += value;
                log.loss_cg += terms.phases.cg;
                log.loss_fg += terms.phases.fg;
                log.loss_if += terms.phases.if_;
                log.loss_ans += terms.ans;
                ++counted;
                batch_loss = batch_loss ? add(*batch_loss, *terms.loss) : *terms.loss;
            }
            if (!batch_loss) continue;
            tape.backward(scale(*batch_loss, 1.0 / static_cast<double>(stop - start)));
            TensorMap grads;
            for (const auto& [name, v] : vars) grads.emplace(name, v.grad());
            optimizer_step(params, grads, opt);
        }
        if (counted) {
            const double n = static_cast<double>(counted);
            log.loss_total /= n;
            log.loss_cg /= n;
            log.loss_fg /= n;
            log.loss_if /= n;
            log.loss_ans /= n;
        }
        log.val_em1 = accuracy_at_1(cfg.model, params, val);
        result.log.push_back(log);
        if (log.val_em1 > result.best_val_em1) {
            result.best_val_em1 = log.val_em1;
            result.best_epoch = epoch;
            result.best_params = params;
        }
        if (cfg.target_em1 && log.val_em1 >= *cfg.target_em1) break;
    }
    result.final_params = std::move(params);
    return result;
}

}  // namespace hcn
