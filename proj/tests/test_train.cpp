// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hcn/ops.hpp"
#include "hcn/train.hpp"
#include "support.hpp"

using namespace hcn;

namespace {

SyntheticSpec tiny_spec(std::size_t scenes = 30) {
    SyntheticSpec s;
    s.n_scenes = scenes;
    return s;
}

TrainConfig config_for(const Dataset& data, std::size_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.model.d_base = 16;
    cfg.model.d_phase = 16;
    cfg.model.d_hidden = 32;
    fit_model_to_data(cfg.model, data);
    return cfg;
}

MaskTriple fixed_masks(std::size_t n) {
    MaskTriple m;
    for (std::size_t i = 0; i < n; ++i) {
        m.boi.push_back(i < 3);
        m.ooi.push_back(i < 2);
        m.oot.push_back(i == 0);
    }
    return m;
}

}  // namespace

TEST_CASE("loss weights combine phase losses linearly") {
    const LossWeights w;
    CHECK(combine_hsm({1, 1, 1}, w, {}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(combine_hsm({1, 1, 1}, w, {true, false, false, true}) == doctest::Approx(0.2).epsilon(1e-15));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 5);
    for (int i = 0; i < 50; ++i) {
        const PhaseLosses l{u(rng), u(rng), u(rng)};
        const LossWeights r{u(rng), u(rng), u(rng), 1.0};
        CHECK(combine_hsm(l, r, {}) == doctest::Approx(r.cg * l.cg + r.fg * l.fg + r.if_ * l.if_).epsilon(1e-14));
        const double x = u(rng);
        CHECK(total_loss(x, l.cg, r) == doctest::Approx(x + l.cg).epsilon(1e-15));
    }
    CHECK(total_loss(1.0, 1.0, w) == 2.0);
    CHECK(total_loss(0.0, 3.5, LossWeights{0.2, 0.3, 0.5, 2.0}) == 7.0);
}

TEST_CASE("configuration validation") {
    CHECK_THROWS_AS((LossWeights{0, 0, 0, 0}.validate()), ValidationError);
    CHECK_THROWS_AS((LossWeights{-1, 0, 0, 1}.validate()), ValidationError);
    CHECK_THROWS_AS((SupervisionFlags{true, true, true, false}.validate()), ValidationError);
    CHECK(SupervisionFlags{}.label() == "CG+FG+IF+VQA");
    CHECK(SupervisionFlags::answer_only().label() == "VQA");
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    TrainConfig c2;
    c2.epochs = 7;
    c2.flags = {true, false, true, true};
    c2.target_em1 = 0.9;
    const TrainConfig back = train_config_from_json(nlohmann::json::parse(to_json(c2).dump()));
    CHECK(to_json(back) == to_json(c2));
}

TEST_CASE("hsm loss graph matches the scalar combination") {
    Tape t;
    const Var cg = t.constant(Tensor::vector({0.9, 0.2, 0.6, 0.1}));
    const Var fg = t.constant(Tensor::vector({0.7, 0.6, 0.3, 0.2}));
    const Var inf = t.constant(Tensor::vector({0.8, 0.1, 0.3, 0.4}));
    const HsmOutput preds{{}, {}, {}, cg, fg, inf};
    const MaskTriple m = fixed_masks(4);
    const HsmLoss l = hsm_loss(preds, m, {}, {});
    CHECK(l.has_terms);
    CHECK(l.total.value().item() == doctest::Approx(combine_hsm(l.values, {}, {})).epsilon(1e-14));
    CHECK(l.values.cg == doctest::Approx(weighted_bce(cg, m.boi).value().item()).epsilon(1e-15));
    CHECK_FALSE(hsm_loss(preds, m, {}, SupervisionFlags::answer_only()).has_terms);
}

TEST_CASE("mask loss falls back to mean bce for one-class labels") {
    Tape t;
    const Var p = t.constant(Tensor::vector({0.3, 0.6}));
    CHECK(mask_loss(p, {true, true}).value().item() == bce_mean(p, {true, true}).value().item());
    CHECK(mask_loss(p, {true, false}).value().item() == weighted_bce(p, {true, false}).value().item());
}

TEST_CASE("disabled coarse supervision leaves the coarse head without gradient") {
    ModelConfig cfg;
    cfg.d_obj = 5;
    cfg.d_text = 4;
    cfg.vocab_size = 3;
    const TensorMap params = init_params(cfg, 1);
    std::mt19937_64 rng(0);
    std::normal_distribution<double> g;
    Tensor tokens(Shape{6, 5}), text(Shape{2, 4});
    for (auto& v : tokens.data()) v = g(rng);
    for (auto& v : text.data()) v = g(rng);

    Tape t;
    const VarMap v = bind_params(t, params, true);
    const ForwardResult fw = forward(cfg, v, t.constant(tokens), t.constant(text));
    const SupervisionFlags flags{false, true, true, true};
    const HsmLoss h = hsm_loss(fw.hsm, fixed_masks(6), {}, flags);
    t.backward(total_loss(h.total, cross_entropy(fw.answer.logits, 1), {}));
    for (const char* name : {"hsm.cg.head.weight", "hsm.cg.head.bias"})
        for (double x : v.at(name).grad().values()) CHECK(x == 0.0);
    double fg_head = 0;
    for (double x : v.at("hsm.fg.head.weight").grad().values()) fg_head += std::abs(x);
    CHECK(fg_head > 0);
}

TEST_CASE("synthetic generation is deterministic and follows the templates") {
    const Dataset a = make_synthetic_dataset(tiny_spec());
    const Dataset b = make_synthetic_dataset(tiny_spec());
    REQUIRE(a.scenes.size() == 30);
    for (std::size_t i = 0; i < a.scenes.size(); ++i)
        CHECK(scene_to_json_text(a.scenes[i]) == scene_to_json_text(b.scenes[i]));
    REQUIRE(a.questions.size() == b.questions.size());
    for (std::size_t i = 0; i < a.questions.size(); ++i)
        CHECK(question_to_json_text(a.questions[i]) == question_to_json_text(b.questions[i]));
    CHECK(a.vocab.answers() == b.vocab.answers());

    const auto index = index_scenes(a.scenes);
    for (const auto& q : a.questions) {
        const SceneRecord& s = *index.at(q.scene_id);
        CHECK_NOTHROW(validate_question_against(q, s));
        REQUIRE(q.anchor_ids.has_value());
        const auto& t = s.objects[*s.object_index(*q.target_ids.begin())];
        const auto& an = s.objects[*s.object_index(*q.anchor_ids->begin())];
        CHECK(q.question.find("the " + an.label) != std::string::npos);
        if (q.question.starts_with("what color")) CHECK(q.answers[0] == t.attributes.at("color"));
        if (q.question.starts_with("what is next")) CHECK(q.answers[0] == t.label);
    }
}

TEST_CASE("template instance by hand") {
    SceneRecord s;
    s.scene_id = "hand";
    s.objects = {{1, "chair", {{"color", "red"}, {"shape", "square"}}}, {2, "table", {{"color", "brown"}, {"shape", "round"}}}};
    s.points = {{1, 1, 0}, {1.5, 1, 0}};
    s.point_object_ids = {1, 2};
    const auto q = make_template_question(s, 1, 2, "color", "h0");
    CHECK(q.question == "what color is the chair next to the table?");
    CHECK(q.answers == std::vector<std::string>{"red"});
    CHECK(q.target_ids == std::set<ObjectId>{1});
    CHECK(*q.anchor_ids == std::set<ObjectId>{2});
    CHECK(make_template_question(s, 1, 2, "next_to", "h1").answers[0] == "chair");
    CHECK_THROWS_AS(make_template_question(s, 1, 2, "count", "h2"), ValidationError);
}

TEST_CASE("bait at rate one rewrites every matching colour question") {
    SyntheticSpec spec = tiny_spec(60);
    spec.shortcut_bait = ShortcutBait{"chair", "table", "purple", 1.0, 0.5};
    const Dataset d = make_synthetic_dataset(spec);
    std::size_t bait = 0;
    for (const auto& q : d.questions)
        if (q.question == "what color is the chair next to the table?") {
            ++bait;
            CHECK(q.answers[0] == "purple");
        }
    CHECK(bait > 10);
    SyntheticSpec broken = spec;
    broken.shortcut_bait->rate = 1.5;
    CHECK_THROWS_AS(broken.validate(), ValidationError);
}

TEST_CASE("dataset save and load round trip") {
    const Dataset a = make_synthetic_dataset(tiny_spec(5));
    const auto dir = std::filesystem::temp_directory_path() / "hcn_test_dataset";
    std::filesystem::remove_all(dir);
    save_dataset(a, dir);
    const Dataset b = load_dataset(dir);
    CHECK(b.scenes == a.scenes);
    CHECK(b.questions == a.questions);
    CHECK(b.vocab.answers() == a.vocab.answers());
    CHECK(to_json(b.featurizer) == to_json(a.featurizer));
}

TEST_CASE("featurizer aliases keep grounding features and change the text") {
    SyntheticSpec spec = tiny_spec(20);
    spec.featurizer.aliases["desk"] = "table";
    const Dataset d = make_synthetic_dataset(spec);
    const auto index = index_scenes(d.scenes);
    bool checked = false;
    for (const auto& q : d.questions) {
        if (q.question.find("table") == std::string::npos) continue;
        QuestionRecord swapped = q;
        swapped.question.replace(swapped.question.find("table"), 5, "desk");
        const SceneRecord& s = *index.at(q.scene_id);
        const Features a = featurize(s, q, d.featurizer);
        const Features b = featurize(s, swapped, d.featurizer);
        const std::size_t dw = d.featurizer.d_word;
        for (std::size_t i = 0; i < a.tokens.rows(); ++i)
            for (std::size_t j = 0; j < 5 + 3 * dw; ++j) CHECK(a.tokens.at(i, j) == b.tokens.at(i, j));
        CHECK(a.text != b.text);
        checked = true;
        break;
    }
    CHECK(checked);
}

TEST_CASE("validation split is a stable tenth") {
    std::size_t val = 0;
    for (int i = 0; i < 5000; ++i) val += is_validation("q" + std::to_string(i));
    CHECK(val > 400);
    CHECK(val < 600);
    CHECK(is_validation("scene0001_q0") == is_validation("scene0001_q0"));
}

TEST_CASE("fit with zero learning rate leaves parameters untouched") {
    const Dataset d = make_synthetic_dataset(tiny_spec(10));
    const Split s = split_examples(build_examples(d, d.questions));
    TrainConfig cfg = config_for(d, 3);
    cfg.lr = 0;
    const FitResult r = fit(cfg, s.train, s.val);
    CHECK(r.final_params == init_params(cfg.model, cfg.seed));
    CHECK(r.log.size() == 3);
}

TEST_CASE("a single example is memorised") {
    const Dataset d = make_synthetic_dataset(tiny_spec(3));
    auto examples = build_examples(d, {d.questions[0]});
    TrainConfig cfg = config_for(d, 150);
    cfg.batch_size = 1;
    const FitResult r = fit(cfg, examples, examples);
    CHECK(r.log.back().loss_total < 1e-2);
    CHECK(example_loss(cfg, r.final_params, examples[0]) < 1e-2);
    CHECK(accuracy_at_1(cfg.model, r.final_params, examples) == 1.0);
}

TEST_CASE("training is reproducible") {
    const Dataset d = make_synthetic_dataset(tiny_spec(15));
    const Split s = split_examples(build_examples(d, d.questions));
    const TrainConfig cfg = config_for(d, 4);
    const FitResult a = fit(cfg, s.train, s.val);
    const FitResult b = fit(cfg, s.train, s.val);
    CHECK(a.final_params == b.final_params);
    CHECK(a.best_params == b.best_params);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(to_json(a.log[i]).dump() == to_json(b.log[i]).dump());
}

TEST_CASE("non-finite loss aborts training") {
    const Dataset d = make_synthetic_dataset(tiny_spec(3));
    auto examples = build_examples(d, d.questions);
    examples[0].tokens.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const TrainConfig cfg = config_for(d, 1);
    CHECK_THROWS_AS(fit(cfg, examples, {}), TrainingDiverged);
}

TEST_CASE("training loss mostly decreases over the first epochs") {
    const Dataset d = make_synthetic_dataset(SyntheticSpec{});
    const Split s = split_examples(build_examples(d, d.questions));
    TrainConfig cfg;
    cfg.epochs = 11;
    fit_model_to_data(cfg.model, d);
    const FitResult r = fit(cfg, s.train, s.val);
    int down = 0;
    for (std::size_t e = 1; e < r.log.size(); ++e) down += r.log[e].loss_total <= r.log[e - 1].loss_total;
    CHECK(down >= 8);
}
