// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <random>

#include "hcn/labelgen.hpp"
#include "support.hpp"

using namespace hcn;

namespace {

// Adds `n` points of object `id` scattered around (x, y).
void blob(SceneRecord& s, ObjectId id, const std::string& label, double x, double y, int n = 4) {
    s.objects.push_back({id, label, {}});
    for (int i = 0; i < n; ++i) {
        s.points.push_back({x + 0.05 * i, y + 0.03 * i, 0.0});
        s.point_object_ids.push_back(id);
    }
}

// Corner markers fix the bbox to [0,10] x [0,10].
void corners(SceneRecord& s) {
    for (auto [x, y] : {std::pair{0.0, 0.0}, {10.0, 10.0}, {0.0, 10.0}, {10.0, 0.0}}) {
        s.points.push_back({x, y, 0.0});
        s.point_object_ids.push_back(kBackgroundId);
    }
}

QuestionRecord question(std::string text, std::set<ObjectId> targets,
                        std::optional<std::set<ObjectId>> anchors = std::nullopt) {
    return {"q", "s", std::move(text), {"x"}, std::move(targets), std::move(anchors)};
}

std::vector<bool> mask_of(const SceneRecord& s, std::set<ObjectId> ids) {
    std::vector<bool> m;
    for (const auto& o : s.objects) m.push_back(ids.count(o.id) > 0);
    return m;
}

}  // namespace

TEST_CASE("cell assignment conventions") {
    const BBox2 box{0, 10, 0, 10};
    CHECK(cell_of_point(2, 2, box, 2) == CellIndex{0, 0});
    CHECK(cell_of_point(10, 10, box, 2) == CellIndex{1, 1});
    CHECK(cell_of_point(5, 5, box, 2) == CellIndex{1, 1});
    CHECK(cell_of_point(9.9, 0.1, box, 2) == CellIndex{0, 1});
    CHECK(cell_of_point(3, 3, BBox2{3, 3, 0, 10}, 4) == CellIndex{1, 0});
}

TEST_CASE("anchor extraction by label matching") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);
    blob(s, 2, "table", 2, 2);
    blob(s, 3, "sofa", 8, 8);
    LabelGenConfig cfg;
    cfg.anchor_source = AnchorSource::label_match;

    CHECK(extract_anchors(question("what is next to the table?", {1}), s, cfg) == std::set<ObjectId>{2});
    CHECK(extract_anchors(question("what color are the tables?", {1}), s, cfg) == std::set<ObjectId>{2});
    CHECK(extract_anchors(question("what color is the chair?", {1}), s, cfg).empty());
    CHECK(extract_anchors(question("is the TABLE near a Sofa?", {1}), s, cfg) == std::set<ObjectId>{2, 3});
    CHECK(extract_anchors(question("the tablecloth is red", {1}), s, cfg).empty());
}

TEST_CASE("anchor source modes") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);
    blob(s, 2, "table", 2, 2);
    blob(s, 3, "sofa", 8, 8);
    const auto q = question("what is next to the table?", {1}, std::set<ObjectId>{3});
    LabelGenConfig cfg;
    cfg.anchor_source = AnchorSource::annotation;
    CHECK(extract_anchors(q, s, cfg) == std::set<ObjectId>{3});
    cfg.anchor_source = AnchorSource::both;
    CHECK(extract_anchors(q, s, cfg) == std::set<ObjectId>{2, 3});
    cfg.anchor_source = AnchorSource::automatic;
    CHECK(extract_anchors(q, s, cfg) == std::set<ObjectId>{3});
    CHECK(extract_anchors(question("what is next to the table?", {1}), s, cfg) == std::set<ObjectId>{2});
    CHECK(parse_anchor_source("union") == AnchorSource::both);
    CHECK_THROWS_AS(parse_anchor_source("psychic"), ValidationError);
}

TEST_CASE("isolated target collapses all three masks") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);
    blob(s, 2, "table", 7, 7);
    corners(s);
    const auto m = generate_labels(s, question("what color is the chair?", {1}, std::set<ObjectId>{}), {});
    CHECK(m.boi == mask_of(s, {1}));
    CHECK(m.ooi == mask_of(s, {1}));
    CHECK(m.oot == mask_of(s, {1}));
    CHECK(m.boi_cells.size() == 1);
}

TEST_CASE("bystander sharing the anchor's cell joins the block of interest") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);      // cell (0,0) at S=5
    blob(s, 2, "table", 5.1, 5.1);  // cell (2,2)
    blob(s, 3, "lamp", 5.5, 5.5);   // also (2,2)
    blob(s, 4, "bed", 9, 1);        // far away
    corners(s);
    const auto m = generate_labels(s, question("what color is the chair next to the table?", {1}), {});
    CHECK(m.oot == mask_of(s, {1}));
    CHECK(m.ooi == mask_of(s, {1, 2}));
    CHECK(m.boi == mask_of(s, {1, 2, 3}));
    CHECK(m.boi == oracle::boi_oracle(s, {1}, {2}, 5));
}

TEST_CASE("grid size one selects every object that owns a point") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto c = oracle::random_case(rng);
        LabelGenConfig cfg;
        cfg.grid_size = 1;
        const auto boi = compute_boi(c.scene, c.targets, c.anchors, cfg);
        CHECK(std::all_of(boi.mask.begin(), boi.mask.end(), [](bool b) { return b; }));
    }
}

TEST_CASE("ooi and oot match set membership") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        const auto c = oracle::random_case(rng);
        std::set<ObjectId> both = c.targets;
        both.insert(c.anchors.begin(), c.anchors.end());
        CHECK(compute_ooi(c.scene, c.targets, c.anchors) == mask_of(c.scene, both));
        CHECK(compute_oot(c.scene, c.targets) == mask_of(c.scene, c.targets));
        CHECK(compute_ooi(c.scene, c.targets, {}) == compute_oot(c.scene, c.targets));
    }
}

TEST_CASE("unknown ids are validation errors") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);
    CHECK_THROWS_AS(compute_oot(s, {42}), ValidationError);
    CHECK_THROWS_AS(compute_boi(s, {1}, {42}, {}), ValidationError);
}

TEST_CASE("masks are invariant under positive affine maps of the cloud") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 100; ++i) {
        auto c = oracle::random_case(rng);
        QuestionRecord q = question("anything", c.targets, c.anchors);
        q.scene_id = c.scene.scene_id;
        const auto before = generate_labels(c.scene, q, {});
        for (auto& p : c.scene.points) p = {2.5 * p[0] + 7, 2.5 * p[1] - 3, p[2]};
        const auto after = generate_labels(c.scene, q, {});
        CHECK(before.boi == after.boi);
        CHECK(before.ooi == after.ooi);
        CHECK(before.oot == after.oot);
    }
}

TEST_CASE("label records round trip and statistics") {
    SceneRecord s;
    s.scene_id = "s";
    blob(s, 1, "chair", 1, 1);
    blob(s, 2, "table", 5.1, 5.1);
    blob(s, 3, "lamp", 5.5, 5.5);
    corners(s);
    const auto q1 = question("what color is the chair next to the table?", {1});
    auto q2 = question("what is the lamp?", {3}, std::set<ObjectId>{});
    q2.question_id = "q2";
    std::vector<LabelRecord> labels;
    for (const auto& q : {q1, q2}) labels.push_back(to_label_record(q, s, generate_labels(s, q, {}), 5));
    CHECK(masks_from_record(labels[0], s).boi == generate_labels(s, q1, {}).boi);

    const auto path = std::filesystem::temp_directory_path() / "hcn_test_labels.jsonl";
    write_labels(labels, path);
    CHECK(read_labels(path) == labels);

    const auto st = label_stats(labels);
    CHECK(st.questions == 2);
    CHECK(st.oot.mean == doctest::Approx(1.0));
    const double ooi_mean = (labels[0].ooi.size() + labels[1].ooi.size()) / 2.0;
    CHECK(st.ooi.mean == doctest::Approx(ooi_mean));
}
