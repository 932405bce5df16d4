// SPDX-License-Identifier: Apache-2.0

#include "hcn/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

namespace hcn {

namespace {

constexpr double kMinSeparation = 1.6;
constexpr double kPairDistanceMin = 0.55;
constexpr double kPairDistanceMax = 0.7;
constexpr double kObjectRadius = 0.22;
constexpr double kMargin = 0.3;

std::vector<std::string> plain_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::string concept_of(const std::string& word, const FeaturizerConfig& cfg) {
    auto it = cfg.aliases.find(word);
    return it == cfg.aliases.end() ? word : it->second;
}

bool names_object(const std::string& concept_word, const std::string& label) {
    if (concept_word == label) return true;
    return concept_word.size() == label.size() + 1 && concept_word.back() == 's' &&
           concept_word.compare(0, label.size(), label) == 0;
}

std::array<double, 2> centroid(const SceneRecord& scene, ObjectId id) {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < scene.points.size(); ++p)
        if (scene.point_object_ids[p] == id) {
            sx += scene.points[p][0];
            sy += scene.points[p][1];
            ++n;
        }
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

std::string attribute(const ObjectRecord& obj, const std::string& key) {
    auto it = obj.attributes.find(key);
    return it == obj.attributes.end() ? std::string() : it->second;
}

template <typename T>
const T& pick(const std::vector<T>& pool, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
}

double dist2d(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

struct Placement {
    std::string label;
    std::array<double, 2> pos;
    int pair = -1;         // question pair index, -1 for distractors
    bool is_anchor = false;
};

// Returns nullopt when rejection sampling fails; the caller retries with a new salt.
std::optional<std::vector<Placement>> place_objects(const SyntheticSpec& spec,
                                                    const std::vector<std::string>& anchor_labels,
                                                    const std::vector<std::string>& target_labels,
                                                    std::size_t n_distractors,
                                                    const std::vector<std::string>& free_labels,
                                                    std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coord(kMargin, spec.extent - kMargin);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Placement> placed;
    auto far_from_all = [&](const std::array<double, 2>& p, int skip) {
        for (std::size_t k = 0; k < placed.size(); ++k)
            if (static_cast<int>(k) != skip && dist2d(p, placed[k].pos) < kMinSeparation)
                return false;
        return true;
    };
    auto sample_free = [&]() -> std::optional<std::array<double, 2>> {
        for (int attempt = 0; attempt < 500; ++attempt) {
            std::array<double, 2> p{coord(rng), coord(rng)};
            if (far_from_all(p, -1)) return p;
        }
        return std::nullopt;
    };
    for (std::size_t k = 0; k < anchor_labels.size(); ++k) {
        auto a = sample_free();
        if (!a) return std::nullopt;
        placed.push_back({anchor_labels[k], *a, static_cast<int>(k), true});
        const int anchor_slot = static_cast<int>(placed.size()) - 1;
        bool ok = false;
        for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
            const double r = kPairDistanceMin + (kPairDistanceMax - kPairDistanceMin) * unit(rng);
            const double theta = 2 * M_PI * unit(rng);
            std::array<double, 2> t{(*a)[0] + r * std::cos(theta), (*a)[1] + r * std::sin(theta)};
            if (t[0] < kMargin || t[0] > spec.extent - kMargin || t[1] < kMargin ||
                t[1] > spec.extent - kMargin)
                continue;
            if (!far_from_all(t, anchor_slot)) continue;
            placed.push_back({target_labels[k], t, static_cast<int>(k), false});
            ok = true;
        }
        if (!ok) return std::nullopt;
    }
    for (std::size_t k = 0; k < n_distractors; ++k) {
        auto d = sample_free();
        if (!d) return std::nullopt;
        placed.push_back({pick(free_labels, rng), *d, -1, false});
    }
    return placed;
}

std::string scene_name(std::size_t index) {
    std::ostringstream os;
    os << "scene" << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

}  // namespace

std::uint64_t fnv1a(const std::string& text, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt) {
    return fnv1a(salt, fnv1a(std::to_string(seed)));
}

nlohmann::ordered_json to_json(const FeaturizerConfig& cfg) {
    nlohmann::ordered_json j;
    j["d_word"] = cfg.d_word;
    j["noise"] = cfg.noise;
    j["seed"] = cfg.seed;
    j["proximity_scale"] = cfg.proximity_scale;
    j["aliases"] = cfg.aliases;
    return j;
}

FeaturizerConfig featurizer_from_json(const nlohmann::json& j) {
    FeaturizerConfig cfg;
    try {
        cfg.d_word = j.value("d_word", cfg.d_word);
        cfg.noise = j.value("noise", cfg.noise);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.proximity_scale = j.value("proximity_scale", cfg.proximity_scale);
        if (j.contains("aliases"))
            cfg.aliases = j.at("aliases").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("featurizer: ") + e.what());
    }
    if (cfg.d_word < 1) throw ValidationError("featurizer: d_word must be >= 1");
    if (!(cfg.proximity_scale > 0)) throw ValidationError("featurizer: proximity_scale must be > 0");
    return cfg;
}

std::vector<double> word_embedding(const std::string& word, std::uint64_t seed, std::size_t dim) {
    std::mt19937_64 rng(mix_seed(seed, "word:" + word));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0;
    for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

std::array<std::vector<std::string>, 3> question_slots(const std::string& question) {
    const auto words = plain_words(question);
    std::vector<std::size_t> articles;
    for (std::size_t i = 0; i < words.size(); ++i)
        if (words[i] == "the") articles.push_back(i);
    std::array<std::vector<std::string>, 3> slots;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == "the") continue;
        std::size_t slot = 0;
        if (!articles.empty() && i > articles.front()) slot = i > articles.back() ? 2 : 1;
        slots[slot].push_back(words[i]);
    }
    return slots;
}

Features featurize(const SceneRecord& scene, const QuestionRecord& q, const FeaturizerConfig& cfg) {
    const std::size_t d = cfg.d_word;
    const std::size_t n = scene.objects.size();
    if (n == 0) throw ValidationError("featurize: scene " + scene.scene_id + " has no objects");
    const auto slots = question_slots(q.question);

    std::map<std::string, std::vector<double>> cache;
    auto embed = [&](const std::string& w) -> const std::vector<double>& {
        auto it = cache.find(w);
        if (it == cache.end()) it = cache.emplace(w, word_embedding(w, cfg.seed, d)).first;
        return it->second;
    };

    std::array<std::vector<double>, 3> slot_mean;
    for (std::size_t s = 0; s < 3; ++s) {
        slot_mean[s].assign(d, 0.0);
        for (const auto& w : slots[s]) {
            const auto& e = embed(w);
            for (std::size_t k = 0; k < d; ++k) slot_mean[s][k] += e[k];
        }
        if (!slots[s].empty())
            for (auto& v : slot_mean[s]) v /= static_cast<double>(slots[s].size());
    }

    auto mentioned_in = [&](std::size_t slot, const std::string& label) {
        const std::string target = concept_of(label, cfg);
        for (const auto& w : slots[slot])
            if (names_object(concept_of(w, cfg), target)) return 1.0;
        return 0.0;
    };

    const BBox2 bbox = scene_bbox(scene);
    const double span = std::max({bbox.x_max - bbox.x_min, bbox.y_max - bbox.y_min, 1e-9});
    std::vector<std::array<double, 2>> centers(n);
    std::vector<double> match_target(n), match_anchor(n);
    for (std::size_t i = 0; i < n; ++i) {
        centers[i] = centroid(scene, scene.objects[i].id);
        match_target[i] = mentioned_in(1, scene.objects[i].label);
        match_anchor[i] = mentioned_in(2, scene.objects[i].label);
    }

    std::mt19937_64 rng(mix_seed(cfg.seed, "noise:" + q.question_id));
    std::normal_distribution<double> noise(0.0, cfg.noise);
    Tensor tokens(Shape{n, cfg.object_width()});
    for (std::size_t i = 0; i < n; ++i) {
        const ObjectRecord& obj = scene.objects[i];
        std::vector<double> row;
        row.reserve(cfg.object_width());
        row.push_back((centers[i][0] - bbox.x_min) / span - 0.5);
        row.push_back((centers[i][1] - bbox.y_min) / span - 0.5);
        for (const std::string& w : {obj.label, attribute(obj, "color"), attribute(obj, "shape")}) {
            if (w.empty())
                row.insert(row.end(), d, 0.0);
            else
                row.insert(row.end(), embed(w).begin(), embed(w).end());
        }
        double proximity = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && match_anchor[j] > 0)
                proximity = std::max(proximity,
                                     std::exp(-dist2d(centers[i], centers[j]) / cfg.proximity_scale));
        row.push_back(match_target[i]);
        row.push_back(match_anchor[i]);
        row.push_back(proximity);
        for (const auto& m : slot_mean) row.insert(row.end(), m.begin(), m.end());
        for (std::size_t k = 0; k < row.size(); ++k) tokens.at(i, k) = row[k] + noise(rng);
    }

    std::size_t rows = 0;
    for (const auto& s : slots) rows += s.size();
    Tensor text(Shape{std::max<std::size_t>(rows, 1), cfg.text_width()}, 0.0);
    std::size_t r = 0;
    for (std::size_t s = 0; s < 3; ++s)
        for (const auto& w : slots[s]) {
            const auto& e = embed(w);
            for (std::size_t k = 0; k < d; ++k) text.at(r, s * d + k) = e[k];
            ++r;
        }
    return Features{std::move(tokens), std::move(text)};
}

void SyntheticSpec::validate() const {
    if (n_scenes < 1) throw ValidationError("synthetic spec: n_scenes must be >= 1");
    if (questions_per_scene < 1) throw ValidationError("synthetic spec: questions_per_scene must be >= 1");
    if (objects_min > objects_max) throw ValidationError("synthetic spec: objects_min > objects_max");
    if (objects_min < 2 * questions_per_scene)
        throw ValidationError("synthetic spec: objects_min must cover one target and anchor per question");
    if (labels.empty() || colors.empty() || shapes.empty() || templates.empty())
        throw ValidationError("synthetic spec: label, color, shape and template pools must be non-empty");
    if (labels.size() < questions_per_scene + 1)
        throw ValidationError("synthetic spec: label pool too small for distinct anchors");
    for (const auto& t : templates)
        if (t != "color" && t != "shape" && t != "next_to")
            throw ValidationError("synthetic spec: unknown template '" + t + "'");
    if (!(extent > 4 * kMargin)) throw ValidationError("synthetic spec: extent too small");
    if (points_per_object < 1) throw ValidationError("synthetic spec: points_per_object must be >= 1");
    if (shortcut_bait) {
        const auto& b = *shortcut_bait;
        if (!(b.rate >= 0 && b.rate <= 1)) throw ValidationError("shortcut_bait: rate must be in [0,1]");
        if (!(b.scene_fraction >= 0 && b.scene_fraction <= 1))
            throw ValidationError("shortcut_bait: scene_fraction must be in [0,1]");
        if (b.target_label == b.anchor_label)
            throw ValidationError("shortcut_bait: target and anchor labels must differ");
        auto in_pool = [&](const std::string& l) {
            return std::find(labels.begin(), labels.end(), l) != labels.end();
        };
        if (!in_pool(b.target_label) || !in_pool(b.anchor_label))
            throw ValidationError("shortcut_bait: labels must come from the label pool");
        if (b.answer.empty()) throw ValidationError("shortcut_bait: empty answer");
    }
    if (featurizer.d_word < 1) throw ValidationError("featurizer: d_word must be >= 1");
}

nlohmann::ordered_json to_json(const SyntheticSpec& spec) {
    nlohmann::ordered_json j;
    j["n_scenes"] = spec.n_scenes;
    j["objects_min"] = spec.objects_min;
    j["objects_max"] = spec.objects_max;
    j["questions_per_scene"] = spec.questions_per_scene;
    j["labels"] = spec.labels;
    j["colors"] = spec.colors;
    j["shapes"] = spec.shapes;
    j["templates"] = spec.templates;
    j["extent"] = spec.extent;
    j["points_per_object"] = spec.points_per_object;
    j["background_points"] = spec.background_points;
    j["seed"] = spec.seed;
    if (spec.shortcut_bait) {
        const auto& b = *spec.shortcut_bait;
        j["shortcut_bait"] = {{"target_label", b.target_label}, {"anchor_label", b.anchor_label},
                              {"answer", b.answer}, {"rate", b.rate},
                              {"scene_fraction", b.scene_fraction}};
    }
    j["featurizer"] = to_json(spec.featurizer);
    return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
        s.n_scenes = j.value("n_scenes", s.n_scenes);
        s.objects_min = j.value("objects_min", s.objects_min);
        s.objects_max = j.value("objects_max", s.objects_max);
        s.questions_per_scene = j.value("questions_per_scene", s.questions_per_scene);
        s.labels = j.value("labels", s.labels);
        s.colors = j.value("colors", s.colors);
        s.shapes = j.value("shapes", s.shapes);
        s.templates = j.value("templates", s.templates);
        s.extent = j.value("extent", s.extent);
        s.points_per_object = j.value("points_per_object", s.points_per_object);
        s.background_points = j.value("background_points", s.background_points);
        s.seed = j.value("seed", s.seed);
        if (j.contains("shortcut_bait") && !j["shortcut_bait"].is_null()) {
            const auto& b = j["shortcut_bait"];
            ShortcutBait bait;
            bait.target_label = b.at("target_label").get<std::string>();
            bait.anchor_label = b.at("anchor_label").get<std::string>();
            bait.answer = b.at("answer").get<std::string>();
            bait.rate = b.value("rate", bait.rate);
            bait.scene_fraction = b.value("scene_fraction", bait.scene_fraction);
            s.shortcut_bait = bait;
        }
        if (j.contains("featurizer")) s.featurizer = featurizer_from_json(j["featurizer"]);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

QuestionRecord make_template_question(const SceneRecord& scene, ObjectId target, ObjectId anchor,
                                      const std::string& template_name,
                                      const std::string& question_id) {
    const auto ti = scene.object_index(target);
    const auto ai = scene.object_index(anchor);
    if (!ti || !ai) throw ValidationError("template question: unknown target or anchor id");
    const ObjectRecord& t = scene.objects[*ti];
    const ObjectRecord& a = scene.objects[*ai];
    QuestionRecord q;
    q.question_id = question_id;
    q.scene_id = scene.scene_id;
    q.target_ids = {target};
    q.anchor_ids = std::set<ObjectId>{anchor};
    if (template_name == "color") {
        q.question = "what color is the " + t.label + " next to the " + a.label + "?";
        q.answers = {attribute(t, "color")};
    } else if (template_name == "shape") {
        q.question = "what shape is the " + t.label + " next to the " + a.label + "?";
        q.answers = {attribute(t, "shape")};
    } else if (template_name == "next_to") {
        q.question = "what is next to the " + a.label + "?";
        q.answers = {t.label};
    } else {
        throw ValidationError("template question: unknown template '" + template_name + "'");
    }
    validate_question_against(q, scene);
    return q;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset data;
    data.featurizer = spec.featurizer;
    std::set<std::string> answer_set;

    for (std::size_t si = 0; si < spec.n_scenes; ++si) {
        const std::string sid = scene_name(si);
        std::mt19937_64 rng(mix_seed(spec.seed, "scene:" + sid));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const std::size_t qn = spec.questions_per_scene;
        std::uniform_int_distribution<std::size_t> count(spec.objects_min, spec.objects_max);
        const std::size_t n_objects = count(rng);
        const bool bait_scene = spec.shortcut_bait && unit(rng) < spec.shortcut_bait->scene_fraction;

        std::vector<std::string> pool = spec.labels;
        std::vector<std::string> anchor_labels, target_labels;
        auto take = [&](const std::string& label) {
            pool.erase(std::remove(pool.begin(), pool.end(), label), pool.end());
        };
        if (bait_scene) {
            anchor_labels.push_back(spec.shortcut_bait->anchor_label);
            take(spec.shortcut_bait->anchor_label);
        }
        while (anchor_labels.size() < qn) {
            std::shuffle(pool.begin(), pool.end(), rng);
            if (bait_scene && pool.front() == spec.shortcut_bait->target_label &&
                pool.size() > 1)
                std::swap(pool[0], pool[1]);
            anchor_labels.push_back(pool.front());
            take(pool.front());
        }
        if (pool.empty()) throw ValidationError("synthetic spec: no labels left for targets");
        for (std::size_t k = 0; k < qn; ++k)
            target_labels.push_back(bait_scene && k == 0 ? spec.shortcut_bait->target_label
                                                         : pick(pool, rng));

        std::optional<std::vector<Placement>> placed;
        for (int attempt = 0; !placed; ++attempt) {
            if (attempt > 50)
                throw ValidationError("synthetic spec: cannot place objects in extent " +
                                      std::to_string(spec.extent));
            placed = place_objects(spec, anchor_labels, target_labels, n_objects - 2 * qn, pool, rng);
        }

        std::vector<ObjectId> ids(placed->size());
        for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<ObjectId>(k);
        std::shuffle(ids.begin(), ids.end(), rng);

        SceneRecord scene;
        scene.scene_id = sid;
        std::uniform_real_distribution<double> angle(0.0, 2 * M_PI);
        for (std::size_t k = 0; k < placed->size(); ++k) {
            const Placement& pl = (*placed)[k];
            ObjectRecord obj{ids[k], pl.label,
                             {{"color", pick(spec.colors, rng)}, {"shape", pick(spec.shapes, rng)}}};
            const double height = 0.4 + 0.6 * unit(rng);
            for (std::size_t p = 0; p < spec.points_per_object; ++p) {
                const double r = kObjectRadius * std::sqrt(unit(rng));
                const double th = angle(rng);
                scene.points.push_back({pl.pos[0] + r * std::cos(th), pl.pos[1] + r * std::sin(th),
                                        height * unit(rng)});
                scene.point_object_ids.push_back(obj.id);
            }
            scene.objects.push_back(std::move(obj));
        }
        for (const auto& corner : {std::array<double, 2>{0, 0}, {spec.extent, 0}, {0, spec.extent},
                                   {spec.extent, spec.extent}}) {
            scene.points.push_back({corner[0], corner[1], 0.0});
            scene.point_object_ids.push_back(kBackgroundId);
        }
        for (std::size_t p = 0; p < spec.background_points; ++p) {
            scene.points.push_back({spec.extent * unit(rng), spec.extent * unit(rng), 0.0});
            scene.point_object_ids.push_back(kBackgroundId);
        }
        std::sort(scene.objects.begin(), scene.objects.end(),
                  [](const ObjectRecord& a, const ObjectRecord& b) { return a.id < b.id; });
        validate_scene(scene);

        for (std::size_t k = 0; k < qn; ++k) {
            ObjectId anchor = -1, target = -1;
            for (std::size_t m = 0; m < placed->size(); ++m) {
                if ((*placed)[m].pair != static_cast<int>(k)) continue;
                ((*placed)[m].is_anchor ? anchor : target) = ids[m];
            }
            const std::string tmpl =
                bait_scene && k == 0 ? std::string("color") : pick(spec.templates, rng);
            QuestionRecord q =
                make_template_question(scene, target, anchor, tmpl, sid + "_q" + std::to_string(k));
            if (spec.shortcut_bait && tmpl == "color") {
                const auto& b = *spec.shortcut_bait;
                const auto& tl = scene.objects[*scene.object_index(target)].label;
                const auto& al = scene.objects[*scene.object_index(anchor)].label;
                if (tl == b.target_label && al == b.anchor_label && unit(rng) < b.rate)
                    q.answers = {b.answer};
            }
            answer_set.insert(q.answers.begin(), q.answers.end());
            data.questions.push_back(std::move(q));
        }
        data.scenes.push_back(std::move(scene));
    }
    data.vocab = AnswerVocab(std::vector<std::string>(answer_set.begin(), answer_set.end()));
    return data;
}

bool is_validation(const std::string& question_id) { return fnv1a(question_id) % 10 == 0; }

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "scenes");
    for (const auto& s : data.scenes) save_scene(s, dir / "scenes" / (s.scene_id + ".json"));
    save_questions(data.questions, dir / "questions.jsonl");
    save_vocab(data.vocab, dir / "vocab.txt");
    nlohmann::ordered_json meta;
    meta["featurizer"] = to_json(data.featurizer);
    meta["labelgen"] = {{"grid_size", data.labelgen.grid_size},
                        {"anchor_source", to_string(data.labelgen.anchor_source)}};
    std::ofstream out(dir / "dataset.json", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "dataset.json").string());
    out << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset data;
    data.scenes = load_scene_dir(dir / "scenes");
    const SceneIndex index = index_scenes(data.scenes);
    data.questions = load_questions(dir / "questions.jsonl", &index);
    data.vocab = load_vocab(dir / "vocab.txt");
    const auto meta_path = dir / "dataset.json";
    std::ifstream in(meta_path);
    if (!in) throw ParseError("cannot open " + meta_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }
    if (meta.contains("featurizer")) data.featurizer = featurizer_from_json(meta["featurizer"]);
    if (meta.contains("labelgen")) {
        data.labelgen.grid_size = meta["labelgen"].value("grid_size", 5);
        data.labelgen.anchor_source =
            parse_anchor_source(meta["labelgen"].value("anchor_source", std::string("auto")));
    }
    return data;
}

}  // namespace hcn
