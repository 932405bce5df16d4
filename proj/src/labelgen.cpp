// SPDX-License-Identifier: Apache-2.0

#include "hcn/labelgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hcn {

namespace {

std::vector<std::string> words_of(const std::string& text) {
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

bool word_matches(const std::string& word, const std::string& label_word) {
    if (word == label_word) return true;
    return word.size() == label_word.size() + 1 && word.back() == 's' &&
           word.compare(0, label_word.size(), label_word) == 0;
}

// Whole-word match of a (possibly multi-word) label; plural allowed on the last word.
bool label_mentioned(const std::vector<std::string>& words, const std::string& label) {
    const auto parts = words_of(label);
    if (parts.empty() || parts.size() > words.size()) return false;
    for (std::size_t start = 0; start + parts.size() <= words.size(); ++start) {
        bool ok = true;
        for (std::size_t k = 0; k < parts.size() && ok; ++k) {
            const bool last = k + 1 == parts.size();
            ok = last ? word_matches(words[start + k], parts[k]) : words[start + k] == parts[k];
        }
        if (ok) return true;
    }
    return false;
}

std::size_t require_index(const SceneRecord& scene, ObjectId id) {
    auto idx = scene.object_index(id);
    if (!idx)
        throw ValidationError("unknown object id " + std::to_string(id) + " in scene " +
                              scene.scene_id);
    return *idx;
}

ObjectMask membership(const SceneRecord& scene, const std::set<ObjectId>& ids) {
    ObjectMask mask(scene.objects.size(), false);
    for (ObjectId id : ids) mask[require_index(scene, id)] = true;
    return mask;
}

template <typename T>
T field(const nlohmann::json& j, const char* name) {
    if (!j.contains(name)) throw ParseError(std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("field '") + name + "': " + e.what());
    }
}

PhaseStats phase_stats(std::vector<double> counts) {
    PhaseStats s;
    if (counts.empty()) return s;
    double total = 0;
    for (double c : counts) total += c;
    s.mean = total / static_cast<double>(counts.size());
    std::sort(counts.begin(), counts.end());
    const std::size_t n = counts.size();
    s.median = n % 2 ? counts[n / 2] : 0.5 * (counts[n / 2 - 1] + counts[n / 2]);
    return s;
}

}  // namespace

AnchorSource parse_anchor_source(const std::string& name) {
    if (name == "auto") return AnchorSource::automatic;
    if (name == "annotation") return AnchorSource::annotation;
    if (name == "label_match") return AnchorSource::label_match;
    if (name == "union") return AnchorSource::both;
    throw ValidationError("anchor source: unknown mode '" + name +
                          "' (expected auto, annotation, label_match, union)");
}

std::string to_string(AnchorSource source) {
    switch (source) {
        case AnchorSource::automatic: return "auto";
        case AnchorSource::annotation: return "annotation";
        case AnchorSource::label_match: return "label_match";
        case AnchorSource::both: return "union";
    }
    return "auto";
}

CellIndex cell_of_point(double x, double y, const BBox2& bbox, int grid_size) {
    auto axis = [grid_size](double v, double lo, double hi) {
        const double extent = hi - lo;
        if (!(extent > 0)) return 0;
        const double h = extent / grid_size;
        const int k = static_cast<int>(std::floor((v - lo) / h));
        return std::clamp(k, 0, grid_size - 1);
    };
    return CellIndex{axis(y, bbox.y_min, bbox.y_max), axis(x, bbox.x_min, bbox.x_max)};
}

std::set<ObjectId> extract_anchors(const QuestionRecord& q, const SceneRecord& scene,
                                   const LabelGenConfig& cfg) {
    if (q.question.empty()) throw ValidationError("question: empty text (" + q.question_id + ")");
    auto from_annotation = [&] { return q.anchor_ids.value_or(std::set<ObjectId>{}); };
    auto from_labels = [&] {
        std::set<ObjectId> out;
        const auto words = words_of(q.question);
        for (const auto& obj : scene.objects)
            if (!q.target_ids.count(obj.id) && label_mentioned(words, obj.label))
                out.insert(obj.id);
        return out;
    };
    switch (cfg.anchor_source) {
        case AnchorSource::annotation: return from_annotation();
        case AnchorSource::label_match: return from_labels();
        case AnchorSource::both: {
            auto out = from_annotation();
            out.merge(from_labels());
            return out;
        }
        case AnchorSource::automatic:
            return q.anchor_ids ? from_annotation() : from_labels();
    }
    return {};
}

BoiResult compute_boi(const SceneRecord& scene, const std::set<ObjectId>& target_ids,
                      const std::set<ObjectId>& anchor_ids, const LabelGenConfig& cfg) {
    if (cfg.grid_size < 1) throw ValidationError("grid_size: must be >= 1");
    if (target_ids.empty()) throw ValidationError("target_ids: empty");
    const ObjectMask seeds = [&] {
        ObjectMask m = membership(scene, target_ids);
        for (ObjectId a : anchor_ids) m[require_index(scene, a)] = true;
        return m;
    }();

    std::unordered_map<ObjectId, std::size_t> slot;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) slot.emplace(scene.objects[i].id, i);

    const BBox2 bbox = scene_bbox(scene);
    const int S = cfg.grid_size;
    std::vector<int> point_cell(scene.points.size(), -1);
    std::vector<bool> cell_hot(static_cast<std::size_t>(S) * S, false);
    BoiResult result;
    for (std::size_t p = 0; p < scene.points.size(); ++p) {
        const ObjectId id = scene.point_object_ids[p];
        if (id == kBackgroundId) continue;
        const CellIndex c = cell_of_point(scene.points[p][0], scene.points[p][1], bbox, S);
        point_cell[p] = c.row * S + c.col;
        if (seeds[slot.at(id)]) {
            cell_hot[point_cell[p]] = true;
            result.cells.insert(c);
        }
    }
    result.mask.assign(scene.objects.size(), false);
    for (std::size_t p = 0; p < scene.points.size(); ++p)
        if (point_cell[p] >= 0 && cell_hot[point_cell[p]])
            result.mask[slot.at(scene.point_object_ids[p])] = true;
    return result;
}

ObjectMask compute_ooi(const SceneRecord& scene, const std::set<ObjectId>& target_ids,
                       const std::set<ObjectId>& anchor_ids) {
    ObjectMask mask = membership(scene, target_ids);
    for (ObjectId a : anchor_ids) mask[require_index(scene, a)] = true;
    return mask;
}

ObjectMask compute_oot(const SceneRecord& scene, const std::set<ObjectId>& target_ids) {
    return membership(scene, target_ids);
}

MaskTriple generate_labels(const SceneRecord& scene, const QuestionRecord& q,
                           const LabelGenConfig& cfg) {
    if (q.scene_id != scene.scene_id)
        throw ValidationError("question " + q.question_id + " references scene " + q.scene_id +
                              ", got " + scene.scene_id);
    const auto anchors = extract_anchors(q, scene, cfg);
    auto boi = compute_boi(scene, q.target_ids, anchors, cfg);
    return MaskTriple{std::move(boi.mask), compute_ooi(scene, q.target_ids, anchors),
                      compute_oot(scene, q.target_ids), std::move(boi.cells)};
}

LabelRecord to_label_record(const QuestionRecord& q, const SceneRecord& scene,
                            const MaskTriple& masks, int grid_size) {
    auto ids = [&](const ObjectMask& m) {
        std::vector<ObjectId> out;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) out.push_back(scene.objects[i].id);
        std::sort(out.begin(), out.end());
        return out;
    };
    return LabelRecord{q.question_id, ids(masks.boi), ids(masks.ooi), ids(masks.oot),
                       std::vector<CellIndex>(masks.boi_cells.begin(), masks.boi_cells.end()),
                       grid_size};
}

MaskTriple masks_from_record(const LabelRecord& rec, const SceneRecord& scene) {
    auto mask = [&](const std::vector<ObjectId>& ids) {
        return membership(scene, std::set<ObjectId>(ids.begin(), ids.end()));
    };
    return MaskTriple{mask(rec.boi), mask(rec.ooi), mask(rec.oot),
                      std::set<CellIndex>(rec.boi_cells.begin(), rec.boi_cells.end())};
}

std::string label_to_json_text(const LabelRecord& rec) {
    nlohmann::ordered_json j;
    j["question_id"] = rec.question_id;
    j["boi"] = rec.boi;
    j["ooi"] = rec.ooi;
    j["oot"] = rec.oot;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : rec.boi_cells) cells.push_back({c.row, c.col});
    j["boi_cells"] = std::move(cells);
    j["grid_size"] = rec.grid_size;
    return j.dump();
}

LabelRecord label_from_json_text(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what());
    }
    LabelRecord rec;
    rec.question_id = field<std::string>(j, "question_id");
    rec.boi = field<std::vector<ObjectId>>(j, "boi");
    rec.ooi = field<std::vector<ObjectId>>(j, "ooi");
    rec.oot = field<std::vector<ObjectId>>(j, "oot");
    for (const auto& pair : field<std::vector<std::array<int, 2>>>(j, "boi_cells"))
        rec.boi_cells.push_back(CellIndex{pair[0], pair[1]});
    rec.grid_size = field<int>(j, "grid_size");
    return rec;
}

void write_labels(const std::vector<LabelRecord>& labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& rec : labels) out << label_to_json_text(rec) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<LabelRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(label_from_json_text(line));
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

LabelStats label_stats(const std::vector<LabelRecord>& labels) {
    std::vector<double> boi, ooi, oot;
    for (const auto& r : labels) {
        boi.push_back(static_cast<double>(r.boi.size()));
        ooi.push_back(static_cast<double>(r.ooi.size()));
        oot.push_back(static_cast<double>(r.oot.size()));
    }
    return LabelStats{labels.size(), phase_stats(std::move(boi)), phase_stats(std::move(ooi)),
                      phase_stats(std::move(oot))};
}

std::string format_label_stats(const LabelStats& s) {
    std::ostringstream os;
    os << "questions " << s.questions << "\n";
    auto line = [&](const char* name, const PhaseStats& p) {
        os << name << " selected: mean " << p.mean << ", median " << p.median << "\n";
    };
    line("boi", s.boi);
    line("ooi", s.ooi);
    line("oot", s.oot);
    return os.str();
}

}  // namespace hcn
