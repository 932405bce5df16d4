// SPDX-License-Identifier: Apache-2.0

#include "hcn/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hcn {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
T field(const ordered_json& j, const char* name) {
    if (!j.contains(name)) throw ParseError(std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("field '") + name + "': " + e.what());
    }
}

std::set<ObjectId> id_set(const std::vector<ObjectId>& ids, const char* name) {
    std::set<ObjectId> out(ids.begin(), ids.end());
    if (out.size() != ids.size()) throw ValidationError(std::string(name) + ": duplicate id");
    return out;
}

}  // namespace

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::optional<std::size_t> SceneRecord::object_index(ObjectId id) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
        if (objects[i].id == id) return i;
    return std::nullopt;
}

AnswerVocab::AnswerVocab(std::vector<std::string> answers) : answers_(std::move(answers)) {
    for (std::size_t i = 0; i < answers_.size(); ++i) {
        if (!index_.emplace(answers_[i], i).second)
            throw ValidationError("answer vocab: duplicate entry '" + answers_[i] + "'");
    }
}

std::optional<std::size_t> AnswerVocab::find(const std::string& answer) const {
    auto it = index_.find(answer);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

BBox2 scene_bbox(const SceneRecord& scene) {
    if (scene.points.empty()) throw ValidationError("points: empty point cloud");
    BBox2 b{scene.points[0][0], scene.points[0][0], scene.points[0][1], scene.points[0][1]};
    for (const auto& p : scene.points) {
        b.x_min = std::min(b.x_min, p[0]);
        b.x_max = std::max(b.x_max, p[0]);
        b.y_min = std::min(b.y_min, p[1]);
        b.y_max = std::max(b.y_max, p[1]);
    }
    return b;
}

void validate_scene(const SceneRecord& scene) {
    if (scene.points.empty()) throw ValidationError("points: must be non-empty");
    if (scene.point_object_ids.size() != scene.points.size())
        throw ValidationError("point_object_ids: length " +
                              std::to_string(scene.point_object_ids.size()) +
                              " differs from points length " +
                              std::to_string(scene.points.size()));
    for (std::size_t i = 0; i < scene.points.size(); ++i)
        for (double v : scene.points[i])
            if (!std::isfinite(v))
                throw ValidationError("points: non-finite coordinate at index " + std::to_string(i));
    std::map<ObjectId, std::size_t> owned;
    for (const auto& obj : scene.objects) {
        if (obj.id < 0) throw ValidationError("objects: negative id " + std::to_string(obj.id));
        if (obj.label.empty())
            throw ValidationError("objects: empty label for id " + std::to_string(obj.id));
        if (!owned.emplace(obj.id, 0).second)
            throw ValidationError("objects: duplicate id " + std::to_string(obj.id));
    }
    for (ObjectId id : scene.point_object_ids) {
        if (id == kBackgroundId) continue;
        auto it = owned.find(id);
        if (it == owned.end())
            throw ValidationError("point_object_ids: id " + std::to_string(id) +
                                  " has no entry in objects");
        ++it->second;
    }
    for (const auto& [id, count] : owned)
        if (count == 0)
            throw ValidationError("objects: id " + std::to_string(id) + " owns no points");
}

void validate_question(const QuestionRecord& q) {
    if (q.question_id.empty()) throw ValidationError("question_id: empty");
    if (q.question.empty()) throw ValidationError("question: empty text (" + q.question_id + ")");
    if (q.answers.empty()) throw ValidationError("answers: empty (" + q.question_id + ")");
    if (q.target_ids.empty()) throw ValidationError("target_ids: empty (" + q.question_id + ")");
    if (q.anchor_ids) {
        for (ObjectId a : *q.anchor_ids)
            if (q.target_ids.count(a))
                throw ValidationError("anchor_ids: id " + std::to_string(a) +
                                      " is also a target (" + q.question_id + ")");
    }
}

void validate_question_against(const QuestionRecord& q, const SceneRecord& scene) {
    validate_question(q);
    if (q.scene_id != scene.scene_id)
        throw ValidationError("scene_id: '" + q.scene_id + "' does not match scene '" +
                              scene.scene_id + "'");
    for (ObjectId t : q.target_ids)
        if (!scene.object_index(t))
            throw ValidationError("target_ids: unknown object " + std::to_string(t) + " in " +
                                  scene.scene_id + " (" + q.question_id + ")");
    if (q.anchor_ids)
        for (ObjectId a : *q.anchor_ids)
            if (!scene.object_index(a))
                throw ValidationError("anchor_ids: unknown object " + std::to_string(a) + " in " +
                                      scene.scene_id + " (" + q.question_id + ")");
}

SceneRecord scene_from_json_text(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scene: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("scene: top level must be an object");
    SceneRecord s;
    s.scene_id = field<std::string>(j, "scene_id");
    s.points = field<std::vector<Point3>>(j, "points");
    s.point_object_ids = field<std::vector<ObjectId>>(j, "point_object_ids");
    if (!j.contains("objects") || !j["objects"].is_array())
        throw ParseError("missing field 'objects'");
    for (const auto& o : j["objects"]) {
        ObjectRecord r;
        r.id = field<ObjectId>(o, "id");
        r.label = to_lower(field<std::string>(o, "label"));
        if (o.contains("attributes"))
            r.attributes = field<std::map<std::string, std::string>>(o, "attributes");
        s.objects.push_back(std::move(r));
    }
    validate_scene(s);
    return s;
}

std::string scene_to_json_text(const SceneRecord& scene) {
    ordered_json j;
    j["scene_id"] = scene.scene_id;
    j["points"] = scene.points;
    j["point_object_ids"] = scene.point_object_ids;
    j["objects"] = ordered_json::array();
    for (const auto& o : scene.objects) {
        ordered_json jo;
        jo["id"] = o.id;
        jo["label"] = o.label;
        jo["attributes"] = o.attributes;
        j["objects"].push_back(std::move(jo));
    }
    return j.dump() + "\n";
}

SceneRecord load_scene(const std::filesystem::path& path) {
    try {
        return scene_from_json_text(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void save_scene(const SceneRecord& scene, const std::filesystem::path& path) {
    write_file(path, scene_to_json_text(scene));
}

std::vector<SceneRecord> load_scene_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw ParseError("scene directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<SceneRecord> scenes;
    scenes.reserve(files.size());
    for (const auto& f : files) scenes.push_back(load_scene(f));
    return scenes;
}

SceneIndex index_scenes(const std::vector<SceneRecord>& scenes) {
    SceneIndex index;
    for (const auto& s : scenes)
        if (!index.emplace(s.scene_id, &s).second)
            throw ValidationError("scene_id: duplicate '" + s.scene_id + "'");
    return index;
}

QuestionRecord question_from_json_text(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what());
    }
    if (!j.is_object()) throw ParseError("record must be an object");
    QuestionRecord q;
    q.question_id = field<std::string>(j, "question_id");
    q.scene_id = field<std::string>(j, "scene_id");
    q.question = field<std::string>(j, "question");
    q.answers = field<std::vector<std::string>>(j, "answers");
    q.target_ids = id_set(field<std::vector<ObjectId>>(j, "target_ids"), "target_ids");
    if (j.contains("anchor_ids") && !j["anchor_ids"].is_null())
        q.anchor_ids = id_set(field<std::vector<ObjectId>>(j, "anchor_ids"), "anchor_ids");
    validate_question(q);
    return q;
}

std::string question_to_json_text(const QuestionRecord& q) {
    ordered_json j;
    j["question_id"] = q.question_id;
    j["scene_id"] = q.scene_id;
    j["question"] = q.question;
    j["answers"] = q.answers;
    j["target_ids"] = std::vector<ObjectId>(q.target_ids.begin(), q.target_ids.end());
    if (q.anchor_ids)
        j["anchor_ids"] = std::vector<ObjectId>(q.anchor_ids->begin(), q.anchor_ids->end());
    return j.dump();
}

std::vector<QuestionRecord> load_questions(const std::filesystem::path& path,
                                           const SceneIndex* scenes) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<QuestionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        QuestionRecord q;
        try {
            q = question_from_json_text(line);
        } catch (const ParseError& e) {
            throw ParseError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
        if (scenes) {
            auto it = scenes->find(q.scene_id);
            if (it == scenes->end())
                throw ValidationError(where + "scene_id: unknown scene '" + q.scene_id + "'");
            try {
                validate_question_against(q, *it->second);
            } catch (const ValidationError& e) {
                throw ValidationError(where + e.what());
            }
        }
        out.push_back(std::move(q));
    }
    return out;
}

void save_questions(const std::vector<QuestionRecord>& questions,
                    const std::filesystem::path& path) {
    std::string text;
    for (const auto& q : questions) text += question_to_json_text(q) + "\n";
    write_file(path, text);
}

AnswerVocab load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<std::string> answers;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        answers.push_back(line);
    }
    return AnswerVocab(std::move(answers));
}

void save_vocab(const AnswerVocab& vocab, const std::filesystem::path& path) {
    std::string text;
    for (const auto& a : vocab.answers()) text += a + "\n";
    write_file(path, text);
}

}  // namespace hcn
