// SPDX-License-Identifier: Apache-2.0
//
// Scene, question and answer-vocabulary records plus their file formats.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hcn {

/// Malformed input file (bad JSON, wrong field type, missing field).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a record invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using ObjectId = std::int64_t;
using Point3 = std::array<double, 3>;

/// Point id reserved for unsegmented background (floor, walls).
inline constexpr ObjectId kBackgroundId = -1;

struct ObjectRecord {
    ObjectId id = 0;
    std::string label;
    std::map<std::string, std::string> attributes;

    bool operator==(const ObjectRecord&) const = default;
};

struct SceneRecord {
    std::string scene_id;
    std::vector<Point3> points;
    std::vector<ObjectId> point_object_ids;
    std::vector<ObjectRecord> objects;

    /// Position of the object with `id` in `objects`, or nullopt.
    std::optional<std::size_t> object_index(ObjectId id) const;

    bool operator==(const SceneRecord&) const = default;
};

struct QuestionRecord {
    std::string question_id;
    std::string scene_id;
    std::string question;
    std::vector<std::string> answers;
    std::set<ObjectId> target_ids;
    std::optional<std::set<ObjectId>> anchor_ids;

    bool operator==(const QuestionRecord&) const = default;
};

class AnswerVocab {
public:
    AnswerVocab() = default;
    explicit AnswerVocab(std::vector<std::string> answers);

    std::size_t size() const { return answers_.size(); }
    const std::string& at(std::size_t index) const { return answers_.at(index); }
    const std::vector<std::string>& answers() const { return answers_; }
    std::optional<std::size_t> find(const std::string& answer) const;

private:
    std::vector<std::string> answers_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct BBox2 {
    double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
    bool operator==(const BBox2&) const = default;
};

/// Axis-aligned x/y extent of all points. Requires a non-empty cloud.
BBox2 scene_bbox(const SceneRecord& scene);

/// Throws ValidationError naming the offending field.
void validate_scene(const SceneRecord& scene);
void validate_question(const QuestionRecord& q);
void validate_question_against(const QuestionRecord& q, const SceneRecord& scene);

SceneRecord scene_from_json_text(const std::string& text);
std::string scene_to_json_text(const SceneRecord& scene);
SceneRecord load_scene(const std::filesystem::path& path);
void save_scene(const SceneRecord& scene, const std::filesystem::path& path);

/// Loads every `*.json` file in `dir`, sorted by filename.
std::vector<SceneRecord> load_scene_dir(const std::filesystem::path& dir);

using SceneIndex = std::unordered_map<std::string, const SceneRecord*>;
SceneIndex index_scenes(const std::vector<SceneRecord>& scenes);

QuestionRecord question_from_json_text(const std::string& line);
std::string question_to_json_text(const QuestionRecord& q);

/// One record per non-blank line. Errors carry the 1-based line number.
/// When `scenes` is given every record is cross-checked against its scene.
std::vector<QuestionRecord> load_questions(const std::filesystem::path& path,
                                           const SceneIndex* scenes = nullptr);
void save_questions(const std::vector<QuestionRecord>& questions,
                    const std::filesystem::path& path);

AnswerVocab load_vocab(const std::filesystem::path& path);
void save_vocab(const AnswerVocab& vocab, const std::filesystem::path& path);

std::string to_lower(std::string s);

}  // namespace hcn
