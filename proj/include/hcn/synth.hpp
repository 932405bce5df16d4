// SPDX-License-Identifier: Apache-2.0
//
// Procedural scenes and templated questions, plus the deterministic featurizer
// that stands in for the language/vision encoders and the fusion layer.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcn/labelgen.hpp"
#include "hcn/scene.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

/// 64-bit FNV-1a; stable across platforms, used for every derived seed.
std::uint64_t fnv1a(const std::string& text, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt);

struct FeaturizerConfig {
    std::size_t d_word = 8;
    double noise = 0.02;
    std::uint64_t seed = 0;
    /// Length scale (metres) of the anchor-proximity feature.
    double proximity_scale = 0.5;
    /// word -> concept used by the object/text matching features. Lets the
    /// matching treat synonyms as the same concept while the surface word
    /// embedding still differs.
    std::map<std::string, std::string> aliases;

    std::size_t object_width() const { return 5 + 6 * d_word; }
    std::size_t text_width() const { return 3 * d_word; }
};

nlohmann::ordered_json to_json(const FeaturizerConfig& cfg);
FeaturizerConfig featurizer_from_json(const nlohmann::json& j);

/// Unit-norm embedding of a lowercase word; deterministic in (seed, word).
std::vector<double> word_embedding(const std::string& word, std::uint64_t seed, std::size_t dim);

/// Question words grouped into three slots by the article "the": words before
/// the first "the" (question type), between (target phrase), after the last
/// (anchor phrase). Lowercased, punctuation stripped, "the" dropped.
std::array<std::vector<std::string>, 3> question_slots(const std::string& question);

struct Features {
    Tensor tokens;  ///< (n_objects, object_width)
    Tensor text;    ///< (n_words, text_width)
};

/// Fused object tokens and text tokens for one question.
Features featurize(const SceneRecord& scene, const QuestionRecord& q, const FeaturizerConfig& cfg);

struct ShortcutBait {
    std::string target_label;
    std::string anchor_label;
    std::string answer;
    double rate = 0.9;
    /// Probability that a scene's first question is a bait color question.
    double scene_fraction = 0.3;
};

struct SyntheticSpec {
    std::size_t n_scenes = 500;
    std::size_t objects_min = 5;
    std::size_t objects_max = 7;
    std::size_t questions_per_scene = 2;
    std::vector<std::string> labels = {"chair", "table", "sofa", "bed", "lamp", "cabinet",
                                       "door", "window", "shelf", "sink", "toilet", "plant"};
    std::vector<std::string> colors = {"red", "blue", "green", "brown",
                                       "white", "black", "gray", "yellow"};
    std::vector<std::string> shapes = {"round", "square", "rectangular", "oval"};
    /// Enabled question templates: "color", "shape", "next_to".
    std::vector<std::string> templates = {"color", "shape", "next_to"};
    double extent = 6.0;
    std::size_t points_per_object = 24;
    std::size_t background_points = 60;
    std::uint64_t seed = 0;
    std::optional<ShortcutBait> shortcut_bait;
    FeaturizerConfig featurizer;

    void validate() const;
};

nlohmann::ordered_json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct Dataset {
    std::vector<SceneRecord> scenes;
    std::vector<QuestionRecord> questions;
    AnswerVocab vocab;
    FeaturizerConfig featurizer;
    LabelGenConfig labelgen;
};

/// Instantiates one template ("color", "shape" or "next_to") for a target
/// placed next to an anchor.
QuestionRecord make_template_question(const SceneRecord& scene, ObjectId target, ObjectId anchor,
                                      const std::string& template_name,
                                      const std::string& question_id);

/// Scenes, questions (with exact target/anchor ids) and the answer vocabulary.
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Deterministic ~10% validation split by question-id hash.
bool is_validation(const std::string& question_id);

/// Directory layout: scenes/<scene_id>.json, questions.jsonl, vocab.txt,
/// dataset.json (featurizer + labelgen settings).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace hcn
