// SPDX-License-Identifier: Apache-2.0
//
// Nested object-level pseudo-labels for the three reasoning phases:
// blocks of interest (BoI), objects of interest (OoI), object of target (OoT).

#pragma once

#include <compare>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "hcn/scene.hpp"

namespace hcn {

enum class AnchorSource {
    automatic,    ///< annotation when the record has anchor_ids, else label_match
    annotation,
    label_match,
    both,         ///< union of annotation and label_match
};

AnchorSource parse_anchor_source(const std::string& name);
std::string to_string(AnchorSource source);

struct LabelGenConfig {
    int grid_size = 5;
    AnchorSource anchor_source = AnchorSource::automatic;
};

struct CellIndex {
    int row = 0;
    int col = 0;
    auto operator<=>(const CellIndex&) const = default;
};

using ObjectMask = std::vector<bool>;

/// Masks are indexed by position in SceneRecord::objects.
struct MaskTriple {
    ObjectMask boi;
    ObjectMask ooi;
    ObjectMask oot;
    std::set<CellIndex> boi_cells;
};

/// Lower-closed cells over the bbox; the max edge clamps into the last cell and
/// a zero-extent axis maps to index 0.
CellIndex cell_of_point(double x, double y, const BBox2& bbox, int grid_size);

std::set<ObjectId> extract_anchors(const QuestionRecord& q, const SceneRecord& scene,
                                   const LabelGenConfig& cfg);

struct BoiResult {
    ObjectMask mask;
    std::set<CellIndex> cells;
};

BoiResult compute_boi(const SceneRecord& scene, const std::set<ObjectId>& target_ids,
                      const std::set<ObjectId>& anchor_ids, const LabelGenConfig& cfg);
ObjectMask compute_ooi(const SceneRecord& scene, const std::set<ObjectId>& target_ids,
                       const std::set<ObjectId>& anchor_ids);
ObjectMask compute_oot(const SceneRecord& scene, const std::set<ObjectId>& target_ids);

MaskTriple generate_labels(const SceneRecord& scene, const QuestionRecord& q,
                           const LabelGenConfig& cfg);

/// One line of the labels file; ids and cells sorted ascending.
struct LabelRecord {
    std::string question_id;
    std::vector<ObjectId> boi;
    std::vector<ObjectId> ooi;
    std::vector<ObjectId> oot;
    std::vector<CellIndex> boi_cells;
    int grid_size = 0;

    bool operator==(const LabelRecord&) const = default;
};

LabelRecord to_label_record(const QuestionRecord& q, const SceneRecord& scene,
                            const MaskTriple& masks, int grid_size);
/// Inverse of to_label_record for a given scene.
MaskTriple masks_from_record(const LabelRecord& rec, const SceneRecord& scene);

std::string label_to_json_text(const LabelRecord& rec);
LabelRecord label_from_json_text(const std::string& line);
void write_labels(const std::vector<LabelRecord>& labels, const std::filesystem::path& path);
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);

struct PhaseStats {
    double mean = 0;
    double median = 0;
};

struct LabelStats {
    std::size_t questions = 0;
    PhaseStats boi, ooi, oot;
};

LabelStats label_stats(const std::vector<LabelRecord>& labels);
std::string format_label_stats(const LabelStats& stats);

}  // namespace hcn
