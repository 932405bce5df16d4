// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference implementations. Nothing here calls into the tensor or
// tape code: matrices are nested vectors and every rule is restated directly.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hcn/scene.hpp"
#include "hcn/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const hcn::Tensor& t) {
    const std::size_t r = t.rank() == 2 ? t.shape()[0] : 1;
    const std::size_t c = t.rank() == 0 ? 1 : t.shape().back();
    Mat m(r, std::vector<double>(c));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat dense(const Mat& x, const hcn::Tensor& w, const hcn::Tensor& b, bool relu_after) {
    Mat y = matmul(x, from_tensor(w));
    for (auto& row : y)
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += b.data()[j];
            if (relu_after && row[j] < 0) row[j] = 0;
        }
    return y;
}

inline Mat hcat(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i) out[i].insert(out[i].end(), b[i].begin(), b[i].end());
    return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Plain binary cross entropy averaged over entries.
inline double mean_bce(const std::vector<double>& p, const std::vector<bool>& y) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s -= y[i] ? std::log(p[i]) : std::log(1 - p[i]);
    return s / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Scene fuzzing and the exhaustive block-of-interest reference.

struct FuzzCase {
    hcn::SceneRecord scene;
    std::set<hcn::ObjectId> targets;
    std::set<hcn::ObjectId> anchors;
};

inline FuzzCase random_case(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> n_obj(1, 8), n_pts(1, 15), n_bg(0, 10), style(0, 3);
    std::uniform_real_distribution<double> coord(-5.0, 5.0);
    std::uniform_int_distribution<int> grid_coord(-4, 4);
    const int mode = style(rng);
    auto sample = [&]() -> hcn::Point3 {
        // Modes: continuous, integer lattice (hits cell edges), flat x, flat x and y.
        switch (mode) {
            case 1: return {double(grid_coord(rng)), double(grid_coord(rng)), 0.0};
            case 2: return {1.5, coord(rng), coord(rng)};
            case 3: return {-2.0, 3.0, coord(rng)};
            default: return {coord(rng), coord(rng), coord(rng)};
        }
    };
    FuzzCase c;
    c.scene.scene_id = "fuzz";
    const int n = n_obj(rng);
    std::vector<hcn::ObjectId> ids;
    for (int i = 0; i < n; ++i) {
        const hcn::ObjectId id = 3 * i + 1;
        ids.push_back(id);
        c.scene.objects.push_back({id, "obj" + std::to_string(i), {}});
        const int k = n_pts(rng);
        for (int p = 0; p < k; ++p) {
            c.scene.points.push_back(sample());
            c.scene.point_object_ids.push_back(id);
        }
    }
    const int bg = n_bg(rng);
    for (int p = 0; p < bg; ++p) {
        c.scene.points.push_back(sample());
        c.scene.point_object_ids.push_back(hcn::kBackgroundId);
    }
    std::bernoulli_distribution coin(0.3);
    for (auto id : ids) {
        if (coin(rng)) c.targets.insert(id);
        else if (coin(rng)) c.anchors.insert(id);
    }
    if (c.targets.empty()) {
        c.targets.insert(ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)]);
        for (auto t : c.targets) c.anchors.erase(t);
    }
    return c;
}

/// Position along one axis in cell units, or -1 when the axis has no extent.
inline double grid_coordinate(double v, double lo, double hi, int s) {
    if (!(hi > lo)) return -1;
    return (v - lo) / ((hi - lo) / s);
}

/// True iff the point falls in cell index k of an axis with s cells:
/// k <= t < k+1, the last cell also taking t >= s, a flat axis using cell 0.
inline bool in_axis_cell(double t, int k, int s) {
    if (t < 0) return k == 0;
    const bool lower = k == 0 ? true : t >= k;
    const bool upper = k == s - 1 ? true : t < k + 1;
    return lower && upper;
}

/// Tests every (point, cell) pair. Returns the mask indexed like scene.objects.
inline std::vector<bool> boi_oracle(const hcn::SceneRecord& scene, const std::set<hcn::ObjectId>& targets,
                                    const std::set<hcn::ObjectId>& anchors, int s) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& p : scene.points) {
        x0 = std::min(x0, p[0]);
        x1 = std::max(x1, p[0]);
        y0 = std::min(y0, p[1]);
        y1 = std::max(y1, p[1]);
    }
    auto in_cell = [&](const hcn::Point3& p, int row, int col) {
        return in_axis_cell(grid_coordinate(p[0], x0, x1, s), col, s) &&
               in_axis_cell(grid_coordinate(p[1], y0, y1, s), row, s);
    };
    std::vector<std::vector<bool>> hot(s, std::vector<bool>(s, false));
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
            for (std::size_t i = 0; i < scene.points.size(); ++i) {
                const auto id = scene.point_object_ids[i];
                if ((targets.count(id) || anchors.count(id)) && in_cell(scene.points[i], r, c)) {
                    hot[r][c] = true;
                    break;
                }
            }
    std::vector<bool> mask(scene.objects.size(), false);
    for (std::size_t o = 0; o < scene.objects.size(); ++o)
        for (std::size_t i = 0; i < scene.points.size() && !mask[o]; ++i) {
            if (scene.point_object_ids[i] != scene.objects[o].id) continue;
            for (int r = 0; r < s && !mask[o]; ++r)
                for (int c = 0; c < s && !mask[o]; ++c)
                    if (hot[r][c] && in_cell(scene.points[i], r, c)) mask[o] = true;
        }
    return mask;
}

inline bool subset(const std::vector<bool>& a, const std::vector<bool>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && !b[i]) return false;
    return true;
}

}  // namespace oracle
