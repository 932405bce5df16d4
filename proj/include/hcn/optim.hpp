// SPDX-License-Identifier: Apache-2.0
//
// Named parameter maps, gradient-descent updates, and checkpoint I/O.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "hcn/tensor.hpp"

namespace hcn {

/// Name -> tensor, iterated in name order.
using TensorMap = std::map<std::string, Tensor>;

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    TensorMap first_moment;
    TensorMap second_moment;
};

/// p <- p - lr * g for every parameter. Grads must cover every parameter.
void sgd_step(TensorMap& params, const TensorMap& grads, double lr);
/// Bias-corrected Adam; moment buffers are created on the first step.
void adam_step(TensorMap& params, const TensorMap& grads, OptimizerState& state);
/// Dispatches on state.kind.
void optimizer_step(TensorMap& params, const TensorMap& grads, OptimizerState& state);

inline constexpr const char* kCheckpointFormat = "hcnqa-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    TensorMap params;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

std::string checkpoint_to_json_text(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json_text(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hcn
