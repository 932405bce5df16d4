// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks over every differentiable primitive and the
// assembled model loss on a small seeded batch.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcn/gradcheck.hpp"

namespace hcn {

struct NamedGradcheck {
    std::string name;
    GradcheckReport report;
};

/// One entry per primitive plus "full_stack" (extractor, HSM, reweighting,
/// answer head, HSM loss and answer loss on `n_objects` objects).
std::vector<NamedGradcheck> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts = {},
                                                std::size_t n_objects = 6);

}  // namespace hcn
