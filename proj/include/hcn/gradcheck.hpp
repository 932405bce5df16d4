// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hcn/optim.hpp"
#include "hcn/tape.hpp"

namespace hcn {

using VarMap = std::map<std::string, Var>;

/// Builds a scalar-valued graph from named leaves. Must be a pure function of
/// the leaf values.
using GraphBuilder = std::function<Var(Tape&, const VarMap&)>;

struct GradcheckEntry {
    std::string name;
    double max_rel_error = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
};

struct GradcheckReport {
    bool passed = true;
    double max_rel_error = 0;
    double tol = 0;
    std::vector<GradcheckEntry> entries;

    std::string summary() const;
};

struct GradcheckOptions {
    double step = 1e-5;
    double tol = 1e-4;
    /// Denominator floor: rel = |a - n| / max(|a|, |n|, abs_floor).
    double abs_floor = 1e-6;
};

/// Compares reverse-mode gradients against central differences for every
/// element of every input.
GradcheckReport gradcheck(const GraphBuilder& f, const TensorMap& inputs,
                          const GradcheckOptions& opts = {});

}  // namespace hcn
