// SPDX-License-Identifier: Apache-2.0

#include "hcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hcn {

namespace {

double evaluate(const GraphBuilder& f, const TensorMap& inputs) {
    Tape tape;
    VarMap vars;
    for (const auto& [name, t] : inputs) vars.emplace(name, tape.constant(t));
    return f(tape, vars).value().item();
}

}  // namespace

std::string GradcheckReport::summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " tol=" << tol
       << "\n";
    for (const auto& e : entries)
        os << "  " << e.name << ": max_rel_error=" << e.max_rel_error << " at [" << e.worst_index
           << "] analytic=" << e.analytic << " numeric=" << e.numeric << "\n";
    return os.str();
}

GradcheckReport gradcheck(const GraphBuilder& f, const TensorMap& inputs,
                          const GradcheckOptions& opts) {
    GradcheckReport report;
    report.tol = opts.tol;

    TensorMap analytic;
    {
        Tape tape;
        VarMap vars;
        for (const auto& [name, t] : inputs) vars.emplace(name, tape.leaf(t, true));
        tape.backward(f(tape, vars));
        for (const auto& [name, v] : vars) analytic.emplace(name, v.grad());
    }

    TensorMap probe = inputs;
    for (const auto& [name, t] : inputs) {
        GradcheckEntry entry;
        entry.name = name;
        Tensor& x = probe.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + opts.step;
            const double up = evaluate(f, probe);
            x[i] = orig - opts.step;
            const double down = evaluate(f, probe);
            x[i] = orig;
            const double numeric = (up - down) / (2 * opts.step);
            const double a = analytic.at(name)[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
            double rel = std::abs(a - numeric) / denom;
            if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
            if (i == 0 || rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(entry);
    }
    report.passed = report.max_rel_error < opts.tol;
    return report;
}

}  // namespace hcn
