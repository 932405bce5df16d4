// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives recorded on a Tape. All operands of one call must
// live on the same tape. Shape violations throw ShapeError naming both shapes.

#pragma once

#include <stdexcept>
#include <vector>

#include "hcn/tape.hpp"

namespace hcn {

/// Probabilities entering a log are clamped to [kProbEpsilon, 1 - kProbEpsilon].
inline constexpr double kProbEpsilon = 1e-7;

/// weighted_bce called with an all-selected or all-unselected label vector.
class DegenerateClassError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// (n,k)·(k,m) -> (n,m).
Var matmul(Var a, Var b);
/// Same shape, or b is (d,)/(1,d) broadcast over the rows of a (n,d).
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
/// Concatenate along the last dimension: (n,a),(n,b) -> (n,a+b).
Var concat(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
/// Mean of all elements -> scalar.
Var mean(Var a);
Var sum(Var a);
/// Mean over rows: (n,d) -> (1,d).
Var mean_rows(Var a);
/// Softmax along the last dimension.
Var softmax(Var a);
/// Gathers rows (matrix) or elements (vector).
Var row_select(Var a, const std::vector<std::size_t>& indices);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// Row i of x (n,d) multiplied by w[i], w of shape (n,).
Var scale_rows(Var x, Var w);

/// Class-balanced binary cross-entropy over N object probabilities:
///   -((c0+c1)/N) * sum_i [ M_i/c1 * log p_i + (1-M_i)/c0 * log(1-p_i) ]
/// with c1 selected and c0 unselected objects. Throws DegenerateClassError when
/// either count is zero.
Var weighted_bce(Var pred, const std::vector<bool>& labels);
/// Unweighted mean binary cross-entropy (same clamping).
Var bce_mean(Var pred, const std::vector<bool>& labels);
/// -log softmax(logits)[label] for logits of shape (V,) or (1,V).
Var cross_entropy(Var logits, std::size_t label);

}  // namespace hcn
