#pragma once

#include <functional>

#include "mtkd/types.hpp"

namespace mtkd {

/// Lower bound applied to every probability produced here, so that
/// log(p) stays finite even when the softmax saturates.
inline constexpr double kProbFloor = 1e-300;

/// softmax(x / temperature) with max-subtraction, entries floored at
/// kProbFloor. Kernel form: no input validation, any scalar type.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax_scaled(
    const Eigen::MatrixBase<Derived>& logits,
    typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  const Scalar shift = logits.maxCoeff();
  VectorX<Scalar> p =
      ((logits.array() - shift) / temperature).exp().matrix();
  p /= p.sum();
  return p.array().max(static_cast<Scalar>(kProbFloor)).matrix();
}

/// Temperature-smoothed distribution over classes. T > 1 flattens,
/// T < 1 sharpens, T = 1 is the plain softmax. The argmax of the input
/// is preserved for every T > 0.
ProbVector softmax_with_temperature(const LogitVector& logits, double temperature);

struct CosineResult {
  double value;     // in [-1, 1]; exactly 1 for a vector against itself
  bool zero_norm;   // true when either input had norm 0 and value fell back to 0
};

/// Cosine similarity of two equal-length vectors. A zero-norm input is
/// reported via the flag rather than raised, since downstream weighting
/// treats it as "no signal".
CosineResult cosine_similarity(const LogitVector& a, const LogitVector& b);

/// Softmax-sharpened mixing weights: softmax(similarities / tau).
/// tau < 1 concentrates mass on the most similar teacher; tau -> 0
/// approaches hard selection.
TeacherWeights sharpen_weights(const Vector& similarities, double tau);

/// KL(p || q) in nats. Terms with p_i = 0 contribute zero. Result is
/// clamped at 0 so rounding on near-identical inputs cannot go negative.
double kl_divergence(const ProbVector& p, const ProbVector& q);

/// -log softmax(logits)[label], computed via log-sum-exp.
double cross_entropy(const LogitVector& logits, Index label);

/// Gradient of cross_entropy with respect to the logits:
/// softmax(logits) - onehot(label). Entries sum to 0 within 1e-9.
LogitVector cross_entropy_grad(const LogitVector& logits, Index label);

struct FiniteDifferenceReport {
  double max_rel_error;  // worst coordinate; +inf when a probe was unusable
  bool all_finite;       // false when f or grad produced a non-finite value
};

/// Central-difference check of grad_f against f at a point. Per-coordinate
/// relative error uses denominator max(|analytic|, |numeric|, 1e-8).
FiniteDifferenceReport finite_difference_check(
    const std::function<double(const LogitVector&)>& f,
    const std::function<LogitVector(const LogitVector&)>& grad_f,
    const LogitVector& point, double step);

}  // namespace mtkd
