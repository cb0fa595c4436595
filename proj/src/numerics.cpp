#include "mtkd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtkd {

namespace {

void check_logits(const LogitVector& logits, const char* where) {
  if (logits.size() < 2) {
    throw std::invalid_argument(std::string(where) + ": need at least 2 classes");
  }
  if (!logits.allFinite()) {
    throw std::invalid_argument(std::string(where) + ": non-finite logit");
  }
}

}  // namespace

ProbVector softmax_with_temperature(const LogitVector& logits, double temperature) {
  check_logits(logits, "softmax_with_temperature");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("softmax_with_temperature: temperature must be > 0");
  }
  return ProbVector(softmax_scaled(logits, temperature));
}

CosineResult cosine_similarity(const LogitVector& a, const LogitVector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch");
  }
  if (a.size() == 0) {
    throw std::invalid_argument("cosine_similarity: empty input");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw std::invalid_argument("cosine_similarity: non-finite entry");
  }
  const double sa = a.squaredNorm();
  const double sb = b.squaredNorm();
  if (sa == 0.0 || sb == 0.0) {
    return {0.0, true};
  }
  // Denominator as sqrt(sa*sb) keeps self-similarity exactly 1.
  double value = a.dot(b) / std::sqrt(sa * sb);
  value = std::clamp(value, -1.0, 1.0);
  return {value, false};
}

TeacherWeights sharpen_weights(const Vector& similarities, double tau) {
  if (similarities.size() < 1) {
    throw std::invalid_argument("sharpen_weights: need at least 1 similarity");
  }
  if (!similarities.allFinite()) {
    throw std::invalid_argument("sharpen_weights: non-finite similarity");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("sharpen_weights: tau must be > 0");
  }
  return TeacherWeights(softmax_scaled(similarities, tau));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch");
  }
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      acc += p[i] * std::log(p[i] / q[i]);
    }
  }
  return std::max(acc, 0.0);
}

double cross_entropy(const LogitVector& logits, Index label) {
  check_logits(logits, "cross_entropy");
  if (label < 0 || label >= logits.size()) {
    throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double shift = logits.maxCoeff();
  const double lse = std::log((logits.array() - shift).exp().sum()) + shift;
  return lse - logits[label];
}

LogitVector cross_entropy_grad(const LogitVector& logits, Index label) {
  check_logits(logits, "cross_entropy_grad");
  if (label < 0 || label >= logits.size()) {
    throw std::invalid_argument("cross_entropy_grad: label out of range");
  }
  LogitVector grad = softmax_scaled(logits, 1.0);
  grad[label] -= 1.0;
  return grad;
}

FiniteDifferenceReport finite_difference_check(
    const std::function<double(const LogitVector&)>& f,
    const std::function<LogitVector(const LogitVector&)>& grad_f,
    const LogitVector& point, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw std::invalid_argument("finite_difference_check: step must be > 0");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const LogitVector analytic = grad_f(point);
  if (analytic.size() != point.size()) {
    throw std::invalid_argument("finite_difference_check: gradient length mismatch");
  }
  if (!analytic.allFinite()) {
    return {kInf, false};
  }
  double worst = 0.0;
  LogitVector probe = point;
  for (Index j = 0; j < point.size(); ++j) {
    probe[j] = point[j] + step;
    const double up = f(probe);
    probe[j] = point[j] - step;
    const double down = f(probe);
    probe[j] = point[j];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      return {kInf, false};
    }
    const double numeric = (up - down) / (2.0 * step);
    const double scale =
        std::max({std::abs(analytic[j]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[j] - numeric) / scale);
  }
  return {worst, true};
}

}  // namespace mtkd
