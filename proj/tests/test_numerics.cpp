#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"
#include "oracle.hpp"

using namespace mtkd;

namespace {

LogitVector logits(std::initializer_list<double> values) {
  LogitVector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

LogitVector random_logits(Rng& rng, Index n, double scale) {
  LogitVector v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("seed derivation and hashing are stable") {
  // Published FNV-1a 64 test vectors; checkpoint seeds depend on these.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);

  CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
  CHECK(derive_seed(1, "init") != derive_seed(1, "shuffle"));
  CHECK(derive_seed(1, "init") != derive_seed(2, "init"));
}

TEST_CASE("generator streams are deterministic and sane") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.normal();
    CHECK(std::isfinite(z));
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.05);

  for (int i = 0; i < 1000; ++i) CHECK(rng.below(17) < 17);
}

TEST_CASE("softmax matches the worked examples") {
  const ProbVector uniform = softmax_with_temperature(logits({1, 1, 1, 1}), 5.0);
  for (Index i = 0; i < 4; ++i) CHECK(uniform[i] == doctest::Approx(0.25).epsilon(1e-12));

  const ProbVector t1 = softmax_with_temperature(logits({2, 0}), 1.0);
  CHECK(std::abs(t1[0] - 0.880797) < 1e-6);
  CHECK(std::abs(t1[1] - 0.119203) < 1e-6);

  const ProbVector t2 = softmax_with_temperature(logits({2, 0}), 2.0);
  CHECK(std::abs(t2[0] - 0.731059) < 1e-6);
  CHECK(std::abs(t2[1] - 0.268941) < 1e-6);
}

TEST_CASE("softmax rejects bad inputs") {
  CHECK_THROWS_AS(softmax_with_temperature(logits({1, 2}), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(softmax_with_temperature(logits({1, 2}), -1.0),
                  std::invalid_argument);
  LogitVector bad = logits({1, 2});
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax_with_temperature(bad, 1.0), std::invalid_argument);
  bad[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax_with_temperature(bad, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_with_temperature(LogitVector::Zero(1), 1.0),
                  std::invalid_argument);
}

TEST_CASE("softmax survives extreme logits and stays normalized") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    LogitVector l = random_logits(rng, n, 1.0 + 3000.0 * rng.uniform());
    l[static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)))] =
        rng.uniform(-1e4, 1e4);
    const ProbVector p = softmax_with_temperature(l, 0.25 + 10.0 * rng.uniform());
    CHECK(std::abs(p.values().sum() - 1.0) < 1e-9);
    CHECK(p.values().minCoeff() >= kProbFloor);
  }
}

TEST_CASE("softmax temperature behaviour") {
  const LogitVector l = logits({3.0, 1.0, -0.5, 0.25});
  double prev_max = 2.0;
  for (double t : {0.25, 0.5, 1.0, 2.0, 5.0, 25.0, 1000.0}) {
    const ProbVector p = softmax_with_temperature(l, t);
    Index arg = 0;
    const double mx = p.values().maxCoeff(&arg);
    CHECK(arg == 0);  // argmax of the logits
    CHECK(mx <= prev_max + 1e-15);
    prev_max = mx;
  }
  const ProbVector flat = softmax_with_temperature(l, 1e6);
  CHECK((flat.values().array() - 0.25).abs().maxCoeff() < 1e-3);
}

TEST_CASE("softmax agrees with the quad-precision reference") {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(7));
    const LogitVector l = random_logits(rng, n, 10.0);
    const double t = 0.5 + 9.5 * rng.uniform();
    const ProbVector p = softmax_with_temperature(l, t);
    const auto ref = oracle::softmax(oracle::from_eigen(l),
                                     static_cast<oracle::f128>(t));
    for (Index i = 0; i < n; ++i) {
      CHECK(std::abs(p[i] - oracle::to_double(ref[static_cast<std::size_t>(i)])) <
            1e-12);
    }
  }
}

TEST_CASE("cosine similarity matches the worked examples") {
  CHECK(cosine_similarity(logits({1, 0}), logits({0, 1})).value == 0.0);
  CHECK(std::abs(cosine_similarity(logits({1, 1}), logits({1, 0})).value -
                 0.707107) < 1e-6);

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const LogitVector v = random_logits(rng, 4, 5.0);
    const CosineResult self = cosine_similarity(v, v);
    CHECK(self.value == 1.0);  // exact by construction
    CHECK_FALSE(self.zero_norm);
  }
}

TEST_CASE("cosine similarity zero-norm fallback and clamping") {
  const CosineResult z = cosine_similarity(LogitVector::Zero(3), logits({1, 2, 3}));
  CHECK(z.value == 0.0);
  CHECK(z.zero_norm);
  const CosineResult z2 = cosine_similarity(logits({1, 2, 3}), LogitVector::Zero(3));
  CHECK(z2.value == 0.0);
  CHECK(z2.zero_norm);

  Rng rng(37);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const CosineResult r =
        cosine_similarity(random_logits(rng, n, 8.0), random_logits(rng, n, 8.0));
    CHECK(r.value >= -1.0);
    CHECK(r.value <= 1.0);
    CHECK_FALSE(r.zero_norm);
  }
}

TEST_CASE("cosine similarity is scale invariant and matches the reference") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const LogitVector a = random_logits(rng, n, 4.0);
    const LogitVector b = random_logits(rng, n, 4.0);
    const double alpha = 0.01 + 100.0 * rng.uniform();
    const double beta = 0.01 + 100.0 * rng.uniform();
    const double cs = cosine_similarity(a, b).value;
    CHECK(std::abs(cs - cosine_similarity(alpha * a, beta * b).value) < 1e-12);
    CHECK(std::abs(cs - oracle::to_double(oracle::cosine(
                            oracle::from_eigen(a), oracle::from_eigen(b)))) <
          1e-12);
  }
}

TEST_CASE("cosine similarity rejects mismatched lengths") {
  CHECK_THROWS_AS(cosine_similarity(logits({1, 2}), logits({1, 2, 3})),
                  std::invalid_argument);
}

TEST_CASE("weight sharpening matches the worked examples") {
  Vector equal(3);
  equal << 0.5, 0.5, 0.5;
  const TeacherWeights uniform = sharpen_weights(equal, 0.1);
  for (Index i = 0; i < 3; ++i) {
    CHECK(uniform[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  Vector sims(3);
  sims << 0.9, 0.5, 0.1;
  const TeacherWeights sharp = sharpen_weights(sims, 0.1);
  CHECK(std::abs(sharp[0] - 0.981691) < 1e-5);
  CHECK(std::abs(sharp[1] - 0.017980) < 1e-5);
  CHECK(std::abs(sharp[2] - 0.000329) < 1e-5);

  // tau = 1.0 values come from the reference softmax, not a hand constant;
  // sharpening with the smaller tau must concentrate more mass on top.
  const TeacherWeights mild = sharpen_weights(sims, 1.0);
  const auto ref = oracle::softmax(oracle::from_eigen(sims),
                                   static_cast<oracle::f128>(1.0));
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(mild[i] - oracle::to_double(ref[static_cast<std::size_t>(i)])) <
          1e-12);
  }
  CHECK(sharp[0] > mild[0]);
}

TEST_CASE("weight sharpening properties") {
  CHECK_THROWS_AS(sharpen_weights(Vector::Ones(2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sharpen_weights(Vector::Ones(2), -0.5), std::invalid_argument);
  CHECK_THROWS_AS(sharpen_weights(Vector(0), 0.1), std::invalid_argument);

  // Single teacher: weight 1 regardless of the similarity value.
  Vector one(1);
  one << -0.3;
  CHECK(sharpen_weights(one, 0.1)[0] == 1.0);

  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index m = 1 + static_cast<Index>(rng.below(5));
    Vector s(m);
    for (Index i = 0; i < m; ++i) s[i] = rng.uniform(-1.0, 1.0);
    const TeacherWeights w = sharpen_weights(s, 0.05 + 2.0 * rng.uniform());
    CHECK(std::abs(w.values().sum() - 1.0) < 1e-9);
    CHECK(w.values().minCoeff() > 0.0);
    Index sim_arg = 0;
    s.maxCoeff(&sim_arg);
    Index w_arg = w.argmax();
    CHECK(w.values()[sim_arg] == w.values()[w_arg]);
  }

  // Hard-selection limit.
  Vector distinct(3);
  distinct << 0.2, 0.9, -0.4;
  CHECK(sharpen_weights(distinct, 1e-4)[1] > 1.0 - 1e-6);
}

TEST_CASE("kl divergence matches the worked examples") {
  Vector half(2);
  half << 0.5, 0.5;
  Vector skew(2);
  skew << 0.25, 0.75;
  CHECK(std::abs(kl_divergence(ProbVector(half), ProbVector(skew)) - 0.143841) <
        1e-6);

  Vector point(2);
  point << 1.0, 0.0;
  CHECK(std::abs(kl_divergence(ProbVector(point), ProbVector(half)) - 0.693147) <
        1e-6);

  CHECK(kl_divergence(ProbVector(skew), ProbVector(skew)) == 0.0);
}

TEST_CASE("kl divergence properties against the reference") {
  Vector half(2);
  half << 0.5, 0.5;
  Vector quarter(4);
  quarter << 0.25, 0.25, 0.25, 0.25;
  CHECK_THROWS_AS(kl_divergence(ProbVector(half), ProbVector(quarter)),
                  std::invalid_argument);

  Rng rng(47);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const ProbVector p = softmax_with_temperature(random_logits(rng, n, 6.0), 1.0);
    const ProbVector q = softmax_with_temperature(random_logits(rng, n, 6.0), 1.0);
    const double d = kl_divergence(p, q);
    CHECK(d >= 0.0);
    CHECK(std::abs(d - oracle::to_double(oracle::kl(oracle::from_eigen(p.values()),
                                                    oracle::from_eigen(q.values())))) <
          1e-12);
    CHECK(kl_divergence(p, p) == 0.0);
    if (d == 0.0) {
      CHECK((p.values() - q.values()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("cross entropy matches the worked examples") {
  CHECK(std::abs(cross_entropy(logits({0, 0, 0, 0}), 2) - std::log(4.0)) < 1e-6);
  CHECK(cross_entropy(logits({100, 0, 0, 0}), 0) < 1e-6);
  CHECK(std::abs(cross_entropy(logits({1, 2, 3}), 1) - 1.407606) < 1e-6);
  CHECK_THROWS_AS(cross_entropy(logits({1, 2, 3}), 3), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(logits({1, 2, 3}), -1), std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches the worked examples") {
  const LogitVector g = cross_entropy_grad(logits({0, 0, 0, 0}), 0);
  CHECK(std::abs(g[0] + 0.75) < 1e-9);
  for (Index i = 1; i < 4; ++i) CHECK(std::abs(g[i] - 0.25) < 1e-9);

  const LogitVector sat = cross_entropy_grad(logits({100, 0, 0, 0}), 0);
  CHECK(sat.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("cross entropy and gradient match the reference") {
  Rng rng(53);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const LogitVector l = random_logits(rng, n, 8.0);
    const Index label = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const auto ref_logits = oracle::from_eigen(l);
    CHECK(std::abs(cross_entropy(l, label) -
                   oracle::to_double(oracle::cross_entropy(
                       ref_logits, static_cast<std::size_t>(label)))) < 1e-12);
    const LogitVector g = cross_entropy_grad(l, label);
    CHECK(std::abs(g.sum()) < 1e-9);
    const auto ref_grad =
        oracle::cross_entropy_grad(ref_logits, static_cast<std::size_t>(label));
    for (Index i = 0; i < n; ++i) {
      CHECK(std::abs(g[i] - oracle::to_double(ref_grad[static_cast<std::size_t>(i)])) <
            1e-12);
    }
  }
}

TEST_CASE("finite difference check validates the analytic gradients") {
  const auto ce = [](const LogitVector& x) { return cross_entropy(x, 0); };
  const auto ce_grad = [](const LogitVector& x) {
    return cross_entropy_grad(x, 0);
  };
  const FiniteDifferenceReport at_origin =
      finite_difference_check(ce, ce_grad, logits({0, 0, 0, 0}), 1e-5);
  CHECK(at_origin.all_finite);
  CHECK(at_origin.max_rel_error < 1e-5);

  Rng rng(59);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(6));
    const Index label = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const auto f = [label](const LogitVector& x) {
      return cross_entropy(x, label);
    };
    const auto grad = [label](const LogitVector& x) {
      return cross_entropy_grad(x, label);
    };
    // Moderate logit scale keeps every softmax entry well above the
    // cancellation floor of the central difference.
    const FiniteDifferenceReport r =
        finite_difference_check(f, grad, random_logits(rng, n, 1.5), 1e-5);
    CHECK(r.all_finite);
    worst = std::max(worst, r.max_rel_error);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("finite difference check edge behaviour") {
  const auto constant = [](const LogitVector&) { return 3.5; };
  const auto zero_grad = [](const LogitVector& x) {
    return LogitVector(LogitVector::Zero(x.size()));
  };
  const FiniteDifferenceReport flat =
      finite_difference_check(constant, zero_grad, logits({1, 2, 3}), 1e-5);
  CHECK(flat.all_finite);
  CHECK(flat.max_rel_error == 0.0);

  const auto broken = [](const LogitVector&) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  const FiniteDifferenceReport bad =
      finite_difference_check(broken, zero_grad, logits({1, 2}), 1e-5);
  CHECK_FALSE(bad.all_finite);
}
