#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "mtkd/model.hpp"
#include "mtkd/numerics.hpp"
#include "mtkd/rng.hpp"

using namespace mtkd;
namespace fs = std::filesystem;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

bool same_parameters(const Classifier& a, const Classifier& b) {
  if (a.layer_dims() != b.layer_dims()) return false;
  for (Index l = 0; l < a.layer_count(); ++l) {
    if (a.weights()[l] != b.weights()[l]) return false;
    if (a.biases()[l] != b.biases()[l]) return false;
  }
  return true;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("initialization is deterministic and respects the uniform bounds") {
  const std::vector<Index> dims = {16, 32, 4};
  const Classifier a = init_classifier(dims, 7);
  const Classifier b = init_classifier(dims, 7);
  CHECK(same_parameters(a, b));
  CHECK_FALSE(same_parameters(a, init_classifier(dims, 8)));

  for (Index l = 0; l < a.layer_count(); ++l) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    CHECK(a.weights()[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(a.biases()[l].cwiseAbs().maxCoeff() == 0.0);
  }

  const Classifier small = init_classifier({4, 3}, 123);
  CHECK(small.biases()[0] == Vector::Zero(3));

  CHECK_THROWS_AS(init_classifier({}, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_classifier({5}, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_classifier({5, 0, 3}, 1), std::invalid_argument);
}

TEST_CASE("forward computes the affine-tanh composition") {
  Classifier zero = Classifier::zeros({3, 5, 2});
  CHECK(forward(zero, vec({1.0, -2.0, 0.5})) == Vector::Zero(2));

  Classifier identity = Classifier::zeros({4, 4});
  identity.weights()[0] = Matrix::Identity(4, 4);
  const Vector x = vec({1, 2, 3, 4});
  CHECK(forward(identity, x) == x);

  const Classifier model = init_classifier({6, 8, 3}, 99);
  const Vector features = vec({0.1, -0.4, 2.0, 1.5, -1.0, 0.0});
  CHECK(forward(model, features) == forward(model, features));
  CHECK_THROWS_AS(forward(model, vec({1, 2})), std::invalid_argument);
}

TEST_CASE("backward matches finite differences through the network") {
  Rng rng(17);
  const std::vector<Index> dims = {4, 8, 4};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Classifier model = init_classifier(dims, rng.next_u64());
    Vector features(4);
    for (Index i = 0; i < 4; ++i) features[i] = rng.uniform(-2.0, 2.0);
    const Index label = static_cast<Index>(rng.below(4));

    // Loss as a function of one flattened parameter vector.
    const ParameterGradients grads = backward(
        model, features, cross_entropy_grad(forward(model, features), label));

    for (Index l = 0; l < model.layer_count(); ++l) {
      for (Index r = 0; r < model.weights()[l].rows(); ++r) {
        for (Index c = 0; c < model.weights()[l].cols(); ++c) {
          const double h = 1e-5;
          Classifier bumped = model;
          bumped.weights()[l](r, c) += h;
          const double up = cross_entropy(forward(bumped, features), label);
          bumped.weights()[l](r, c) -= 2 * h;
          const double down = cross_entropy(forward(bumped, features), label);
          const double numeric = (up - down) / (2 * h);
          const double analytic = grads.weight_grads[l](r, c);
          const double denom =
              std::max({std::abs(analytic), std::abs(numeric), 1e-8});
          worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
      }
      for (Index r = 0; r < model.biases()[l].size(); ++r) {
        const double h = 1e-5;
        Classifier bumped = model;
        bumped.biases()[l][r] += h;
        const double up = cross_entropy(forward(bumped, features), label);
        bumped.biases()[l][r] -= 2 * h;
        const double down = cross_entropy(forward(bumped, features), label);
        const double numeric = (up - down) / (2 * h);
        const double analytic = grads.bias_grads[l][r];
        const double denom =
            std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward edge cases") {
  const Classifier model = init_classifier({5, 7, 3}, 3);
  const Vector features = vec({1, 0, -1, 0.5, 2});

  const ParameterGradients zero =
      backward(model, features, LogitVector::Zero(3));
  for (Index l = 0; l < model.layer_count(); ++l) {
    CHECK(zero.weight_grads[l].cwiseAbs().maxCoeff() == 0.0);
    CHECK(zero.bias_grads[l].cwiseAbs().maxCoeff() == 0.0);
  }

  // Linear model: dL/dW is the outer product of upstream grad and input.
  const Classifier linear = init_classifier({4, 3}, 11);
  const Vector x = vec({1.0, -2.0, 0.5, 3.0});
  const LogitVector up = vec({0.2, -0.7, 0.5});
  const ParameterGradients g = backward(linear, x, up);
  const Matrix outer = up * x.transpose();
  CHECK((g.weight_grads[0] - outer).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((g.bias_grads[0] - up).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(backward(model, vec({1, 2}), LogitVector::Zero(3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(backward(model, features, LogitVector::Zero(4)),
                  std::invalid_argument);
}

TEST_CASE("sgd and adam steps follow the update formulas") {
  Classifier theta = Classifier::zeros({1, 1});
  theta.weights()[0](0, 0) = 1.0;
  ParameterGradients g = ParameterGradients::zeros_like(theta);
  g.weight_grads[0](0, 0) = 0.5;

  OptimizerState sgd = OptimizerState::sgd(0.1);
  optimizer_step(theta, g, sgd);
  CHECK(theta.weights()[0](0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(sgd.step_count == 1);

  // Adam with zero gradient leaves parameters untouched.
  Classifier adam_model = init_classifier({3, 2}, 5);
  const Classifier before = adam_model;
  OptimizerState adam = OptimizerState::adam(0.01);
  optimizer_step(adam_model, ParameterGradients::zeros_like(adam_model), adam);
  CHECK(same_parameters(adam_model, before));
  CHECK(adam.step_count == 1);

  // First Adam step moves by about -lr * sign(g) regardless of magnitude.
  for (double c : {1e-4, 0.5, 40.0}) {
    Classifier m = Classifier::zeros({1, 1});
    ParameterGradients cg = ParameterGradients::zeros_like(m);
    cg.weight_grads[0](0, 0) = c;
    OptimizerState st = OptimizerState::adam(0.01);
    optimizer_step(m, cg, st);
    CHECK(m.weights()[0](0, 0) == doctest::Approx(-0.01).epsilon(1e-3));
  }
}

TEST_CASE("optimizer rejects non-finite updates naming the layer") {
  Classifier model = init_classifier({2, 3, 2}, 9);
  ParameterGradients g = ParameterGradients::zeros_like(model);
  g.weight_grads[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  OptimizerState st = OptimizerState::sgd(0.1);
  CHECK_THROWS_WITH_AS(optimizer_step(model, g, st),
                       doctest::Contains("layer 1"), UpdateRejectedError);
  CHECK(model.all_finite());

  // Overflow to non-finite parameters is also rejected.
  Classifier tiny = Classifier::zeros({1, 1});
  tiny.weights()[0](0, 0) = std::numeric_limits<double>::max();
  ParameterGradients big = ParameterGradients::zeros_like(tiny);
  big.weight_grads[0](0, 0) = -std::numeric_limits<double>::max();
  OptimizerState st2 = OptimizerState::sgd(1e10);
  CHECK_THROWS_AS(optimizer_step(tiny, big, st2), UpdateRejectedError);
}

TEST_CASE("checkpoint round trip preserves forward outputs bit for bit") {
  const fs::path path = temp_file("mtkd_test_roundtrip.ckpt");
  Checkpoint ckpt;
  ckpt.model = init_classifier({6, 10, 4}, 77);
  ckpt.language_tag = "fi";
  ckpt.seed = 0xDEADBEEFCAFEF00DULL;
  for (std::size_t i = 0; i < ckpt.config_digest.size(); ++i) {
    ckpt.config_digest[i] = static_cast<std::uint8_t>(i * 7);
  }
  save_checkpoint(ckpt, path);
  const Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.language_tag == "fi");
  CHECK(loaded.seed == ckpt.seed);
  CHECK(loaded.config_digest == ckpt.config_digest);
  CHECK(same_parameters(loaded.model, ckpt.model));

  Rng rng(101);
  for (int i = 0; i < 10; ++i) {
    Vector x(6);
    for (Index d = 0; d < 6; ++d) x[d] = rng.normal();
    CHECK(forward(loaded.model, x) == forward(ckpt.model, x));
  }

  // Same model saved twice gives identical bytes.
  const fs::path path2 = temp_file("mtkd_test_roundtrip2.ckpt");
  save_checkpoint(ckpt, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("checkpoint loading rejects malformed files distinctly") {
  const fs::path path = temp_file("mtkd_test_malformed.ckpt");
  Checkpoint ckpt;
  ckpt.model = init_classifier({4, 5, 3}, 13);
  ckpt.language_tag = "en";
  save_checkpoint(ckpt, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  auto write_bytes = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
  };

  // Truncation at several depths -> corrupt, not a crash or wrong error.
  for (std::size_t keep : {std::size_t{2}, std::size_t{10}, bytes.size() - 4}) {
    write_bytes(bytes.substr(0, keep));
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpointError);
  }

  // Trailing garbage is corruption too.
  write_bytes(bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpointError);

  // Wrong magic.
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write_bytes(wrong_magic);
  CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpointError);

  // Bumped format version.
  std::string wrong_version = bytes;
  wrong_version[4] = 2;
  write_bytes(wrong_version);
  CHECK_THROWS_AS(load_checkpoint(path), UnsupportedVersionError);

  // Absurd layer count.
  std::string wrong_shape = bytes;
  wrong_shape[8] = 1;
  write_bytes(wrong_shape);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointShapeError);

  CHECK_THROWS_AS(load_checkpoint(temp_file("mtkd_does_not_exist.ckpt")),
                  CheckpointError);
  fs::remove(path);
}

TEST_CASE("default optimizer separates linearly separable data") {
  // 2-class problem in D=4: class means well apart, no noise overlap.
  Rng rng(2024);
  std::vector<Vector> xs;
  std::vector<Index> ys;
  for (int i = 0; i < 200; ++i) {
    Vector x(4);
    for (Index d = 0; d < 4; ++d) x[d] = rng.normal();
    const Index y = i % 2;
    x[0] += y == 0 ? 4.0 : -4.0;
    xs.push_back(x);
    ys.push_back(y);
  }

  Classifier model = init_classifier({4, 8, 2}, 3);
  OptimizerState opt = OptimizerState::adam(1e-2);
  for (int epoch = 0; epoch < 200; ++epoch) {
    ParameterGradients batch = ParameterGradients::zeros_like(model);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const LogitVector logits = forward(model, xs[i]);
      batch.accumulate(backward(model, xs[i], cross_entropy_grad(logits, ys[i])));
    }
    batch.scale(1.0 / static_cast<double>(xs.size()));
    optimizer_step(model, batch, opt);
  }

  int correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Index arg = 0;
    forward(model, xs[i]).maxCoeff(&arg);
    correct += arg == ys[i];
  }
  CHECK(correct >= 198);  // >= 0.99 training accuracy
}
