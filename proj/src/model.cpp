#include "mtkd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "mtkd/rng.hpp"

namespace mtkd {

namespace {

void check_dims(const std::vector<Index>& dims) {
  if (dims.size() < 2) {
    throw std::invalid_argument("Classifier: need at least input and output dims");
  }
  for (Index d : dims) {
    if (d < 1) throw std::invalid_argument("Classifier: layer dims must be >= 1");
  }
}

}  // namespace

Classifier::Classifier(std::vector<Index> layer_dims, std::vector<Matrix> weights,
                       std::vector<Vector> biases)
    : layer_dims_(std::move(layer_dims)),
      weights_(std::move(weights)),
      biases_(std::move(biases)) {
  check_dims(layer_dims_);
  const std::size_t layers = layer_dims_.size() - 1;
  if (weights_.size() != layers || biases_.size() != layers) {
    throw std::invalid_argument("Classifier: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    if (weights_[l].rows() != layer_dims_[l + 1] ||
        weights_[l].cols() != layer_dims_[l] ||
        biases_[l].size() != layer_dims_[l + 1]) {
      throw std::invalid_argument("Classifier: parameter shape mismatch at layer " +
                                  std::to_string(l));
    }
  }
}

Classifier Classifier::zeros(const std::vector<Index>& layer_dims) {
  check_dims(layer_dims);
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    weights.push_back(Matrix::Zero(layer_dims[l + 1], layer_dims[l]));
    biases.push_back(Vector::Zero(layer_dims[l + 1]));
  }
  return Classifier(layer_dims, std::move(weights), std::move(biases));
}

bool Classifier::all_finite() const {
  for (const auto& w : weights_) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : biases_) {
    if (!b.allFinite()) return false;
  }
  return true;
}

ParameterGradients ParameterGradients::zeros_like(const Classifier& model) {
  ParameterGradients g;
  for (Index l = 0; l < model.layer_count(); ++l) {
    g.weight_grads.push_back(Matrix::Zero(model.weights()[l].rows(),
                                          model.weights()[l].cols()));
    g.bias_grads.push_back(Vector::Zero(model.biases()[l].size()));
  }
  return g;
}

void ParameterGradients::accumulate(const ParameterGradients& other) {
  if (other.weight_grads.size() != weight_grads.size()) {
    throw std::invalid_argument("ParameterGradients: layer count mismatch");
  }
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    weight_grads[l] += other.weight_grads[l];
    bias_grads[l] += other.bias_grads[l];
  }
}

void ParameterGradients::scale(double factor) {
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    weight_grads[l] *= factor;
    bias_grads[l] *= factor;
  }
}

bool ParameterGradients::all_finite() const {
  for (const auto& w : weight_grads) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : bias_grads) {
    if (!b.allFinite()) return false;
  }
  return true;
}

Classifier init_classifier(const std::vector<Index>& layer_dims, std::uint64_t seed) {
  check_dims(layer_dims);
  Rng rng(seed);
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const Index fan_in = layer_dims[l];
    const Index fan_out = layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (Index r = 0; r < fan_out; ++r) {
      for (Index c = 0; c < fan_in; ++c) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    weights.push_back(std::move(w));
    biases.push_back(Vector::Zero(fan_out));
  }
  return Classifier(layer_dims, std::move(weights), std::move(biases));
}

LogitVector forward(const Classifier& model, const Vector& features) {
  if (features.size() != model.input_dim()) {
    throw std::invalid_argument("forward: feature length != input dim");
  }
  Vector a = features;
  for (Index l = 0; l < model.layer_count(); ++l) {
    Vector z = model.weights()[l] * a + model.biases()[l];
    if (l + 1 < model.layer_count()) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

ParameterGradients backward(const Classifier& model, const Vector& features,
                            const LogitVector& dl_dlogits) {
  if (features.size() != model.input_dim()) {
    throw std::invalid_argument("backward: feature length != input dim");
  }
  if (dl_dlogits.size() != model.class_count()) {
    throw std::invalid_argument("backward: upstream gradient length != class count");
  }
  const Index layers = model.layer_count();

  // activations[l] is the input to layer l; activations[layers] the logits.
  std::vector<Vector> activations(static_cast<std::size_t>(layers) + 1);
  activations[0] = features;
  for (Index l = 0; l < layers; ++l) {
    Vector z = model.weights()[l] * activations[l] + model.biases()[l];
    activations[l + 1] =
        (l + 1 < layers) ? Vector(z.array().tanh().matrix()) : std::move(z);
  }

  ParameterGradients grads = ParameterGradients::zeros_like(model);
  Vector delta = dl_dlogits;  // gradient at layer l's pre-activation
  for (Index l = layers - 1; l >= 0; --l) {
    grads.weight_grads[l] = delta * activations[l].transpose();
    grads.bias_grads[l] = delta;
    if (l > 0) {
      // activations[l] = tanh(z_{l-1}), so tanh' = 1 - a^2.
      delta = (model.weights()[l].transpose() * delta).array() *
              (1.0 - activations[l].array().square());
    }
  }
  return grads;
}

OptimizerState OptimizerState::sgd(double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.learning_rate = learning_rate;
  return s;
}

OptimizerState OptimizerState::adam(double learning_rate) {
  OptimizerState s;
  s.kind = OptimizerKind::kAdam;
  s.learning_rate = learning_rate;
  return s;
}

void optimizer_step(Classifier& model, const ParameterGradients& grads,
                    OptimizerState& state) {
  const std::size_t layers = static_cast<std::size_t>(model.layer_count());
  if (grads.weight_grads.size() != layers || grads.bias_grads.size() != layers) {
    throw std::invalid_argument("optimizer_step: gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    if (grads.weight_grads[l].rows() != model.weights()[l].rows() ||
        grads.weight_grads[l].cols() != model.weights()[l].cols() ||
        grads.bias_grads[l].size() != model.biases()[l].size()) {
      throw std::invalid_argument("optimizer_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    }
    if (!grads.weight_grads[l].allFinite() || !grads.bias_grads[l].allFinite()) {
      throw UpdateRejectedError("non-finite gradient at layer " + std::to_string(l));
    }
  }
  if (!(state.learning_rate > 0.0) || !std::isfinite(state.learning_rate)) {
    throw std::invalid_argument("optimizer_step: learning rate must be > 0");
  }

  if (state.kind == OptimizerKind::kAdam && state.m_weights.empty()) {
    for (std::size_t l = 0; l < layers; ++l) {
      state.m_weights.push_back(Matrix::Zero(model.weights()[l].rows(),
                                             model.weights()[l].cols()));
      state.v_weights.push_back(Matrix::Zero(model.weights()[l].rows(),
                                             model.weights()[l].cols()));
      state.m_biases.push_back(Vector::Zero(model.biases()[l].size()));
      state.v_biases.push_back(Vector::Zero(model.biases()[l].size()));
    }
  }

  state.step_count += 1;
  if (state.kind == OptimizerKind::kSgd) {
    for (std::size_t l = 0; l < layers; ++l) {
      model.weights()[l] -= state.learning_rate * grads.weight_grads[l];
      model.biases()[l] -= state.learning_rate * grads.bias_grads[l];
    }
  } else {
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t l = 0; l < layers; ++l) {
      auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.array().square().matrix();
        param.array() -= state.learning_rate * (m.array() / bc1) /
                         ((v.array() / bc2).sqrt() + state.epsilon);
      };
      update(model.weights()[l], state.m_weights[l], state.v_weights[l],
             grads.weight_grads[l]);
      update(model.biases()[l], state.m_biases[l], state.v_biases[l],
             grads.bias_grads[l]);
    }
  }

  for (std::size_t l = 0; l < layers; ++l) {
    if (!model.weights()[l].allFinite() || !model.biases()[l].allFinite()) {
      throw UpdateRejectedError("non-finite parameter after update at layer " +
                                std::to_string(l));
    }
  }
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw CorruptCheckpointError("corrupt checkpoint: truncated file");
    }
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const Classifier& m = ckpt.model;
  if (m.layer_dims().empty()) {
    throw std::invalid_argument("save_checkpoint: uninitialized model");
  }
  std::string out;
  out += "MTKD";
  put_u32(out, Checkpoint::kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(m.layer_dims().size()));
  for (Index d : m.layer_dims()) put_u32(out, static_cast<std::uint32_t>(d));
  for (Index l = 0; l < m.layer_count(); ++l) {
    const Matrix& w = m.weights()[l];
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) put_f64(out, w(r, c));
    }
    const Vector& b = m.biases()[l];
    for (Index i = 0; i < b.size(); ++i) put_f64(out, b[i]);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.language_tag.size()));
  out += ckpt.language_tag;
  put_u64(out, ckpt.seed);
  out.append(reinterpret_cast<const char*>(ckpt.config_digest.data()),
             ckpt.config_digest.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw DataError("save_checkpoint: cannot open " + path.string());
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw DataError("save_checkpoint: write failed for " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw CheckpointError("load_checkpoint: cannot open " + path.string());
  }
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());

  ByteReader r(data);
  if (r.bytes(4) != "MTKD") {
    throw CorruptCheckpointError("corrupt checkpoint: bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kFormatVersion) {
    throw UnsupportedVersionError("unsupported checkpoint version " +
                                  std::to_string(version));
  }
  const std::uint32_t n_dims = r.u32();
  if (n_dims < 2 || n_dims > 64) {
    throw CheckpointShapeError("checkpoint layer-dim count out of range: " +
                               std::to_string(n_dims));
  }
  std::vector<Index> dims(n_dims);
  for (auto& d : dims) {
    const std::uint32_t v = r.u32();
    if (v < 1 || v > (1u << 20)) {
      throw CheckpointShapeError("checkpoint layer dim out of range: " +
                                 std::to_string(v));
    }
    d = static_cast<Index>(v);
  }

  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w(dims[l + 1], dims[l]);
    for (Index row = 0; row < w.rows(); ++row) {
      for (Index col = 0; col < w.cols(); ++col) w(row, col) = r.f64();
    }
    Vector b(dims[l + 1]);
    for (Index i = 0; i < b.size(); ++i) b[i] = r.f64();
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }

  Checkpoint ckpt;
  ckpt.model = Classifier(dims, std::move(weights), std::move(biases));
  const std::uint32_t tag_len = r.u32();
  if (tag_len > (1u << 16)) {
    throw CorruptCheckpointError("corrupt checkpoint: language tag length " +
                                 std::to_string(tag_len));
  }
  ckpt.language_tag = r.bytes(tag_len);
  ckpt.seed = r.u64();
  const std::string digest = r.bytes(ckpt.config_digest.size());
  std::memcpy(ckpt.config_digest.data(), digest.data(), digest.size());
  if (r.remaining() != 0) {
    throw CorruptCheckpointError("corrupt checkpoint: trailing bytes");
  }
  return ckpt;
}

}  // namespace mtkd
