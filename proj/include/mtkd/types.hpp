#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace mtkd {

template <typename Scalar>
using VectorX = Eigen::Vector<Scalar, Eigen::Dynamic>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Pre-softmax class scores, one entry per class. Unconstrained values;
/// finiteness is checked at kernel entry.
using LogitVector = Vector;

/// A discrete distribution over classes: entries in [0,1], summing to 1
/// within 1e-9. Produced by the temperature softmax, which floors entries
/// at 1e-300 so downstream logs stay finite.
class ProbVector {
 public:
  explicit ProbVector(Vector values) : values_(std::move(values)) {
    if (values_.size() < 2) {
      throw std::invalid_argument("ProbVector: need at least 2 classes");
    }
    if (!values_.allFinite()) {
      throw std::invalid_argument("ProbVector: non-finite entry");
    }
    if (values_.minCoeff() < 0.0 || values_.maxCoeff() > 1.0 + 1e-12) {
      throw std::invalid_argument("ProbVector: entry outside [0,1]");
    }
    if (std::abs(values_.sum() - 1.0) > 1e-9) {
      throw std::invalid_argument("ProbVector: entries do not sum to 1");
    }
  }

  Index size() const { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }
  const Vector& values() const { return values_; }

 private:
  Vector values_;
};

/// Per-teacher mixing weights on the simplex: entries in (0,1], summing to 1
/// within 1e-9, ordered to match the teacher registry.
class TeacherWeights {
 public:
  explicit TeacherWeights(Vector values) : values_(std::move(values)) {
    if (values_.size() < 1) {
      throw std::invalid_argument("TeacherWeights: need at least 1 teacher");
    }
    if (!values_.allFinite()) {
      throw std::invalid_argument("TeacherWeights: non-finite entry");
    }
    if (values_.minCoeff() <= 0.0 || values_.maxCoeff() > 1.0 + 1e-12) {
      throw std::invalid_argument("TeacherWeights: entry outside (0,1]");
    }
    if (std::abs(values_.sum() - 1.0) > 1e-9) {
      throw std::invalid_argument("TeacherWeights: entries do not sum to 1");
    }
  }

  Index size() const { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }
  const Vector& values() const { return values_; }

  /// Index of the strictly largest weight (first of equals).
  Index argmax() const {
    Index i = 0;
    values_.maxCoeff(&i);
    return i;
  }

 private:
  Vector values_;
};

// Error taxonomy. The CLI maps these onto exit codes: configuration
// problems -> 2, data/file problems -> 3, training failures -> 4.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset file; carries the 1-based line number when known.
class ParseError : public DataError {
 public:
  ParseError(long line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// An optimizer update was refused (non-finite gradient or parameter);
/// the message names the offending layer.
class UpdateRejectedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtkd
