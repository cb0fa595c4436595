#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/model.hpp"
#include "mtkd/numerics.hpp"
#include "mtkd/types.hpp"

namespace mtkd {

enum class KlDirection { kStudentToTeacher, kTeacherToStudent };

/// Hyperparameters of the distillation objective
///   L = (1 - lambda) * CE + lambda * sum_i w_i * KL_i
/// where w = softmax(cosine similarities / sharpen_tau) per sample and the
/// KL terms compare softmax(logits / smooth_temperature) distributions.
struct DistillConfig {
  double lambda = 0.25;
  double smooth_temperature = 5.0;
  double sharpen_tau = 0.1;
  KlDirection kl_direction = KlDirection::kStudentToTeacher;
  // Classical distillation multiplies the KL term by T^2 to balance
  // gradient magnitude against CE; off by default.
  bool t_squared_rescale = false;

  void validate() const;
};

/// Per-sample observability record. For a cross-entropy-only sample the
/// teacher-indexed vectors are empty and selected_teacher is -1.
struct MtkdDiagnostics {
  Vector cosine_sims;       // one per teacher
  Vector teacher_weights;   // sharpened mixture, simplex-valued
  Vector per_teacher_kl;    // nats, each >= 0
  double ce_loss = 0.0;
  double kl_loss = 0.0;     // weighted KL mixture, before lambda
  double total_loss = 0.0;
  Index selected_teacher = -1;  // argmax weight
  bool degenerate_cosine = false;  // some similarity hit the zero-norm fallback
};

struct LossResult {
  double loss = 0.0;
  LogitVector grad;  // with respect to the student logits
  MtkdDiagnostics diag;
};

/// Multi-teacher distillation loss for one sample. The gradient is taken
/// with respect to the student logits only: teacher logits and the mixing
/// weights are treated as constants (stop-gradient).
LossResult mtkd_loss(const LogitVector& student_logits,
                     const std::vector<LogitVector>& teacher_logits,
                     Index label, const DistillConfig& cfg);

/// Same objective with the mixing weights supplied by the caller instead of
/// recomputed from similarities. This is the frozen-weight evaluation the
/// stop-gradient contract refers to; finite-difference checks of mtkd_loss
/// gradients must probe this function with the base point's weights.
LossResult mtkd_loss_with_weights(const LogitVector& student_logits,
                                  const std::vector<LogitVector>& teacher_logits,
                                  const TeacherWeights& weights, Index label,
                                  const DistillConfig& cfg);

/// Single-teacher distillation: mtkd_loss with M=1, where the mixing
/// weight collapses to exactly [1].
LossResult kd_loss(const LogitVector& student_logits,
                   const LogitVector& teacher_logits, Index label,
                   const DistillConfig& cfg);

struct FtLossResult {
  double loss = 0.0;
  LogitVector grad;
};

/// Plain cross-entropy fine-tuning loss; the lambda=0 degenerate case of
/// mtkd_loss, bit for bit.
FtLossResult ft_loss(const LogitVector& student_logits, Index label);

enum class LossParadigm { kFt, kKd, kMtkd };

struct BatchLossResult {
  double mean_loss = 0.0;
  ParameterGradients grads;  // mean over the batch
  std::vector<MtkdDiagnostics> per_sample;
};

/// Mean loss and mean student-parameter gradients over a batch. Teacher
/// weights are computed per sample, never pooled across the batch; the
/// reduction runs in sample index order so results are bit-deterministic.
/// Teacher count must match the paradigm: 0 for ft, 1 for kd, >=1 for mtkd.
BatchLossResult batch_loss(LossParadigm paradigm, const Classifier& student,
                           const std::vector<Classifier>& teachers,
                           const std::vector<LabeledSample>& batch,
                           const DistillConfig& cfg);

/// One JSONL diagnostics line: step, sample id, language, cs array, weights,
/// per-teacher KL, CE, total.
std::string diagnostics_json_line(std::int64_t step, std::int64_t sample_id,
                                  const std::string& language,
                                  const MtkdDiagnostics& diag);

}  // namespace mtkd
