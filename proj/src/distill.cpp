#include "mtkd/distill.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace mtkd {

void DistillConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("DistillConfig: lambda must be in [0,1]");
  }
  if (!(smooth_temperature > 0.0) || !std::isfinite(smooth_temperature)) {
    throw std::invalid_argument("DistillConfig: smooth_temperature must be > 0");
  }
  if (!(sharpen_tau > 0.0) || !std::isfinite(sharpen_tau)) {
    throw std::invalid_argument("DistillConfig: sharpen_tau must be > 0");
  }
}

LossResult mtkd_loss_with_weights(const LogitVector& student_logits,
                                  const std::vector<LogitVector>& teacher_logits,
                                  const TeacherWeights& weights, Index label,
                                  const DistillConfig& cfg) {
  cfg.validate();
  if (teacher_logits.empty()) {
    throw std::invalid_argument("mtkd_loss: empty teacher set");
  }
  const Index n_teachers = static_cast<Index>(teacher_logits.size());
  if (weights.size() != n_teachers) {
    throw std::invalid_argument("mtkd_loss: weight count != teacher count");
  }
  for (const auto& t : teacher_logits) {
    if (t.size() != student_logits.size()) {
      throw std::invalid_argument("mtkd_loss: teacher/student logit length mismatch");
    }
  }

  const double kT = cfg.smooth_temperature;
  const ProbVector p_s = softmax_with_temperature(student_logits, kT);

  Vector per_kl(n_teachers);
  LogitVector kl_grad = LogitVector::Zero(student_logits.size());
  for (Index i = 0; i < n_teachers; ++i) {
    const ProbVector q = softmax_with_temperature(teacher_logits[i], kT);
    if (cfg.kl_direction == KlDirection::kStudentToTeacher) {
      per_kl[i] = kl_divergence(p_s, q);
      // d/ds_k KL(P_S || Q) = (1/T) P_S[k] (ln(P_S[k]/Q[k]) - KL)
      for (Index k = 0; k < student_logits.size(); ++k) {
        const double ratio = std::log(p_s[k] / q[k]);
        kl_grad[k] += weights[i] * p_s[k] * (ratio - per_kl[i]) / kT;
      }
    } else {
      per_kl[i] = kl_divergence(q, p_s);
      // d/ds_k KL(Q || P_S) = (1/T) (P_S[k] - Q[k])
      for (Index k = 0; k < student_logits.size(); ++k) {
        kl_grad[k] += weights[i] * (p_s[k] - q[k]) / kT;
      }
    }
  }

  const double ce = cross_entropy(student_logits, label);
  const LogitVector ce_grad = cross_entropy_grad(student_logits, label);
  const double kl_mix = weights.values().dot(per_kl);
  double kl_scale = cfg.lambda;
  if (cfg.t_squared_rescale) kl_scale *= kT * kT;

  LossResult out;
  out.loss = (1.0 - cfg.lambda) * ce + kl_scale * kl_mix;
  out.grad = (1.0 - cfg.lambda) * ce_grad + kl_scale * kl_grad;
  out.diag.teacher_weights = weights.values();
  out.diag.per_teacher_kl = per_kl;
  out.diag.ce_loss = ce;
  out.diag.kl_loss = kl_mix;
  out.diag.total_loss = out.loss;
  out.diag.selected_teacher = weights.argmax();
  return out;
}

LossResult mtkd_loss(const LogitVector& student_logits,
                     const std::vector<LogitVector>& teacher_logits, Index label,
                     const DistillConfig& cfg) {
  cfg.validate();
  if (teacher_logits.empty()) {
    throw std::invalid_argument("mtkd_loss: empty teacher set");
  }
  const Index n_teachers = static_cast<Index>(teacher_logits.size());
  Vector sims(n_teachers);
  bool degenerate = false;
  for (Index i = 0; i < n_teachers; ++i) {
    const CosineResult cs = cosine_similarity(student_logits, teacher_logits[i]);
    sims[i] = cs.value;
    degenerate = degenerate || cs.zero_norm;
  }
  const TeacherWeights weights = sharpen_weights(sims, cfg.sharpen_tau);

  LossResult out =
      mtkd_loss_with_weights(student_logits, teacher_logits, weights, label, cfg);
  out.diag.cosine_sims = sims;
  out.diag.degenerate_cosine = degenerate;
  return out;
}

LossResult kd_loss(const LogitVector& student_logits,
                   const LogitVector& teacher_logits, Index label,
                   const DistillConfig& cfg) {
  return mtkd_loss(student_logits, {teacher_logits}, label, cfg);
}

FtLossResult ft_loss(const LogitVector& student_logits, Index label) {
  return {cross_entropy(student_logits, label),
          cross_entropy_grad(student_logits, label)};
}

BatchLossResult batch_loss(LossParadigm paradigm, const Classifier& student,
                           const std::vector<Classifier>& teachers,
                           const std::vector<LabeledSample>& batch,
                           const DistillConfig& cfg) {
  if (batch.empty()) {
    throw std::invalid_argument("batch_loss: empty batch");
  }
  switch (paradigm) {
    case LossParadigm::kFt:
      if (!teachers.empty()) {
        throw std::invalid_argument("batch_loss: ft paradigm takes no teachers");
      }
      break;
    case LossParadigm::kKd:
      if (teachers.size() != 1) {
        throw std::invalid_argument("batch_loss: kd paradigm takes exactly 1 teacher");
      }
      break;
    case LossParadigm::kMtkd:
      if (teachers.empty()) {
        throw std::invalid_argument("batch_loss: mtkd paradigm needs >= 1 teacher");
      }
      break;
  }

  BatchLossResult out;
  out.grads = ParameterGradients::zeros_like(student);
  out.per_sample.reserve(batch.size());
  double loss_sum = 0.0;

  for (const LabeledSample& sample : batch) {
    const LogitVector student_logits = forward(student, sample.features);
    double loss = 0.0;
    LogitVector logit_grad;
    MtkdDiagnostics diag;
    if (paradigm == LossParadigm::kFt) {
      const FtLossResult r = ft_loss(student_logits, sample.label);
      loss = r.loss;
      logit_grad = r.grad;
      diag.ce_loss = r.loss;
      diag.total_loss = r.loss;
    } else {
      std::vector<LogitVector> teacher_logits;
      teacher_logits.reserve(teachers.size());
      for (const Classifier& t : teachers) {
        teacher_logits.push_back(forward(t, sample.features));
      }
      const LossResult r =
          mtkd_loss(student_logits, teacher_logits, sample.label, cfg);
      loss = r.loss;
      logit_grad = r.grad;
      diag = r.diag;
    }
    loss_sum += loss;
    out.grads.accumulate(backward(student, sample.features, logit_grad));
    out.per_sample.push_back(std::move(diag));
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  out.mean_loss = loss_sum * inv;
  out.grads.scale(inv);
  return out;
}

std::string diagnostics_json_line(std::int64_t step, std::int64_t sample_id,
                                  const std::string& language,
                                  const MtkdDiagnostics& diag) {
  nlohmann::json j;
  j["step"] = step;
  j["sample_id"] = sample_id;
  j["language"] = language;
  j["cs"] = std::vector<double>(diag.cosine_sims.begin(), diag.cosine_sims.end());
  j["weights"] = std::vector<double>(diag.teacher_weights.begin(),
                                     diag.teacher_weights.end());
  j["per_teacher_kl"] =
      std::vector<double>(diag.per_teacher_kl.begin(), diag.per_teacher_kl.end());
  j["ce"] = diag.ce_loss;
  j["total"] = diag.total_loss;
  return j.dump();
}

}  // namespace mtkd
