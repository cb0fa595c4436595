#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtkd/types.hpp"

namespace mtkd {

/// Row = true class, column = predicted class.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  Index class_count() const { return counts.rows(); }
  std::int64_t total() const { return counts.sum(); }
  std::int64_t trace() const { return counts.trace(); }
};

ConfusionMatrix confusion(const std::vector<Index>& preds,
                          const std::vector<Index>& labels, Index class_count);

enum class MetricKind { kUr, kWr, kUa, kWa };

std::string to_string(MetricKind kind);

/// The four headline metrics, all on a 0-100 scale.
///   recall_c = counts[c][c] / row_c
///   UR = unweighted mean recall over supported classes
///   WR = support-weighted mean recall = overall accuracy
///   UA = unweighted mean one-vs-rest accuracy (TP_c + TN_c) / N
///   WA = support-weighted mean of the same one-vs-rest accuracies
/// Classes with zero true samples are excluded from the unweighted means
/// and listed in zero_support_classes; their per_class_recall entry is 0.
struct MetricReport {
  std::vector<double> per_class_recall;
  double ur = 0.0;
  double wr = 0.0;
  double ua = 0.0;
  double wa = 0.0;
  std::map<std::string, std::pair<double, double>> ci;  // metric name -> bounds
  std::int64_t n_samples = 0;
  std::vector<Index> zero_support_classes;

  // Row identifiers used by render_report.
  std::string paradigm;
  std::string language;
  std::string split_label;
};

MetricReport compute_metrics(const ConfusionMatrix& cm);

struct BootstrapResult {
  double lower = 0.0;
  double upper = 0.0;
  // Resamples where some class stayed absent through all retries and was
  // dropped from that resample's unweighted mean.
  int dropped_class_resamples = 0;
};

/// Percentile bootstrap over (pred, label) pairs resampled with replacement.
/// Bounds are the nearest-rank (1-confidence)/2 and (1+confidence)/2
/// percentiles of the resampled metric. For the unweighted metrics (UR, UA)
/// a resample missing one of the originally present classes is redrawn, at
/// most 10 times, before the class is dropped from that resample.
BootstrapResult bootstrap_ci(const std::vector<Index>& preds,
                             const std::vector<Index>& labels, MetricKind metric,
                             int n_resamples, std::uint64_t seed,
                             double confidence = 0.95);

struct RenderedReport {
  std::string csv;   // split,language,paradigm,UR,UR_lo,UR_hi,WR,WR_lo,WR_hi,UA,WA
  std::string text;  // aligned human-readable table
};

/// Assembles per-split rows grouped by (paradigm, language) in first-seen
/// order, appending to each group a Mean row that averages every numeric
/// column (confidence bounds included) over the group's splits.
RenderedReport render_report(const std::vector<MetricReport>& reports);

}  // namespace mtkd
