#include "mtkd/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mtkd/rng.hpp"

namespace mtkd {

namespace {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

double metric_from_counts(const CountMatrix& counts, MetricKind kind) {
  const Index k = counts.rows();
  const std::int64_t total = counts.sum();
  switch (kind) {
    case MetricKind::kWr:
      return 100.0 * static_cast<double>(counts.trace()) /
             static_cast<double>(total);
    case MetricKind::kUr: {
      double recall_sum = 0.0;
      Index supported = 0;
      for (Index c = 0; c < k; ++c) {
        const std::int64_t row = counts.row(c).sum();
        if (row == 0) continue;
        recall_sum += static_cast<double>(counts(c, c)) / static_cast<double>(row);
        ++supported;
      }
      return 100.0 * recall_sum / static_cast<double>(supported);
    }
    case MetricKind::kUa: {
      std::int64_t numerator = 0;
      Index supported = 0;
      for (Index c = 0; c < k; ++c) {
        const std::int64_t row = counts.row(c).sum();
        if (row == 0) continue;
        const std::int64_t col = counts.col(c).sum();
        numerator += total - row - col + 2 * counts(c, c);  // TP + TN
        ++supported;
      }
      return 100.0 * static_cast<double>(numerator) /
             static_cast<double>(supported * total);
    }
    case MetricKind::kWa: {
      std::int64_t numerator = 0;
      for (Index c = 0; c < k; ++c) {
        const std::int64_t row = counts.row(c).sum();
        if (row == 0) continue;
        const std::int64_t col = counts.col(c).sum();
        numerator += row * (total - row - col + 2 * counts(c, c));
      }
      return 100.0 * static_cast<double>(numerator) /
             static_cast<double>(total * total);
    }
  }
  throw std::logic_error("metric_from_counts: unreachable");
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kUr: return "UR";
    case MetricKind::kWr: return "WR";
    case MetricKind::kUa: return "UA";
    case MetricKind::kWa: return "WA";
  }
  throw std::logic_error("to_string(MetricKind): unreachable");
}

ConfusionMatrix confusion(const std::vector<Index>& preds,
                          const std::vector<Index>& labels, Index class_count) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion: preds/labels length mismatch");
  }
  if (preds.empty()) {
    throw std::invalid_argument("confusion: empty input");
  }
  if (class_count < 1) {
    throw std::invalid_argument("confusion: class count must be >= 1");
  }
  ConfusionMatrix cm;
  cm.counts = CountMatrix::Zero(class_count, class_count);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count || preds[i] < 0 ||
        preds[i] >= class_count) {
      throw std::invalid_argument("confusion: class index out of range");
    }
    cm.counts(labels[i], preds[i]) += 1;
  }
  return cm;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
  const CountMatrix& counts = cm.counts;
  const Index k = counts.rows();
  if (k < 1 || counts.cols() != k) {
    throw std::invalid_argument("compute_metrics: malformed confusion matrix");
  }
  if (counts.minCoeff() < 0) {
    throw std::invalid_argument("compute_metrics: negative count");
  }
  const std::int64_t total = counts.sum();
  if (total == 0) {
    throw std::invalid_argument("compute_metrics: all-zero confusion matrix");
  }

  MetricReport report;
  report.n_samples = total;
  report.per_class_recall.assign(static_cast<std::size_t>(k), 0.0);
  for (Index c = 0; c < k; ++c) {
    const std::int64_t row = counts.row(c).sum();
    if (row == 0) {
      report.zero_support_classes.push_back(c);
    } else {
      report.per_class_recall[static_cast<std::size_t>(c)] =
          100.0 * static_cast<double>(counts(c, c)) / static_cast<double>(row);
    }
  }
  report.ur = metric_from_counts(counts, MetricKind::kUr);
  report.wr = metric_from_counts(counts, MetricKind::kWr);
  report.ua = metric_from_counts(counts, MetricKind::kUa);
  report.wa = metric_from_counts(counts, MetricKind::kWa);

  // WR must coincide with the support-weighted mean of per-class recalls;
  // guards the two formulations against drifting apart.
  double weighted = 0.0;
  for (Index c = 0; c < k; ++c) {
    const std::int64_t row = counts.row(c).sum();
    if (row == 0) continue;
    weighted += (static_cast<double>(row) / static_cast<double>(total)) *
                report.per_class_recall[static_cast<std::size_t>(c)];
  }
  if (std::abs(weighted - report.wr) > 1e-9) {
    throw std::logic_error("compute_metrics: WR/accuracy identity violated");
  }
  return report;
}

BootstrapResult bootstrap_ci(const std::vector<Index>& preds,
                             const std::vector<Index>& labels, MetricKind metric,
                             int n_resamples, std::uint64_t seed,
                             double confidence) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("bootstrap_ci: preds/labels length mismatch");
  }
  if (preds.empty()) {
    throw std::invalid_argument("bootstrap_ci: empty input");
  }
  if (n_resamples < 100) {
    throw std::invalid_argument("bootstrap_ci: need at least 100 resamples");
  }
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("bootstrap_ci: confidence must be in (0,1)");
  }

  const std::size_t n = preds.size();
  Index k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (preds[i] < 0 || labels[i] < 0) {
      throw std::invalid_argument("bootstrap_ci: negative class index");
    }
    k = std::max({k, preds[i] + 1, labels[i] + 1});
  }
  std::vector<bool> class_present(static_cast<std::size_t>(k), false);
  for (std::size_t i = 0; i < n; ++i) {
    class_present[static_cast<std::size_t>(labels[i])] = true;
  }
  const bool unweighted = metric == MetricKind::kUr || metric == MetricKind::kUa;

  Rng rng(seed);
  BootstrapResult result;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_resamples));
  CountMatrix counts(k, k);
  for (int r = 0; r < n_resamples; ++r) {
    bool dropped = false;
    for (int attempt = 0;; ++attempt) {
      counts.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = static_cast<std::size_t>(rng.below(n));
        counts(labels[pick], preds[pick]) += 1;
      }
      if (!unweighted) break;
      bool all_present = true;
      for (Index c = 0; c < k; ++c) {
        if (class_present[static_cast<std::size_t>(c)] &&
            counts.row(c).sum() == 0) {
          all_present = false;
          break;
        }
      }
      if (all_present) break;
      if (attempt >= 10) {
        dropped = true;  // metric_from_counts skips the absent class
        break;
      }
    }
    if (dropped) result.dropped_class_resamples += 1;
    values.push_back(metric_from_counts(counts, metric));
  }

  std::sort(values.begin(), values.end());
  const auto nearest_rank = [&](double q) {
    const auto n_values = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n_values));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
  };
  result.lower = nearest_rank((1.0 - confidence) / 2.0);
  result.upper = nearest_rank((1.0 + confidence) / 2.0);
  return result;
}

namespace {

struct Row {
  std::string split;
  std::string language;
  std::string paradigm;
  std::array<double, 8> values;  // UR, UR_lo, UR_hi, WR, WR_lo, WR_hi, UA, WA
};

Row row_from_report(const MetricReport& r) {
  const auto bounds = [&](const char* name, double point) {
    const auto it = r.ci.find(name);
    return it == r.ci.end() ? std::make_pair(point, point) : it->second;
  };
  const auto [ur_lo, ur_hi] = bounds("UR", r.ur);
  const auto [wr_lo, wr_hi] = bounds("WR", r.wr);
  return Row{r.split_label, r.language, r.paradigm,
             {r.ur, ur_lo, ur_hi, r.wr, wr_lo, wr_hi, r.ua, r.wa}};
}

}  // namespace

RenderedReport render_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) {
    throw std::invalid_argument("render_report: need at least one report");
  }

  // Group rows by (paradigm, language), preserving first-seen order.
  std::vector<std::pair<std::string, std::string>> group_order;
  std::map<std::pair<std::string, std::string>, std::vector<Row>> groups;
  for (const MetricReport& r : reports) {
    const auto key = std::make_pair(r.paradigm, r.language);
    if (!groups.count(key)) group_order.push_back(key);
    groups[key].push_back(row_from_report(r));
  }

  std::vector<Row> rows;
  for (const auto& key : group_order) {
    const std::vector<Row>& members = groups.at(key);
    for (const Row& row : members) rows.push_back(row);
    Row mean{"Mean", key.second, key.first, {}};
    for (const Row& row : members) {
      for (std::size_t i = 0; i < mean.values.size(); ++i) {
        mean.values[i] += row.values[i];
      }
    }
    for (double& v : mean.values) v /= static_cast<double>(members.size());
    rows.push_back(mean);
  }

  RenderedReport out;
  out.csv = "split,language,paradigm,UR,UR_lo,UR_hi,WR,WR_lo,WR_hi,UA,WA\n";
  for (const Row& row : rows) {
    out.csv += row.split + "," + row.language + "," + row.paradigm;
    for (double v : row.values) out.csv += "," + format_value(v);
    out.csv += "\n";
  }

  std::vector<std::array<std::string, 7>> cells;
  cells.push_back({"paradigm", "language", "split", "UR [95% CI]", "WR [95% CI]",
                   "UA", "WA"});
  for (const Row& row : rows) {
    const auto fmt2 = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", v);
      return std::string(buf);
    };
    cells.push_back({row.paradigm, row.language, row.split,
                     fmt2(row.values[0]) + " [" + fmt2(row.values[1]) + ", " +
                         fmt2(row.values[2]) + "]",
                     fmt2(row.values[3]) + " [" + fmt2(row.values[4]) + ", " +
                         fmt2(row.values[5]) + "]",
                     fmt2(row.values[6]), fmt2(row.values[7])});
  }
  std::array<std::size_t, 7> widths{};
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      widths[i] = std::max(widths[i], line[i].size());
    }
  }
  std::ostringstream text;
  for (std::size_t li = 0; li < cells.size(); ++li) {
    for (std::size_t i = 0; i < cells[li].size(); ++i) {
      text << cells[li][i];
      if (i + 1 < cells[li].size()) {
        text << std::string(widths[i] - cells[li][i].size() + 2, ' ');
      }
    }
    text << '\n';
    if (li == 0) {
      std::size_t rule = 0;
      for (std::size_t w : widths) rule += w;
      text << std::string(rule + 2 * 6, '-') << '\n';
    }
  }
  out.text = text.str();
  return out;
}

}  // namespace mtkd
