#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cinet {

// Binary confusion counts with defect as the positive class. The normal-class
// view is the same matrix with roles swapped (normal TP = defect TN and so
// on), so one set of counters serves both classes.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& labels);

// Ratios for one class's binary view. A zero denominator yields value 0 with
// the matching flag set, keeping reports machine-readable.
struct ClassMetrics {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool iou_flagged = false;
  bool precision_flagged = false;
  bool recall_flagged = false;
};

struct CloudMetrics {
  std::string id;
  ClassMetrics normal;
  ClassMetrics defect;
  double miou = 0.0;
  double map = 0.0;
  double macc = 0.0;
  double oa = 0.0;
};

// Micro aggregation (counts pooled over clouds, then ratios) is primary;
// macro (unweighted mean of per-cloud metrics) is also reported. macc is the
// mean of per-class recalls; map is the mean of per-class precisions at the
// 0.5 threshold.
struct MetricsReport {
  ClassMetrics normal;
  ClassMetrics defect;
  double miou = 0.0;
  double map = 0.0;
  double macc = 0.0;
  double oa = 0.0;

  double macro_miou = 0.0;
  double macro_map = 0.0;
  double macro_macc = 0.0;
  double macro_oa = 0.0;

  std::vector<CloudMetrics> per_cloud;
  bool any_zero_denominator = false;
};

MetricsReport report(const std::vector<ConfusionCounts>& per_cloud_counts,
                     const std::vector<std::string>& cloud_ids = {});

double defect_proportion(const std::vector<std::uint8_t>& labels);

// Rank-based average precision of the defect class: points sorted by score
// descending (ties by index), AP = sum of precision@k over positive ranks
// divided by the positive count.
double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels);

// Long-format CSV, one row per (scope, cloud, metric, class). Schema is
// documented in the file's comment header and version-stamped.
void export_report(const MetricsReport& report, const std::string& path);
std::string report_to_csv(const MetricsReport& report);

}  // namespace cinet
