#include "cinet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cinet {

namespace {

double safe_div(std::int64_t num, std::int64_t den, bool& flag) {
  if (den == 0) {
    flag = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  ClassMetrics m;
  m.iou = safe_div(tp, tp + fp + fn, m.iou_flagged);
  m.precision = safe_div(tp, tp + fp, m.precision_flagged);
  m.recall = safe_div(tp, tp + fn, m.recall_flagged);
  return m;
}

struct Derived {
  ClassMetrics normal;
  ClassMetrics defect;
  double miou, map, macc, oa;
  bool flagged;
};

Derived derive(const ConfusionCounts& c) {
  Derived d;
  d.defect = class_metrics(c.tp, c.fp, c.fn);
  d.normal = class_metrics(c.tn, c.fn, c.fp);
  d.miou = 0.5 * (d.normal.iou + d.defect.iou);
  d.map = 0.5 * (d.normal.precision + d.defect.precision);
  d.macc = 0.5 * (d.normal.recall + d.defect.recall);
  bool oa_flag = false;
  d.oa = safe_div(c.tp + c.tn, c.total(), oa_flag);
  d.flagged = oa_flag || d.normal.iou_flagged || d.normal.precision_flagged ||
              d.normal.recall_flagged || d.defect.iou_flagged || d.defect.precision_flagged ||
              d.defect.recall_flagged;
  return d;
}

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& labels) {
  if (pred.size() != labels.size()) {
    throw std::invalid_argument("confusion_counts: " + std::to_string(pred.size()) +
                                " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  if (pred.empty()) throw std::invalid_argument("confusion_counts: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || labels[i] > 1) {
      throw std::invalid_argument("confusion_counts: value outside {0,1} at index " +
                                  std::to_string(i));
    }
    if (labels[i] == 1) {
      (pred[i] == 1 ? c.tp : c.fn) += 1;
    } else {
      (pred[i] == 1 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

MetricsReport report(const std::vector<ConfusionCounts>& per_cloud_counts,
                     const std::vector<std::string>& cloud_ids) {
  if (per_cloud_counts.empty()) throw std::invalid_argument("report: no clouds");
  if (!cloud_ids.empty() && cloud_ids.size() != per_cloud_counts.size()) {
    throw std::invalid_argument("report: cloud id count mismatch");
  }

  MetricsReport r;
  ConfusionCounts pooled;
  for (std::size_t i = 0; i < per_cloud_counts.size(); ++i) {
    const ConfusionCounts& c = per_cloud_counts[i];
    pooled += c;
    Derived d = derive(c);
    CloudMetrics cm;
    cm.id = cloud_ids.empty() ? std::to_string(i) : cloud_ids[i];
    cm.normal = d.normal;
    cm.defect = d.defect;
    cm.miou = d.miou;
    cm.map = d.map;
    cm.macc = d.macc;
    cm.oa = d.oa;
    r.per_cloud.push_back(std::move(cm));
    r.any_zero_denominator = r.any_zero_denominator || d.flagged;
    r.macro_miou += d.miou;
    r.macro_map += d.map;
    r.macro_macc += d.macc;
    r.macro_oa += d.oa;
  }
  const double n = static_cast<double>(per_cloud_counts.size());
  r.macro_miou /= n;
  r.macro_map /= n;
  r.macro_macc /= n;
  r.macro_oa /= n;

  Derived d = derive(pooled);
  r.normal = d.normal;
  r.defect = d.defect;
  r.miou = d.miou;
  r.map = d.map;
  r.macc = d.macc;
  r.oa = d.oa;
  r.any_zero_denominator = r.any_zero_denominator || d.flagged;
  return r;
}

double defect_proportion(const std::vector<std::uint8_t>& labels) {
  if (labels.empty()) throw std::invalid_argument("defect_proportion: no labels");
  std::int64_t defects = 0;
  for (std::uint8_t v : labels) {
    if (v > 1) throw std::invalid_argument("defect_proportion: label outside {0,1}");
    defects += v;
  }
  return static_cast<double>(defects) / static_cast<double>(labels.size());
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("average_precision: score/label length mismatch");
  }
  if (scores.empty()) throw std::invalid_argument("average_precision: empty input");
  std::int64_t positives = std::accumulate(labels.begin(), labels.end(), std::int64_t{0});
  if (positives == 0) return 0.0;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::int64_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1) {
      hits += 1;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

std::string report_to_csv(const MetricsReport& report) {
  std::string out;
  out += "# cinet-metrics-v1\n";
  out += "# scope: micro (counts pooled over clouds), macro (mean of per-cloud values),\n";
  out += "#        or cloud (one cloud, named in the cloud column).\n";
  out += "# class: normal/defect for per-class rows, empty for aggregate rows.\n";
  out += "# flag: 1 when the metric's denominator was zero and the value was forced to 0.\n";
  out += "scope,cloud,metric,class,value,flag\n";

  auto row = [&out](const std::string& scope, const std::string& cloud, const std::string& metric,
                    const std::string& cls, double value, bool flag) {
    out += scope + "," + cloud + "," + metric + "," + cls + "," + fmt_value(value) + "," +
           (flag ? "1" : "0") + "\n";
  };
  auto class_rows = [&](const std::string& scope, const std::string& cloud,
                        const ClassMetrics& m, const std::string& cls) {
    row(scope, cloud, "iou", cls, m.iou, m.iou_flagged);
    row(scope, cloud, "precision", cls, m.precision, m.precision_flagged);
    row(scope, cloud, "recall", cls, m.recall, m.recall_flagged);
  };

  class_rows("micro", "", report.normal, "normal");
  class_rows("micro", "", report.defect, "defect");
  row("micro", "", "miou", "", report.miou, false);
  row("micro", "", "map", "", report.map, false);
  row("micro", "", "macc", "", report.macc, false);
  row("micro", "", "oa", "", report.oa, false);
  row("macro", "", "miou", "", report.macro_miou, false);
  row("macro", "", "map", "", report.macro_map, false);
  row("macro", "", "macc", "", report.macro_macc, false);
  row("macro", "", "oa", "", report.macro_oa, false);
  for (const CloudMetrics& cm : report.per_cloud) {
    class_rows("cloud", cm.id, cm.normal, "normal");
    class_rows("cloud", cm.id, cm.defect, "defect");
    row("cloud", cm.id, "miou", "", cm.miou, false);
    row("cloud", cm.id, "map", "", cm.map, false);
    row("cloud", cm.id, "macc", "", cm.macc, false);
    row("cloud", cm.id, "oa", "", cm.oa, false);
  }
  return out;
}

void export_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_report: cannot open '" + path + "' for writing");
  out << report_to_csv(report);
  if (!out) throw std::runtime_error("export_report: write to '" + path + "' failed");
}

}  // namespace cinet
