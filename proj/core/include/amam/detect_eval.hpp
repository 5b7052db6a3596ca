#pragma once

#include <array>
#include <string>
#include <vector>

#include "amam/errors.hpp"

namespace amam {

/// Axis-aligned rectangle in pixel coordinates, x_max > x_min, y_max > y_min.
struct Box {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  double area() const { return (x_max - x_min) * (y_max - y_min); }
  void validate() const;
};

double iou(const Box& a, const Box& b);

struct DetectionRecord {
  std::string image_id;
  Box box;
  double score = 0.0;  // in [0, 1]
};

/// One image's ground truth and detections.
struct ImageEval {
  std::string id;
  std::vector<Box> gt;
  std::vector<DetectionRecord> det;
};
using EvalData = std::vector<ImageEval>;

struct MatchCounts {
  long tp = 0, fp = 0, fn = 0;
};

struct MatchResult {
  MatchCounts counts;
  /// One label per detection, in input order: true if matched to a GT.
  std::vector<bool> det_is_tp;
};

/// Detections in descending score order (ties by input order) each claim the
/// unmatched GT of highest IoU >= thr; every GT matches at most once.
MatchResult match_greedy(const std::vector<DetectionRecord>& dets, const std::vector<Box>& gts,
                         double thr);

struct PrecisionRecall {
  double precision = 0.0, recall = 0.0;
  bool precision_degenerate = false;  // TP+FP == 0
  bool recall_degenerate = false;     // TP+FN == 0
};

/// P = TP/(TP+FP), R = TP/(TP+FN); 0/0 yields 0 with the degenerate flag set.
PrecisionRecall precision_recall(const MatchCounts& counts);

enum class ApIntegration {
  Interpolated101,  // max precision at recall >= r, sampled at r = 0.00..1.00
  ExactArea,        // exact integral of the same precision envelope
};

/// AP over the globally score-ranked detections. Requires at least one
/// ground-truth box across the dataset.
double average_precision(const EvalData& data, double thr,
                         ApIntegration method = ApIntegration::Interpolated101);

/// (recall, precision) after each ranked detection at the given IoU threshold.
std::vector<std::array<double, 2>> pr_curve(const EvalData& data, double thr);

struct EvalReport {
  double precision = 0.0, recall = 0.0;
  bool precision_degenerate = false, recall_degenerate = false;
  double ap_50 = 0.0;
  double ap_50_95 = 0.0;
  std::array<double, 10> ap_per_threshold{};  // IoU 0.50, 0.55, ..., 0.95
};

/// P/R are computed on detections with score >= conf_thr at iou_thr; the AP
/// fields always use the full detection set.
EvalReport evaluate(const EvalData& data, double iou_thr, double conf_thr);

/// evaluate() at IoU 0.5 with no confidence cut.
EvalReport ap_range(const EvalData& data);

}  // namespace amam
