#include "amam/detect_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace amam {

void Box::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min)) {
    throw ConfigError("degenerate box [" + std::to_string(x_min) + "," + std::to_string(y_min) +
                      "," + std::to_string(x_max) + "," + std::to_string(y_max) + "]");
  }
}

double iou(const Box& a, const Box& b) {
  a.validate();
  b.validate();
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

MatchResult match_greedy(const std::vector<DetectionRecord>& dets, const std::vector<Box>& gts,
                         double thr) {
  if (thr <= 0.0 || thr > 1.0) throw ConfigError("match_greedy: threshold must be in (0, 1]");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  MatchResult result;
  result.det_is_tp.assign(dets.size(), false);
  std::vector<bool> gt_taken(gts.size(), false);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const DetectionRecord& det = dets[order[rank]];
    double best = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g]) continue;
      const double overlap = iou(det.box, gts[g]);
      if (overlap >= thr && overlap > best) {
        best = overlap;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      gt_taken[best_gt] = true;
      result.det_is_tp[order[rank]] = true;
      ++result.counts.tp;
    } else {
      ++result.counts.fp;
    }
  }
  result.counts.fn = static_cast<long>(gts.size()) - result.counts.tp;
  return result;
}

PrecisionRecall precision_recall(const MatchCounts& counts) {
  PrecisionRecall pr;
  if (counts.tp + counts.fp > 0) {
    pr.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  } else {
    pr.precision_degenerate = true;
  }
  if (counts.tp + counts.fn > 0) {
    pr.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  } else {
    pr.recall_degenerate = true;
  }
  return pr;
}

namespace {

struct RankedLabels {
  std::vector<bool> is_tp;  // in global descending-score order
  long total_gt = 0;
};

// Per-image greedy matching, then a global stable sort by descending score.
RankedLabels rank_detections(const EvalData& data, double thr) {
  RankedLabels out;
  std::vector<std::pair<double, bool>> scored;  // score, tp
  for (const ImageEval& image : data) {
    out.total_gt += static_cast<long>(image.gt.size());
    const MatchResult match = match_greedy(image.det, image.gt, thr);
    for (std::size_t i = 0; i < image.det.size(); ++i) {
      scored.emplace_back(image.det[i].score, match.det_is_tp[i]);
    }
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  out.is_tp.reserve(scored.size());
  for (const auto& [score, tp] : scored) out.is_tp.push_back(tp);
  return out;
}

}  // namespace

std::vector<std::array<double, 2>> pr_curve(const EvalData& data, double thr) {
  const RankedLabels ranked = rank_detections(data, thr);
  std::vector<std::array<double, 2>> points;
  if (ranked.total_gt == 0) throw ConfigError("pr_curve: dataset has no ground-truth boxes");
  long tp = 0, fp = 0;
  for (bool is_tp : ranked.is_tp) {
    if (is_tp) ++tp; else ++fp;
    points.push_back({static_cast<double>(tp) / static_cast<double>(ranked.total_gt),
                      static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return points;
}

double average_precision(const EvalData& data, double thr, ApIntegration method) {
  const auto points = pr_curve(data, thr);
  if (method == ApIntegration::Interpolated101) {
    // precision at recall level r is the max precision among points with recall >= r
    double total = 0.0;
    for (int level = 0; level <= 100; ++level) {
      const double r = static_cast<double>(level) / 100.0;
      double best = 0.0;
      for (const auto& [recall, precision] : points) {
        if (recall >= r - 1e-12) best = std::max(best, precision);
      }
      total += best;
    }
    return total / 101.0;
  }

  // exact area: integrate the precision envelope max{p_k : recall_k >= r}
  // over recall; it is piecewise constant between recall steps, so walk the
  // points right-to-left with a running max
  double area = 0.0;
  double envelope = 0.0;
  for (auto it = points.rbegin(); it != points.rend(); ++it) {
    const auto& [recall, precision] = *it;
    envelope = std::max(envelope, precision);
    const auto next = std::next(it);
    const double prev_recall = next == points.rend() ? 0.0 : (*next)[0];
    if (recall > prev_recall) area += (recall - prev_recall) * envelope;
  }
  return area;
}

EvalReport evaluate(const EvalData& data, double iou_thr, double conf_thr) {
  EvalReport report;

  MatchCounts counts;
  for (const ImageEval& image : data) {
    std::vector<DetectionRecord> kept;
    for (const DetectionRecord& det : image.det) {
      if (det.score >= conf_thr) kept.push_back(det);
    }
    const MatchResult match = match_greedy(kept, image.gt, iou_thr);
    counts.tp += match.counts.tp;
    counts.fp += match.counts.fp;
    counts.fn += match.counts.fn;
  }
  const PrecisionRecall pr = precision_recall(counts);
  report.precision = pr.precision;
  report.recall = pr.recall;
  report.precision_degenerate = pr.precision_degenerate;
  report.recall_degenerate = pr.recall_degenerate;

  for (int i = 0; i < 10; ++i) {
    // integer-ratio form keeps e.g. 0.70 bit-equal to an IoU computed as 7/10
    const double thr = static_cast<double>(50 + 5 * i) / 100.0;
    report.ap_per_threshold[i] = average_precision(data, thr);
  }
  report.ap_50 = report.ap_per_threshold[0];
  report.ap_50_95 = std::accumulate(report.ap_per_threshold.begin(),
                                    report.ap_per_threshold.end(), 0.0) /
                    10.0;
  return report;
}

EvalReport ap_range(const EvalData& data) { return evaluate(data, 0.5, 0.0); }

}  // namespace amam
