#pragma once

// Brute-force PR reference for the metric tests. Everything here is written
// against the metric definitions directly (own IoU, own greedy matching, own
// 101-point interpolation) so it shares no code with the library.

#include <algorithm>
#include <string>
#include <vector>

namespace ap_reference {

struct RefBox {
  double x1, y1, x2, y2;
};

struct RefDet {
  RefBox box;
  double score;
};

struct RefImage {
  std::vector<RefBox> gt;
  std::vector<RefDet> det;
};

inline double ref_iou(const RefBox& a, const RefBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (area_a + area_b - inter);
}

struct RefCounts {
  long tp = 0, fp = 0, fn = 0;
};

// Greedy matching: detections by descending score (stable), each takes the
// highest-IoU free GT at or above the threshold.
inline RefCounts ref_match(const RefImage& image, double thr,
                           std::vector<bool>* labels_by_rank = nullptr) {
  std::vector<std::size_t> order(image.det.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return image.det[a].score > image.det[b].score;
  });
  std::vector<bool> taken(image.gt.size(), false);
  RefCounts counts;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const RefDet& det = image.det[order[rank]];
    double best = 0.0;
    std::size_t best_g = image.gt.size();
    for (std::size_t g = 0; g < image.gt.size(); ++g) {
      if (taken[g]) continue;
      const double v = ref_iou(det.box, image.gt[g]);
      if (v >= thr && v > best) {
        best = v;
        best_g = g;
      }
    }
    const bool tp = best_g < image.gt.size();
    if (tp) {
      taken[best_g] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
    if (labels_by_rank) labels_by_rank->push_back(tp);
  }
  counts.fn = static_cast<long>(image.gt.size()) - counts.tp;
  return counts;
}

// Explicit PR-point construction over the global ranking, then 101-point
// interpolation: AP = mean over r in {0.00 .. 1.00} of max precision at
// recall >= r.
inline double ref_average_precision(const std::vector<RefImage>& images, double thr) {
  struct Entry {
    double score;
    bool tp;
  };
  std::vector<Entry> entries;
  long total_gt = 0;
  for (const RefImage& image : images) {
    total_gt += static_cast<long>(image.gt.size());
    std::vector<std::size_t> order(image.det.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return image.det[a].score > image.det[b].score;
    });
    std::vector<bool> taken(image.gt.size(), false);
    std::vector<bool> label(image.det.size(), false);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const RefDet& det = image.det[order[rank]];
      double best = 0.0;
      std::size_t best_g = image.gt.size();
      for (std::size_t g = 0; g < image.gt.size(); ++g) {
        if (taken[g]) continue;
        const double v = ref_iou(det.box, image.gt[g]);
        if (v >= thr && v > best) {
          best = v;
          best_g = g;
        }
      }
      if (best_g < image.gt.size()) {
        taken[best_g] = true;
        label[order[rank]] = true;
      }
    }
    for (std::size_t i = 0; i < image.det.size(); ++i) {
      entries.push_back({image.det[i].score, label[i]});
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::vector<double> recalls, precisions;
  long tp = 0, fp = 0;
  for (const Entry& e : entries) {
    if (e.tp) ++tp; else ++fp;
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  double total = 0.0;
  for (int level = 0; level <= 100; ++level) {
    const double r = static_cast<double>(level) / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recalls.size(); ++i) {
      if (recalls[i] >= r - 1e-12) best = std::max(best, precisions[i]);
    }
    total += best;
  }
  return total / 101.0;
}

}  // namespace ap_reference
