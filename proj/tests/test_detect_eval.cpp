#include <cmath>
#include <random>

#include "amam/detect_eval.hpp"
#include "doctest.h"
#include "support/ap_reference.hpp"

using namespace amam;

namespace {

EvalData to_eval_data(const std::vector<ap_reference::RefImage>& images) {
  EvalData data;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ImageEval image;
    image.id = "img" + std::to_string(i);
    for (const auto& g : images[i].gt) image.gt.push_back(Box{g.x1, g.y1, g.x2, g.y2});
    for (const auto& d : images[i].det) {
      image.det.push_back({image.id, Box{d.box.x1, d.box.y1, d.box.x2, d.box.y2}, d.score});
    }
    data.push_back(std::move(image));
  }
  return data;
}

std::vector<ap_reference::RefImage> random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_images(1, 3), n_gt(1, 5), n_det(0, 10);
  std::uniform_real_distribution<double> coord(0.0, 8.0), side(1.0, 4.0), score(0.0, 1.0);
  std::vector<ap_reference::RefImage> images(n_images(rng));
  int total_gt = 0;
  for (auto& image : images) {
    const int gts = n_gt(rng);
    for (int i = 0; i < gts; ++i) {
      const double x = coord(rng), y = coord(rng);
      image.gt.push_back({x, y, x + side(rng), y + side(rng)});
      ++total_gt;
    }
    const int dets = n_det(rng);
    for (int i = 0; i < dets; ++i) {
      const double x = coord(rng), y = coord(rng);
      image.det.push_back({{x, y, x + side(rng), y + side(rng)}, score(rng)});
    }
  }
  (void)total_gt;
  return images;
}

}  // namespace

TEST_CASE("iou hand cases") {
  const Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(std::abs(iou(a, Box{1, 0, 3, 2}) - 1.0 / 3.0) < 1e-12);
  CHECK_THROWS_AS(iou(a, Box{1, 1, 1, 2}), ConfigError);
}

TEST_CASE("match_greedy core behaviors") {
  const Box gt{0, 0, 10, 10};

  SUBCASE("perfect single match") {
    MatchResult r = match_greedy({{"a", gt, 0.9}}, {gt}, 0.5);
    CHECK(r.counts.tp == 1);
    CHECK(r.counts.fp == 0);
    CHECK(r.counts.fn == 0);
    CHECK(r.det_is_tp[0]);
  }
  SUBCASE("two detections on one GT: the higher score wins") {
    std::vector<DetectionRecord> dets{{"a", Box{0, 0, 9, 10}, 0.3}, {"a", Box{0, 0, 10, 9}, 0.8}};
    MatchResult r = match_greedy(dets, {gt}, 0.5);
    CHECK(r.counts.tp == 1);
    CHECK(r.counts.fp == 1);
    CHECK_FALSE(r.det_is_tp[0]);
    CHECK(r.det_is_tp[1]);
  }
  SUBCASE("no detections leave all GTs unmatched") {
    MatchResult r = match_greedy({}, {gt, Box{20, 20, 30, 30}, Box{40, 40, 50, 50}}, 0.5);
    CHECK(r.counts.tp == 0);
    CHECK(r.counts.fp == 0);
    CHECK(r.counts.fn == 3);
  }
  SUBCASE("each detection takes the highest-IoU free GT") {
    const Box g1{0, 0, 10, 10};
    const Box g2{8, 0, 18, 10};
    // det overlaps both, clearly closer to g2
    std::vector<DetectionRecord> dets{{"a", Box{7, 0, 17, 10}, 0.9}, {"a", g1, 0.5}};
    MatchResult r = match_greedy(dets, {g1, g2}, 0.5);
    CHECK(r.counts.tp == 2);
    CHECK(r.counts.fp == 0);
  }
  SUBCASE("threshold domain is validated") {
    CHECK_THROWS_AS(match_greedy({}, {}, 0.0), ConfigError);
    CHECK_THROWS_AS(match_greedy({}, {}, 1.5), ConfigError);
  }
}

TEST_CASE("precision_recall follows the counting formulas") {
  PrecisionRecall pr = precision_recall({3, 1, 0});
  CHECK(pr.precision == 0.75);
  PrecisionRecall rr = precision_recall({3, 0, 1});
  CHECK(rr.recall == 0.75);
  PrecisionRecall degenerate = precision_recall({0, 0, 0});
  CHECK(degenerate.precision == 0.0);
  CHECK(degenerate.precision_degenerate);
  CHECK(degenerate.recall_degenerate);
}

TEST_CASE("average_precision ranking cases") {
  const Box gt{0, 0, 10, 10};
  EvalData perfect{{"a", {gt}, {{"a", gt, 0.9}}}};
  CHECK(average_precision(perfect, 0.5) == 1.0);

  EvalData tp_first{{"a", {gt}, {{"a", gt, 0.9}, {"a", Box{50, 50, 60, 60}, 0.4}}}};
  CHECK(average_precision(tp_first, 0.5) == 1.0);

  EvalData fp_first{{"a", {gt}, {{"a", Box{50, 50, 60, 60}, 0.9}, {"a", gt, 0.4}}}};
  CHECK(std::abs(average_precision(fp_first, 0.5) - 0.5) < 1e-12);

  EvalData empty_gt{{"a", {}, {{"a", gt, 0.9}}}};
  CHECK_THROWS_AS(average_precision(empty_gt, 0.5), ConfigError);
}

TEST_CASE("ap_range: perfect detections and the exact-0.70 sweep") {
  const Box gt{0, 0, 10, 10};
  EvalData perfect{{"a", {gt}, {{"a", gt, 0.9}}}};
  EvalReport report = ap_range(perfect);
  CHECK(report.ap_50 == 1.0);
  CHECK(report.ap_50_95 == 1.0);

  EvalData seventy{{"a", {Box{0, 0, 10, 1}}, {{"a", Box{0, 0, 7, 1}, 0.8}}}};
  EvalReport r70 = ap_range(seventy);
  for (int i = 0; i < 10; ++i) CHECK(r70.ap_per_threshold[i] == (i <= 4 ? 1.0 : 0.0));
  CHECK(std::abs(r70.ap_50_95 - 0.5) < 1e-12);

  EvalData none{{"a", {gt}, {}}};
  EvalReport empty = ap_range(none);
  CHECK(empty.ap_50 == 0.0);
  CHECK(empty.ap_50_95 == 0.0);
}

TEST_CASE("average_precision agrees with the brute-force PR reference") {
  std::mt19937_64 rng(500);
  for (int trial = 0; trial < 100; ++trial) {
    const auto instance = random_instance(rng);
    const EvalData data = to_eval_data(instance);
    for (double thr : {0.5, 0.6, 0.75, 0.9}) {
      const double got = average_precision(data, thr);
      const double want = ap_reference::ref_average_precision(instance, thr);
      CHECK(std::abs(got - want) < 1e-9);
    }
    // precision/recall match independent counting exactly
    long tp = 0, fp = 0, fn = 0;
    for (const auto& image : instance) {
      const auto counts = ap_reference::ref_match(image, 0.5);
      tp += counts.tp;
      fp += counts.fp;
      fn += counts.fn;
    }
    const EvalReport report = evaluate(data, 0.5, 0.0);
    if (tp + fp > 0) CHECK(report.precision == static_cast<double>(tp) / (tp + fp));
    CHECK(report.recall == static_cast<double>(tp) / (tp + fn));
  }
}

TEST_CASE("AP is monotone in the IoU threshold and score-scale invariant") {
  std::mt19937_64 rng(501);
  for (int trial = 0; trial < 50; ++trial) {
    const EvalData data = to_eval_data(random_instance(rng));
    double prev = 2.0;
    for (int t = 0; t < 10; ++t) {
      const double thr = static_cast<double>(50 + 5 * t) / 100.0;
      const double ap = average_precision(data, thr);
      CHECK(ap <= prev + 1e-12);
      prev = ap;
    }
    EvalData scaled = data;
    for (auto& image : scaled) {
      for (auto& det : image.det) det.score *= 0.25;
    }
    CHECK(average_precision(scaled, 0.5) == average_precision(data, 0.5));
  }
}

TEST_CASE("exact-area integration agrees with hand cases and tracks the grid sum") {
  const Box gt{0, 0, 10, 10};
  EvalData perfect{{"a", {gt}, {{"a", gt, 0.9}}}};
  CHECK(average_precision(perfect, 0.5, ApIntegration::ExactArea) == 1.0);

  EvalData fp_first{{"a", {gt}, {{"a", Box{50, 50, 60, 60}, 0.9}, {"a", gt, 0.4}}}};
  CHECK(average_precision(fp_first, 0.5, ApIntegration::ExactArea) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // half the GTs found at full precision: envelope is 1 on (0, 0.5], 0 beyond
  EvalData half{{"a", {gt, Box{20, 20, 30, 30}}, {{"a", gt, 0.9}}}};
  CHECK(average_precision(half, 0.5, ApIntegration::ExactArea) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // the 101-point grid is a Riemann sampling of the same envelope
  std::mt19937_64 rng(502);
  for (int trial = 0; trial < 30; ++trial) {
    const EvalData data = to_eval_data(random_instance(rng));
    const double grid = average_precision(data, 0.5, ApIntegration::Interpolated101);
    const double exact = average_precision(data, 0.5, ApIntegration::ExactArea);
    CHECK(std::abs(grid - exact) < 0.05);
  }
}

TEST_CASE("pr_curve reports cumulative recall/precision per rank") {
  const Box gt{0, 0, 10, 10};
  EvalData data{{"a", {gt, Box{20, 20, 30, 30}}, {{"a", gt, 0.9}, {"a", Box{50, 50, 60, 60}, 0.4}}}};
  auto points = pr_curve(data, 0.5);
  REQUIRE(points.size() == 2);
  CHECK(points[0][0] == 0.5);  // recall after the first (TP) detection
  CHECK(points[0][1] == 1.0);
  CHECK(points[1][0] == 0.5);
  CHECK(points[1][1] == 0.5);
}
