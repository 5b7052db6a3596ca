#include "amam/checks.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "amam/aa_block.hpp"
#include "amam/detect_eval.hpp"
#include "amam/gradcheck.hpp"
#include "amam/me_block.hpp"
#include "amam/pyramid.hpp"
#include "amam/serialize.hpp"
#include "amam/train.hpp"

namespace amam {

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  return Tensor::uniform(s, lo, hi, rng, requires_grad);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

struct Suite {
  std::vector<CheckResult> results;

  void check(const std::string& name, bool passed, const std::string& detail = "") {
    results.push_back({name, passed, detail});
  }
};

// ---- tensor-core -------------------------------------------------------------

void tensor_checks(Suite& suite, std::mt19937_64& rng) {
  // conv output shape is a pure function of input shape and layer geometry
  {
    bool ok = true;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      std::uniform_int_distribution<int> dim(3, 12), chan(1, 4), kdist(1, 3);
      const int h = dim(rng), w = dim(rng), ci = chan(rng), co = chan(rng);
      const int k = kdist(rng), stride = 1 + (trial % 2), padding = k / 2;
      Tensor x = random_tensor(Shape{1, ci, h, w}, rng);
      Tensor kernel = random_tensor(Shape{co, ci, k, k}, rng);
      Tensor bias = Tensor::zeros(Shape{1, co, 1, 1});
      const Shape out = conv2d(x, kernel, bias, stride, padding).shape();
      const int eh = (h + 2 * padding - k) / stride + 1;
      const int ew = (w + 2 * padding - k) / stride + 1;
      ok = out == Shape{1, co, eh, ew};
    }
    suite.check("tensor.conv_shape_algebra", ok);
  }
  {
    Tensor x = random_tensor(Shape{2, 8, 5, 3}, rng);
    Tensor back = concat_channels(split_channels(x, 4));
    suite.check("tensor.split_concat_roundtrip", bit_equal(x, back));
  }
  {
    Tensor x = random_tensor(Shape{2, 3, 6, 4}, rng);
    Tensor back = downsample_avg2x(upsample_nearest2x(x));
    suite.check("tensor.down_up_roundtrip", bit_equal(x, back));
  }
  {
    Tensor x = random_tensor(Shape{1, 1, 7, 9}, rng, -5.0, 5.0);
    Tensor y = softmax_lastdim(x);
    double worst = 0.0;
    bool nonneg = true;
    for (int r = 0; r < 7; ++r) {
      double total = 0.0;
      for (int c = 0; c < 9; ++c) {
        const double v = y.at(0, 0, r, c);
        nonneg = nonneg && v >= 0.0;
        total += v;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    Tensor shifted = softmax_lastdim(affine(x, 1.0, 123.5));
    const double shift_diff = max_abs_diff(y, shifted);
    suite.check("tensor.softmax_rows",
                nonneg && worst < 1e-9 && shift_diff < 1e-9,
                "row-sum err " + format_double(worst) + ", shift err " + format_double(shift_diff));
  }
  {
    // big-magnitude rows must not overflow
    Tensor x = Tensor::from_vector(Shape{1, 1, 1, 2}, {1000.0, 0.0});
    Tensor y = softmax_lastdim(x);
    suite.check("tensor.softmax_stable",
                std::isfinite(y.at(0, 0, 0, 0)) && y.at(0, 0, 0, 0) > 0.999);
  }
  {
    auto run = [](std::uint64_t seed) {
      std::mt19937_64 local(seed);
      ConvBnAct layer = ConvBnAct::init(3, 5, 3, 1, 1, Activation::ReLU, local);
      Tensor x = random_tensor(Shape{1, 3, 6, 6}, local);
      return layer.forward(x);
    };
    suite.check("tensor.determinism", bit_equal(run(42), run(42)));
  }
}

// ---- me-block ----------------------------------------------------------------

void me_checks(Suite& suite, std::mt19937_64& rng) {
  {
    bool ok = true;
    std::string detail;
    for (int trial = 0; trial < 8 && ok; ++trial) {
      std::uniform_int_distribution<int> cdist(1, 4), sdist(1, 4);
      const int c = 2 * cdist(rng);
      const int h = 2 * sdist(rng), w = 2 * sdist(rng);
      const bool has_shallow = trial % 2 == 0;
      const bool has_deep = trial % 4 < 2;
      MeBlockParams params = MeBlockParams::init(c, has_shallow, has_deep, rng);
      std::optional<Tensor> shallow, deep;
      if (has_shallow) shallow = random_tensor(Shape{1, c / 2, 2 * h, 2 * w}, rng);
      if (has_deep) deep = random_tensor(Shape{1, 2 * c, h / 2 > 0 ? h / 2 : 1, w / 2 > 0 ? w / 2 : 1}, rng);
      Tensor cur = random_tensor(Shape{1, c, h, w}, rng);
      const Shape out = me_forward(shallow, cur, deep, params).shape();
      ok = out == cur.shape();
      if (!ok) detail = "got " + to_string(out) + " for current " + to_string(cur.shape());
    }
    suite.check("me.output_shape_equals_current", ok, detail);
  }
  {
    // concatenation order must matter: fusing [deep',cur',shallow'] instead of
    // [shallow',cur',deep'] changes the result in general
    MeBlockParams params = MeBlockParams::init(4, true, true, rng);
    Tensor shallow = random_tensor(Shape{1, 2, 8, 8}, rng);
    Tensor cur = random_tensor(Shape{1, 4, 4, 4}, rng);
    Tensor deep = random_tensor(Shape{1, 8, 2, 2}, rng);
    Tensor u_s = unify_shallow(shallow, params);
    Tensor u_c = unify_current(cur, params);
    Tensor u_d = unify_deep(deep, params);
    Tensor ordered = params.cbr_fuse.forward(concat_channels({u_s, u_c, u_d}));
    Tensor swapped = params.cbr_fuse.forward(concat_channels({u_d, u_c, u_s}));
    suite.check("me.branch_order_sensitivity", max_abs_diff(ordered, swapped) > 1e-8);
  }
  {
    const int c = 4;
    Tensor cur = random_tensor(Shape{1, c, 4, 4}, rng);
    Tensor shallow = random_tensor(Shape{1, c / 2, 8, 8}, rng);
    Tensor deep = random_tensor(Shape{1, 2 * c, 2, 2}, rng);
    MeBlockParams full = MeBlockParams::init(c, true, true, rng);
    MeBlockParams no_shallow = MeBlockParams::init(c, false, true, rng);
    MeBlockParams no_deep = MeBlockParams::init(c, true, false, rng);
    const Shape want = cur.shape();
    const bool ok =
        me_forward(shallow, cur, deep, full).shape() == want &&
        me_forward(std::nullopt, cur, deep, no_shallow).shape() == want &&
        me_forward(shallow, cur, std::nullopt, no_deep).shape() == want;
    suite.check("me.missing_branch_shapes", ok);
  }
}

// ---- aa-block ----------------------------------------------------------------

void aa_checks(Suite& suite, std::mt19937_64& rng) {
  {
    bool ok = true;
    for (int trial = 0; trial < 6 && ok; ++trial) {
      const int heads = 1 << (trial % 3);  // 1, 2, 4
      const int c = heads * (1 + trial % 3) * 2;
      AaBlockParams params = AaBlockParams::init(c, heads, FusionMode::Adaptive, rng);
      Tensor x = random_tensor(Shape{1, c, 3, 4}, rng);
      ok = aa_forward(x, params).shape() == x.shape();
    }
    suite.check("aa.shape_preservation", ok);
  }
  {
    std::uniform_real_distribution<double> logit_dist(-30.0, 30.0);
    bool ok = true;
    for (int i = 0; i < 1000 && ok; ++i) {
      const double logit = logit_dist(rng);
      Tensor alpha = sigmoid(Tensor::scalar(logit));
      Tensor beta = affine(alpha, -1.0, 1.0);
      const double a = alpha.item(), b = beta.item();
      ok = a > 0.0 && a < 1.0 && (a + b) == 1.0;
    }
    suite.check("aa.alpha_beta_complement", ok);
  }
  {
    std::mt19937_64 param_rng(rng());
    AaBlockParams adaptive = AaBlockParams::init(8, 4, FusionMode::Adaptive, param_rng);
    AaBlockParams average = adaptive;
    average.fusion = FusionMode::Average;
    AaBlockParams added = adaptive;
    added.fusion = FusionMode::Add;
    double worst = 0.0;
    double add_vs_avg = 0.0;
    for (int i = 0; i < 5; ++i) {
      Tensor x = random_tensor(Shape{1, 8, 3, 3}, rng);
      Tensor via_adaptive = aa_forward(x, adaptive);  // logits are all zero
      Tensor via_average = aa_forward(x, average);
      Tensor via_add = aa_forward(x, added);
      worst = std::max(worst, max_abs_diff(via_adaptive, via_average));
      add_vs_avg = std::max(add_vs_avg, max_abs_diff(via_add, via_average));
    }
    suite.check("aa.adaptive_logit0_equals_average", worst <= 1e-12,
                "max diff " + format_double(worst));
    suite.check("aa.add_differs_from_average", add_vs_avg > 1e-6);
  }
  {
    // fused attention node equals the primitive composition
    Tensor q = random_tensor(Shape{1, 1, 6, 3}, rng);
    Tensor k = random_tensor(Shape{1, 1, 6, 3}, rng);
    Tensor v = random_tensor(Shape{1, 1, 6, 5}, rng);
    const double factor = 1.0 / std::sqrt(3.0);
    Tensor fused = scaled_dot_attention(q, k, v, factor);
    Tensor kt = Tensor::zeros(Shape{1, 1, 3, 6});
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 3; ++c) kt.at(0, 0, c, r) = k.at(0, 0, r, c);
    Tensor composed = matmul(softmax_lastdim(scale(matmul(q, kt), factor)), v);
    suite.check("aa.attention_matches_composition", max_abs_diff(fused, composed) < 1e-12);
  }
  {
    // zero W_Q gives uniform attention: every position holds the mean of x W_V
    const int d = 4;
    AaHeadParams head;
    head.w_q = Tensor::zeros(Shape{1, 1, d, 2});
    std::mt19937_64 local(7);
    head.w_k = Tensor::uniform(Shape{1, 1, d, 2}, -1.0, 1.0, local);
    head.w_v = Tensor::uniform(Shape{1, 1, d, d}, -1.0, 1.0, local);
    Tensor x = random_tensor(Shape{1, d, 3, 3}, rng);
    Tensor out = head_attention(x, head, 2);
    Tensor projected = from_tokens(matmul(to_tokens(x), head.w_v), 3, 3);
    double worst = 0.0;
    for (int c = 0; c < d; ++c) {
      double mean = 0.0;
      for (int p = 0; p < 9; ++p) mean += projected.at(0, c, p / 3, p % 3);
      mean /= 9.0;
      for (int p = 0; p < 9; ++p) {
        worst = std::max(worst, std::abs(out.at(0, c, p / 3, p % 3) - mean));
      }
    }
    suite.check("aa.uniform_attention_mean", worst < 1e-9, "max err " + format_double(worst));
  }
  {
    // single token: the attention weight is 1, so output is x W_V exactly
    const int d = 3;
    std::mt19937_64 local(11);
    AaHeadParams head;
    head.w_q = Tensor::uniform(Shape{1, 1, d, 2}, -1.0, 1.0, local);
    head.w_k = Tensor::uniform(Shape{1, 1, d, 2}, -1.0, 1.0, local);
    head.w_v = Tensor::uniform(Shape{1, 1, d, d}, -1.0, 1.0, local);
    Tensor x = random_tensor(Shape{1, d, 1, 1}, rng);
    Tensor out = head_attention(x, head, 2);
    Tensor expect = from_tokens(matmul(to_tokens(x), head.w_v), 1, 1);
    suite.check("aa.single_token_identity", max_abs_diff(out, expect) < 1e-12);
  }
  {
    // cascade locality: head outputs before split j ignore a perturbation of split j
    const int heads = 4, c = 8;
    AaBlockParams params = AaBlockParams::init(c, heads, FusionMode::Adaptive, rng);
    bool ok = true;
    for (int trial = 0; trial < 5 && ok; ++trial) {
      Tensor x = random_tensor(Shape{1, c, 3, 3}, rng);
      AaTrace base = aa_forward_traced(x, params);
      const int j = 1 + trial % (heads - 1);
      Tensor perturbed = x.detach();
      const int d = c / heads;
      for (int ch = j * d; ch < (j + 1) * d; ++ch) {
        perturbed.at(0, ch, 0, 0) += 0.5;
      }
      AaTrace moved = aa_forward_traced(perturbed, params);
      for (int i = 0; i < j && ok; ++i) {
        ok = bit_equal(base.head_outputs[i], moved.head_outputs[i]);
      }
      for (int i = j; i < heads && ok; ++i) {
        ok = !bit_equal(base.head_outputs[i], moved.head_outputs[i]);
      }
    }
    suite.check("aa.cascade_locality", ok);
  }
}

// ---- amam-pyramid --------------------------------------------------------------

void pyramid_checks(Suite& suite, std::mt19937_64& rng) {
  {
    bool ok = true;
    for (int trial = 0; trial < 5 && ok; ++trial) {
      AmamConfig cfg;
      const int base = 4 << (trial % 2);
      const int count = 2 + trial % 2;
      cfg.levels.clear();
      for (int i = 0; i < count; ++i) cfg.levels.push_back(base << i);
      cfg.heads = (trial % 2) ? 2 : 4;
      cfg.fusion_mode = static_cast<FusionMode>(trial % 4);
      cfg.seed = trial;
      AmamParams params = AmamParams::init(cfg);
      FeaturePyramid pyr;
      int h = 8, w = 8;
      for (int i = 0; i < count; ++i) {
        pyr.maps.push_back(random_tensor(Shape{1, cfg.levels[i], h, w}, rng));
        h /= 2;
        w /= 2;
      }
      FeaturePyramid out = amam_forward(pyr, cfg, params);
      for (std::size_t i = 0; i < pyr.maps.size() && ok; ++i) {
        ok = out.maps[i].shape() == pyr.maps[i].shape();
      }
    }
    suite.check("amam.plug_and_play_shapes", ok);
  }
  {
    AmamConfig cfg;
    cfg.levels = {4, 8, 16};
    cfg.heads = 2;
    cfg.seed = 3;
    FeaturePyramid pyr;
    pyr.maps = {random_tensor(Shape{1, 4, 8, 8}, rng), random_tensor(Shape{1, 8, 4, 4}, rng),
                random_tensor(Shape{1, 16, 2, 2}, rng)};
    bool ok = true;
    for (int me = 0; me < 2 && ok; ++me) {
      for (int aa = 0; aa < 2 && ok; ++aa) {
        AmamConfig variant = cfg;
        variant.enabled_me = me == 1;
        variant.enabled_aa = aa == 1;
        AmamParams params = AmamParams::init(variant);
        FeaturePyramid out = amam_forward(pyr, variant, params);
        for (std::size_t i = 0; i < pyr.maps.size() && ok; ++i) {
          ok = out.maps[i].shape() == pyr.maps[i].shape();
          if (me == 0 && aa == 0) ok = ok && bit_equal(out.maps[i], pyr.maps[i]);
        }
      }
    }
    suite.check("amam.ablation_matrix", ok);
  }
  {
    bool ok = true;
    for (int heads : {1, 2, 4, 8, 16}) {
      AmamConfig cfg;
      cfg.levels = {16, 32};
      cfg.heads = heads;
      cfg.seed = 5;
      AmamParams params = AmamParams::init(cfg);
      FeaturePyramid pyr;
      pyr.maps = {random_tensor(Shape{1, 16, 4, 4}, rng), random_tensor(Shape{1, 32, 2, 2}, rng)};
      FeaturePyramid out = amam_forward(pyr, cfg, params);
      ok = ok && out.maps[0].shape() == pyr.maps[0].shape() &&
           out.maps[1].shape() == pyr.maps[1].shape();
    }
    suite.check("amam.head_sweep", ok);
  }
}

// ---- train-harness --------------------------------------------------------------

void train_checks(Suite& suite, std::mt19937_64&) {
  {
    LrSchedule s;
    s.warmup_iters = 30;
    s.total_iters = 1000;
    const double at_warmup = lr_at(s.warmup_iters, s);
    const double at_end = lr_at(s.total_iters, s);
    const double mid = lr_at(s.warmup_iters + (s.total_iters - s.warmup_iters) / 2, s);
    suite.check("train.lr_endpoints",
                std::abs(at_warmup - 0.01) < 1e-12 && std::abs(at_end - 0.002) < 1e-12 &&
                    std::abs(mid - 0.006) < 1e-12,
                "lr(warmup)=" + format_double(at_warmup) + " lr(total)=" + format_double(at_end));
  }
  {
    LrSchedule s;
    s.warmup_iters = 10;
    s.total_iters = 200;
    bool monotone = true;
    double prev = lr_at(s.warmup_iters, s);
    for (int i = s.warmup_iters + 1; i <= s.total_iters; ++i) {
      const double cur = lr_at(i, s);
      monotone = monotone && cur <= prev + 1e-15;
      prev = cur;
    }
    const double before = lr_at(s.warmup_iters - 1, s);
    const double boundary_gap = std::abs(lr_at(s.warmup_iters, s) - before);
    suite.check("train.lr_monotone_and_continuous",
                monotone && boundary_gap < s.lr_init / s.warmup_iters + 1e-12);
  }
  {
    // momentum 0 equals plain gradient descent: d(3p)/dp = 3
    std::vector<Tensor> params{Tensor::scalar(1.0, true)};
    Tensor root = scale(params[0], 3.0);
    root.backward();
    std::vector<std::vector<double>> vel;
    sgd_step(params, 0.5, 0.0, vel);
    const bool plain_ok = std::abs(params[0].item() - (1.0 - 0.5 * 3.0)) < 1e-15;

    // two steps with constant gradient g (lr 0 keeps the parameter, and hence
    // the gradient of g*p, fixed): v2 = (1 + m) g
    std::vector<Tensor> p2{Tensor::scalar(0.0, true)};
    std::vector<std::vector<double>> vel2;
    const double g = 2.0, m = 0.9;
    for (int step = 0; step < 2; ++step) {
      p2[0].zero_grad();
      Tensor r = scale(p2[0], g);
      r.backward();
      sgd_step(p2, 0.0, m, vel2);
    }
    const bool recurrence_ok = std::abs(vel2[0][0] - (1.0 + m) * g) < 1e-12;

    // zero gradient leaves parameters unchanged
    std::vector<Tensor> p3{Tensor::scalar(5.0, true)};
    std::vector<std::vector<double>> vel3;
    sgd_step(p3, 0.1, 0.9, vel3);
    suite.check("train.sgd_momentum", plain_ok && recurrence_ok && p3[0].item() == 5.0);
  }
}

// ---- detect-eval ------------------------------------------------------------------

void eval_checks(Suite& suite, std::mt19937_64& rng) {
  {
    const Box a{0, 0, 2, 2};
    const Box shifted{1, 0, 3, 2};
    const Box far{10, 10, 12, 12};
    const bool ok = iou(a, a) == 1.0 && iou(a, far) == 0.0 &&
                    std::abs(iou(a, shifted) - 1.0 / 3.0) < 1e-12;
    suite.check("eval.iou_hand_cases", ok);
  }
  {
    std::uniform_real_distribution<double> coord(0.0, 10.0), side(0.5, 4.0);
    bool ok = true;
    for (int i = 0; i < 50 && ok; ++i) {
      Box a{coord(rng), coord(rng), 0, 0};
      a.x_max = a.x_min + side(rng);
      a.y_max = a.y_min + side(rng);
      Box b{coord(rng), coord(rng), 0, 0};
      b.x_max = b.x_min + side(rng);
      b.y_max = b.y_min + side(rng);
      const double ab = iou(a, b);
      ok = ab == iou(b, a) && ab >= 0.0 && ab <= 1.0;
    }
    suite.check("eval.iou_symmetry_bounds", ok);
  }
  {
    PrecisionRecall pr = precision_recall(MatchCounts{3, 1, 1});
    PrecisionRecall degenerate = precision_recall(MatchCounts{0, 0, 0});
    suite.check("eval.precision_recall_arithmetic",
                pr.precision == 0.75 && pr.recall == 0.75 && degenerate.precision == 0.0 &&
                    degenerate.precision_degenerate && degenerate.recall_degenerate);
  }
  {
    const Box gt{0, 0, 10, 10};
    EvalData perfect{{"a", {gt}, {{"a", gt, 0.9}}}};
    EvalData tp_then_fp{{"a", {gt}, {{"a", gt, 0.9}, {"a", Box{50, 50, 60, 60}, 0.5}}}};
    EvalData fp_then_tp{{"a", {gt}, {{"a", Box{50, 50, 60, 60}, 0.9}, {"a", gt, 0.5}}}};
    EvalData no_dets{{"a", {gt}, {}}};
    const bool ok = average_precision(perfect, 0.5) == 1.0 &&
                    average_precision(tp_then_fp, 0.5) == 1.0 &&
                    std::abs(average_precision(fp_then_tp, 0.5) - 0.5) < 1e-12 &&
                    average_precision(no_dets, 0.5) == 0.0;
    suite.check("eval.ap_rank_cases", ok);
  }
  {
    // detection with IoU exactly 7/10 against its GT: AP 1 up to 0.70, 0 above
    EvalData data{{"a", {Box{0, 0, 10, 1}}, {{"a", Box{0, 0, 7, 1}, 0.9}}}};
    EvalReport report = ap_range(data);
    bool ok = std::abs(report.ap_50_95 - 0.5) < 1e-12;
    for (int i = 0; i < 10; ++i) {
      ok = ok && report.ap_per_threshold[i] == (i <= 4 ? 1.0 : 0.0);
    }
    suite.check("eval.ap_threshold_sweep", ok);
  }
  {
    bool ok = true;
    std::uniform_real_distribution<double> coord(0.0, 8.0), side(1.0, 4.0), score(0.0, 1.0);
    std::uniform_int_distribution<int> n_det(0, 6), n_gt(1, 4);
    for (int trial = 0; trial < 30 && ok; ++trial) {
      ImageEval image;
      image.id = "img";
      const int gts = n_gt(rng);
      for (int i = 0; i < gts; ++i) {
        Box b{coord(rng), coord(rng), 0, 0};
        b.x_max = b.x_min + side(rng);
        b.y_max = b.y_min + side(rng);
        image.gt.push_back(b);
      }
      const int dets = n_det(rng);
      for (int i = 0; i < dets; ++i) {
        Box b{coord(rng), coord(rng), 0, 0};
        b.x_max = b.x_min + side(rng);
        b.y_max = b.y_min + side(rng);
        image.det.push_back({"img", b, score(rng)});
      }
      EvalData data{image};
      double prev = 1.0 + 1e-12;
      for (int t = 0; t < 10 && ok; ++t) {
        const double thr = static_cast<double>(50 + 5 * t) / 100.0;
        const double ap = average_precision(data, thr);
        ok = ap <= prev + 1e-12;
        prev = ap;
      }
      // ranking-only dependence: a uniform positive rescale changes nothing
      EvalData scaled = data;
      for (auto& det : scaled[0].det) det.score *= 0.5;
      ok = ok && average_precision(scaled, 0.5) == average_precision(data, 0.5);
    }
    suite.check("eval.ap_monotone_and_scale_invariant", ok);
  }
}

// ---- formats ------------------------------------------------------------------------

void format_checks(Suite& suite, std::mt19937_64& rng) {
  {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "amam_checks";
    fs::create_directories(dir);
    bool ok = true;
    for (int i = 0; i < 5 && ok; ++i) {
      std::uniform_int_distribution<int> dim(1, 5);
      Tensor t = random_tensor(Shape{dim(rng), dim(rng), dim(rng), dim(rng)}, rng, -10.0, 10.0);
      const fs::path file = dir / ("check" + std::to_string(i) + ".amtn");
      write_amtn(file, t);
      ok = bit_equal(t, read_amtn(file));
    }
    // frozen layout: (1,1,1,2) holding {1.0, -2.0}
    const fs::path frozen = dir / "frozen.amtn";
    write_amtn(frozen, Tensor::from_vector(Shape{1, 1, 1, 2}, {1.0, -2.0}));
    const std::string bytes = read_text_file(frozen);
    const unsigned char expect[] = {'A', 'M', 'T', 'N', 0x01, 1, 0, 0, 0, 1, 0, 0, 0,
                                    1, 0, 0, 0, 2, 0, 0, 0,
                                    0x00, 0x00, 0x80, 0x3f,   // 1.0f LE
                                    0x00, 0x00, 0x00, 0xc0};  // -2.0f LE
    ok = ok && bytes.size() == sizeof(expect) &&
         std::memcmp(bytes.data(), expect, sizeof(expect)) == 0;
    suite.check("format.amtn_roundtrip", ok);
  }
  {
    EvalData data{{"img-1",
                   {Box{0, 0, 2.5, 3.25}},
                   {{"img-1", Box{0.125, 0.5, 2.0, 3.0}, 0.875}}},
                  {"img-2", {}, {}}};
    EvalData back = detections_from_json_text(detections_to_json(data));
    bool ok = back.size() == data.size();
    for (std::size_t i = 0; ok && i < data.size(); ++i) {
      ok = back[i].id == data[i].id && back[i].gt.size() == data[i].gt.size() &&
           back[i].det.size() == data[i].det.size();
      for (std::size_t g = 0; ok && g < data[i].gt.size(); ++g) {
        ok = std::memcmp(&back[i].gt[g], &data[i].gt[g], sizeof(Box)) == 0;
      }
      for (std::size_t d = 0; ok && d < data[i].det.size(); ++d) {
        ok = back[i].det[d].score == data[i].det[d].score &&
             std::memcmp(&back[i].det[d].box, &data[i].det[d].box, sizeof(Box)) == 0;
      }
    }
    suite.check("format.detection_json_roundtrip", ok);
  }
}

}  // namespace

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed) {
  Suite suite;
  std::mt19937_64 rng(seed);
  tensor_checks(suite, rng);
  me_checks(suite, rng);
  aa_checks(suite, rng);
  pyramid_checks(suite, rng);
  train_checks(suite, rng);
  eval_checks(suite, rng);
  format_checks(suite, rng);
  return suite.results;
}

// ---- gradient-check suite ------------------------------------------------------

namespace {

// Targets are rooted as sum(w * y) with a weighting drawn once per target, so
// every output coordinate contributes a distinct but repeatable signal.
Tensor make_weight(Shape s, std::mt19937_64& rng) {
  return Tensor::uniform(s, 0.5, 1.5, rng);
}

Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

// Deliberately wrong backward pass: forward is x^2 but the tape claims 3x.
Tensor faulty_square(const Tensor& x) {
  auto node = std::make_shared<detail::Node>();
  node->shape = x.shape();
  node->data.resize(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) node->data[i] = x.data()[i] * x.data()[i];
  node->requires_grad = x.requires_grad() && detail::grad_enabled();
  if (node->requires_grad) {
    node->parents = {x.node()};
    node->backprop = [](detail::Node& self) {
      detail::Node* p = self.parents[0].get();
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        p->grad[i] += 3.0 * p->data[i] * self.grad[i];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
  Tensor t = Tensor::uniform(s, 0.2, 1.0, rng, true);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (flip(rng)) t.data()[i] = -t.data()[i];
  }
  return t;
}

}  // namespace

std::vector<GradTargetResult> run_gradcheck_suite(std::uint64_t seed, double eps,
                                                  bool inject_fault) {
  std::vector<GradTargetResult> results;
  std::mt19937_64 rng(seed);
  constexpr double kPrimitive = 1e-6;
  constexpr double kComposite = 1e-4;

  auto run = [&](const std::string& name, double threshold, const ScalarFn& f,
                 const std::vector<Tensor>& leaves) {
    const GradCheckResult r = gradcheck(f, leaves, eps);
    results.push_back({name, r.max_rel_err, threshold, r.coords_checked, r.coords_skipped});
  };

  {
    Tensor x = Tensor::uniform(Shape{2, 3, 5, 4}, -1.0, 1.0, rng, true);
    Tensor kernel = Tensor::uniform(Shape{4, 3, 3, 3}, -0.5, 0.5, rng, true);
    Tensor bias = Tensor::uniform(Shape{1, 4, 1, 1}, -0.5, 0.5, rng, true);
    Tensor w = make_weight(Shape{2, 4, 5, 4}, rng);
    run("conv2d", kPrimitive,
        [&]() { return weighted_sum(conv2d(x, kernel, bias, 1, 1), w); },
        {x, kernel, bias});
  }
  {
    Tensor x = Tensor::uniform(Shape{2, 3, 4, 4}, -1.0, 1.0, rng, true);
    Tensor gamma = Tensor::uniform(Shape{1, 3, 1, 1}, 0.5, 1.5, rng, true);
    Tensor beta = Tensor::uniform(Shape{1, 3, 1, 1}, -0.5, 0.5, rng, true);
    Tensor mean = Tensor::uniform(Shape{1, 3, 1, 1}, -0.2, 0.2, rng);
    Tensor var = Tensor::uniform(Shape{1, 3, 1, 1}, 0.5, 1.5, rng);
    Tensor w = make_weight(x.shape(), rng);
    run("batchnorm_eval", kPrimitive,
        [&]() {
          return weighted_sum(batchnorm2d(x, gamma, beta, mean, var, 1e-5, BnMode::Eval), w);
        },
        {x, gamma, beta});
    // batch statistics couple every coordinate through 1/sqrt(var), which puts
    // the eps=1e-5 central-difference noise floor near 1e-6; checked against
    // the composite threshold
    run("batchnorm_train", kComposite,
        [&]() {
          Tensor rm = Tensor::zeros(Shape{1, 3, 1, 1});
          Tensor rv = Tensor::full(Shape{1, 3, 1, 1}, 1.0);
          return weighted_sum(batchnorm2d(x, gamma, beta, rm, rv, 1e-5, BnMode::Train), w);
        },
        {x, gamma, beta});
  }
  {
    Tensor x = away_from_zero(Shape{1, 2, 4, 4}, rng);
    Tensor w = make_weight(x.shape(), rng);
    run("relu", kPrimitive, [&]() { return weighted_sum(relu(x), w); }, {x});
  }
  {
    Tensor x = Tensor::uniform(Shape{1, 2, 4, 4}, -2.0, 2.0, rng, true);
    Tensor w = make_weight(x.shape(), rng);
    run("silu", kPrimitive, [&]() { return weighted_sum(silu(x), w); }, {x});
  }
  {
    Tensor x = Tensor::uniform(Shape{1, 3, 3, 4}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{1, 3, 6, 8}, rng);
    run("upsample_nearest2x", kPrimitive,
        [&]() { return weighted_sum(upsample_nearest2x(x), w); }, {x});
  }
  {
    Tensor x = Tensor::uniform(Shape{1, 3, 4, 6}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{1, 3, 2, 3}, rng);
    run("downsample_avg2x", kPrimitive,
        [&]() { return weighted_sum(downsample_avg2x(x), w); }, {x});
  }
  {
    Tensor x = Tensor::uniform(Shape{1, 1, 4, 5}, -2.0, 2.0, rng, true);
    Tensor w = make_weight(x.shape(), rng);
    run("softmax_lastdim", kPrimitive,
        [&]() { return weighted_sum(softmax_lastdim(x), w); }, {x});
  }
  {
    Tensor a = Tensor::uniform(Shape{1, 1, 3, 4}, -1.0, 1.0, rng, true);
    Tensor b = Tensor::uniform(Shape{1, 1, 4, 2}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{1, 1, 3, 2}, rng);
    run("matmul", kPrimitive, [&]() { return weighted_sum(matmul(a, b), w); }, {a, b});
  }
  {
    Tensor q = Tensor::uniform(Shape{1, 1, 5, 3}, -1.0, 1.0, rng, true);
    Tensor k = Tensor::uniform(Shape{1, 1, 5, 3}, -1.0, 1.0, rng, true);
    Tensor v = Tensor::uniform(Shape{1, 1, 5, 4}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{1, 1, 5, 4}, rng);
    run("scaled_dot_attention", kPrimitive,
        [&]() { return weighted_sum(scaled_dot_attention(q, k, v, 0.57), w); }, {q, k, v});
  }
  {
    Tensor x = Tensor::uniform(Shape{2, 3, 3, 3}, -1.0, 1.0, rng, true);
    Tensor proj = Tensor::uniform(Shape{1, 1, 3, 5}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{2, 5, 3, 3}, rng);
    run("project_channels", kPrimitive,
        [&]() { return weighted_sum(project_channels(x, proj), w); }, {x, proj});
  }
  {
    Tensor logits = Tensor::uniform(Shape{1, 1, 4, 4}, -2.0, 2.0, rng, true);
    Tensor targets = Tensor::zeros(Shape{1, 1, 4, 4});
    std::bernoulli_distribution positive(0.3);
    for (std::size_t i = 0; i < targets.numel(); ++i) {
      targets.data()[i] = positive(rng) ? 1.0 : 0.0;
    }
    run("bce_with_logits", kPrimitive,
        [&]() { return bce_with_logits_mean(logits, targets); }, {logits});
  }
  {
    std::mt19937_64 head_rng(901);
    ToyHeadParams head = ToyHeadParams::init({4}, head_rng);
    Tensor x = Tensor::uniform(Shape{1, 4, 3, 3}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(Shape{1, 5, 3, 3}, rng);
    FeaturePyramid pyr;
    pyr.maps = {x};
    std::vector<Tensor> leaves{x};
    auto head_params = head.parameters();
    leaves.insert(leaves.end(), head_params.begin(), head_params.end());
    run("toy_head", kPrimitive,
        [&]() { return weighted_sum(toy_head(pyr, head)[0], w); }, leaves);
  }

  {
    std::mt19937_64 param_rng(seed + 17);
    MeBlockParams params = MeBlockParams::init(4, true, true, param_rng);
    Tensor shallow = Tensor::uniform(Shape{1, 2, 8, 8}, -1.0, 1.0, rng, true);
    Tensor cur = Tensor::uniform(Shape{1, 4, 4, 4}, -1.0, 1.0, rng, true);
    Tensor deep = Tensor::uniform(Shape{1, 8, 2, 2}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(cur.shape(), rng);
    std::vector<Tensor> leaves{shallow, cur, deep};
    auto more = params.parameters();
    leaves.insert(leaves.end(), more.begin(), more.end());
    run("me_forward", kComposite,
        [&]() { return weighted_sum(me_forward(shallow, cur, deep, params), w); }, leaves);
  }
  {
    std::mt19937_64 param_rng(seed + 29);
    AaBlockParams params = AaBlockParams::init(8, 2, FusionMode::Adaptive, param_rng);
    Tensor x = Tensor::uniform(Shape{1, 8, 4, 4}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(x.shape(), rng);
    std::vector<Tensor> leaves{x};
    auto more = params.parameters();
    leaves.insert(leaves.end(), more.begin(), more.end());
    run("aa_forward_adaptive", kComposite,
        [&]() { return weighted_sum(aa_forward(x, params), w); }, leaves);
  }
  {
    std::mt19937_64 param_rng(seed + 31);
    AaBlockParams params = AaBlockParams::init(8, 2, FusionMode::Concat, param_rng);
    Tensor x = Tensor::uniform(Shape{1, 8, 4, 4}, -1.0, 1.0, rng, true);
    Tensor w = make_weight(x.shape(), rng);
    std::vector<Tensor> leaves{x};
    auto more = params.parameters();
    leaves.insert(leaves.end(), more.begin(), more.end());
    run("aa_forward_concat", kComposite,
        [&]() { return weighted_sum(aa_forward(x, params), w); }, leaves);
  }
  {
    AmamConfig cfg;
    cfg.levels = {4, 8, 16};
    cfg.heads = 2;
    cfg.seed = seed + 43;
    AmamParams params = AmamParams::init(cfg);
    FeaturePyramid pyr;
    pyr.maps = {Tensor::uniform(Shape{1, 4, 8, 8}, -1.0, 1.0, rng, true),
                Tensor::uniform(Shape{1, 8, 4, 4}, -1.0, 1.0, rng, true),
                Tensor::uniform(Shape{1, 16, 2, 2}, -1.0, 1.0, rng, true)};
    std::vector<Tensor> weights;
    for (const Tensor& level : pyr.maps) weights.push_back(make_weight(level.shape(), rng));
    run("amam_forward", kComposite,
        [&]() {
          FeaturePyramid out = amam_forward(pyr, cfg, params);
          Tensor total;
          for (std::size_t i = 0; i < out.maps.size(); ++i) {
            Tensor piece = weighted_sum(out.maps[i], weights[i]);
            total = total.valid() ? add(total, piece) : piece;
          }
          return total;
        },
        pyr.maps);
  }

  if (inject_fault) {
    Tensor x = Tensor::uniform(Shape{1, 1, 3, 3}, 0.5, 1.5, rng, true);
    Tensor w = make_weight(x.shape(), rng);
    run("fault_injection_control", kPrimitive,
        [&]() { return weighted_sum(faulty_square(x), w); }, {x});
  }
  return results;
}

}  // namespace amam
