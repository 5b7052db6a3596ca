#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amam/checks.hpp"
#include "amam/serialize.hpp"

namespace fs = std::filesystem;
using namespace amam;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailure = 1;
constexpr int kUsageError = 2;

int cmd_check(std::uint64_t seed) {
  const std::vector<CheckResult> results = run_invariant_suite(seed);
  std::size_t failed = 0;
  for (const CheckResult& r : results) {
    std::printf("[%s] %-42s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    if (!r.passed) ++failed;
  }
  std::printf("%zu/%zu invariants passed\n", results.size() - failed, results.size());
  return failed == 0 ? kOk : kCheckFailure;
}

int cmd_gradcheck(std::uint64_t seed, double eps, bool inject_fault) {
  std::printf("gradient check: seed=%llu eps=%g\n",
              static_cast<unsigned long long>(seed), eps);
  const auto results = run_gradcheck_suite(seed, eps, inject_fault);
  std::size_t failed = 0;
  for (const GradTargetResult& r : results) {
    std::printf("[%s] %-24s max_rel_err=%.3e threshold=%.0e coords=%zu skipped=%zu\n",
                r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_err, r.threshold,
                r.coords_checked, r.coords_skipped);
    if (!r.passed()) ++failed;
  }
  std::printf("%zu/%zu gradient targets passed\n", results.size() - failed, results.size());
  return failed == 0 ? kOk : kCheckFailure;
}

int cmd_forward(const std::string& config_path, const std::string& input_dir,
                const std::string& output_dir) {
  const AmamConfig cfg = config_from_json_file(config_path);

  FeaturePyramid pyr;
  for (int level = 0;; ++level) {
    const fs::path file = fs::path(input_dir) / ("level" + std::to_string(level) + ".amtn");
    if (!fs::exists(file)) break;
    pyr.maps.push_back(read_amtn(file));
  }
  if (pyr.maps.empty()) {
    throw IoError("no level0.amtn found in " + input_dir);
  }

  const AmamParams params = AmamParams::init(cfg);
  const FeaturePyramid out = amam_forward(pyr, cfg, params);

  fs::create_directories(output_dir);
  std::string manifest = "{\n  \"levels\": [\n";
  for (std::size_t i = 0; i < out.maps.size(); ++i) {
    const std::string name = "level" + std::to_string(i) + ".amtn";
    write_amtn(fs::path(output_dir) / name, out.maps[i]);
    const Shape s = out.maps[i].shape();
    manifest += "    {\"file\": \"" + name + "\", \"shape\": [" + std::to_string(s.n) + ", " +
                std::to_string(s.c) + ", " + std::to_string(s.h) + ", " + std::to_string(s.w) +
                "]}";
    manifest += (i + 1 < out.maps.size()) ? ",\n" : "\n";
  }
  manifest += "  ]\n}\n";
  write_text_file(fs::path(output_dir) / "manifest.json", manifest);
  std::printf("wrote %zu levels to %s\n", out.maps.size(), output_dir.c_str());
  return kOk;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, double iou_thr,
             double conf_thr, const std::string& out_path, const std::string& pr_csv_path) {
  const EvalData pred = detections_from_json_file(pred_path);
  const EvalData gt = detections_from_json_file(gt_path);

  // merge on image id: ground truth from --gt, detections from --pred
  std::map<std::string, ImageEval> merged;
  for (const ImageEval& image : gt) {
    ImageEval entry;
    entry.id = image.id;
    entry.gt = image.gt;
    merged[image.id] = std::move(entry);
  }
  for (const ImageEval& image : pred) {
    merged[image.id].id = image.id;
    merged[image.id].det = image.det;
  }
  EvalData data;
  for (auto& [id, image] : merged) data.push_back(std::move(image));

  const EvalReport report = evaluate(data, iou_thr, conf_thr);
  std::printf("precision (IoU=%.2f, conf>=%.2f): %.6f%s\n", iou_thr, conf_thr, report.precision,
              report.precision_degenerate ? " (degenerate: no detections kept)" : "");
  std::printf("recall    (IoU=%.2f, conf>=%.2f): %.6f%s\n", iou_thr, conf_thr, report.recall,
              report.recall_degenerate ? " (degenerate: no ground truth)" : "");
  std::printf("ap_50:    %.6f\n", report.ap_50);
  std::printf("ap_50_95: %.6f\n", report.ap_50_95);
  std::printf("ap per threshold:");
  for (double ap : report.ap_per_threshold) std::printf(" %.6f", ap);
  std::printf("\n");
  write_text_file(out_path, report_to_json(report));
  if (!pr_csv_path.empty()) {
    write_text_file(pr_csv_path, pr_curve_to_csv(pr_curve(data, iou_thr)));
  }
  return kOk;
}

int cmd_ablate(const std::vector<int>& head_counts, const std::vector<std::string>& fusions,
               int steps, std::uint64_t seed, const std::string& out_path) {
  AmamConfig base;
  for (int heads : head_counts) {
    for (int channels : base.levels) {
      if (heads < 1 || channels % heads != 0) {
        throw ConfigError("ablate: head count " + std::to_string(heads) +
                          " does not divide level width " + std::to_string(channels));
      }
    }
  }
  std::vector<FusionMode> modes;
  for (const std::string& name : fusions) modes.push_back(fusion_mode_from_string(name));

  std::string csv = "heads,fusion,me,aa,final_loss\n";
  auto run_cell = [&](int heads, FusionMode fusion, bool me, bool aa) {
    AmamConfig cfg = base;
    cfg.heads = heads;
    cfg.fusion_mode = fusion;
    cfg.enabled_me = me;
    cfg.enabled_aa = aa;
    cfg.seed = seed;
    const TrainTrace trace = toy_train(cfg, steps, seed);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", trace.loss.back());
    csv += std::to_string(heads) + "," + to_string(fusion) + "," + (me ? "1" : "0") + "," +
           (aa ? "1" : "0") + "," + buf + "\n";
    std::printf("heads=%-2d fusion=%-8s me=%d aa=%d final_loss=%.6f\n", heads,
                to_string(fusion).c_str(), me ? 1 : 0, aa ? 1 : 0, trace.loss.back());
  };

  // head-count x fusion grid with both blocks enabled
  for (int heads : head_counts) {
    for (FusionMode fusion : modes) run_cell(heads, fusion, true, true);
  }
  // ME/AA on-off matrix at the default head count and fusion
  for (int me = 0; me < 2; ++me) {
    for (int aa = 0; aa < 2; ++aa) run_cell(base.heads, base.fusion_mode, me == 1, aa == 1);
  }

  write_text_file(out_path, csv);
  std::printf("wrote %s\n", out_path.c_str());
  return kOk;
}

int cmd_schedule(int epochs, int iters_per_epoch, int warmup_epochs, double lr_init,
                 double lr_final, const std::string& out_path) {
  if (epochs < 1 || iters_per_epoch < 1) {
    throw ConfigError("schedule: epochs and iters-per-epoch must be >= 1");
  }
  LrSchedule schedule;
  schedule.total_iters = epochs * iters_per_epoch;
  schedule.warmup_iters = warmup_epochs * iters_per_epoch;
  schedule.lr_init = lr_init;
  schedule.lr_final = lr_final;
  schedule.validate();

  std::string csv = "iter,lr\n";
  for (int iter = 0; iter <= schedule.total_iters; ++iter) {
    csv += std::to_string(iter) + "," + format_sig9(lr_at(iter, schedule)) + "\n";
  }
  write_text_file(out_path, csv);
  std::printf("schedule: %d iters, lr %.9g at end of warm-up, %.9g at end\n",
              schedule.total_iters, lr_at(schedule.warmup_iters, schedule),
              lr_at(schedule.total_iters, schedule));
  return kOk;
}

int cmd_train(const std::string& config_path, int steps, std::uint64_t seed,
              const std::string& out_path) {
  AmamConfig cfg;
  if (!config_path.empty()) cfg = config_from_json_file(config_path);
  const TrainTrace trace = toy_train(cfg, steps, seed);
  write_text_file(out_path, trace_to_csv(trace));
  std::printf("trained %d steps: first loss %.6f, final loss %.6f, trace in %s\n", steps,
              trace.loss.front(), trace.loss.back(), out_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMAM: multi-scale fusion + cascaded adaptive attention toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  // check
  {
    auto* sub = app.add_subcommand("check", "Run the cross-module invariant suite");
    auto seed = std::make_shared<std::uint64_t>(0);
    sub->add_option("--seed", *seed, "RNG seed for randomized checks");
    sub->callback([seed, &action]() { action = [seed]() { return cmd_check(*seed); }; });
  }
  // gradcheck
  {
    auto* sub = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    auto seed = std::make_shared<std::uint64_t>(0);
    auto eps = std::make_shared<double>(1e-5);
    auto inject = std::make_shared<bool>(false);
    sub->add_option("--seed", *seed, "RNG seed");
    sub->add_option("--eps", *eps, "central-difference step");
    sub->add_flag("--inject-gradient-fault", *inject)->group("");  // negative-control hook
    sub->callback([seed, eps, inject, &action]() {
      action = [seed, eps, inject]() { return cmd_gradcheck(*seed, *eps, *inject); };
    });
  }
  // forward
  {
    auto* sub = app.add_subcommand("forward", "Run the module stack over an AMTN pyramid");
    auto config = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto output = std::make_shared<std::string>();
    sub->add_option("--config", *config, "module config JSON")->required();
    sub->add_option("--input", *input, "directory with level0.amtn, level1.amtn, ...")->required();
    sub->add_option("--output", *output, "output directory")->required();
    sub->callback([config, input, output, &action]() {
      action = [config, input, output]() { return cmd_forward(*config, *input, *output); };
    });
  }
  // eval
  {
    auto* sub = app.add_subcommand("eval", "Detection metrics over prediction/GT JSON");
    auto pred = std::make_shared<std::string>();
    auto gt = std::make_shared<std::string>();
    auto iou_thr = std::make_shared<double>(0.5);
    auto conf = std::make_shared<double>(0.25);
    auto out = std::make_shared<std::string>("eval_report.json");
    auto pr_csv = std::make_shared<std::string>();
    sub->add_option("--pred", *pred, "detections JSON")->required();
    sub->add_option("--gt", *gt, "ground-truth JSON")->required();
    sub->add_option("--iou", *iou_thr, "IoU threshold for precision/recall");
    sub->add_option("--conf", *conf, "confidence threshold for precision/recall");
    sub->add_option("--out", *out, "report JSON path");
    sub->add_option("--pr-csv", *pr_csv, "optional PR-curve CSV path");
    sub->callback([pred, gt, iou_thr, conf, out, pr_csv, &action]() {
      action = [pred, gt, iou_thr, conf, out, pr_csv]() {
        return cmd_eval(*pred, *gt, *iou_thr, *conf, *out, *pr_csv);
      };
    });
  }
  // ablate
  {
    auto* sub = app.add_subcommand("ablate", "Head-count / fusion / ME-AA ablation sweep");
    auto heads = std::make_shared<std::vector<int>>(std::vector<int>{1, 2, 4, 8, 16});
    auto fusion = std::make_shared<std::vector<std::string>>(
        std::vector<std::string>{"adaptive", "average", "add", "concat"});
    auto steps = std::make_shared<int>(10);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>("ablation.csv");
    sub->add_option("--heads", *heads, "head counts")->delimiter(',');
    sub->add_option("--fusion", *fusion, "fusion modes")->delimiter(',');
    sub->add_option("--steps", *steps, "training steps per cell");
    sub->add_option("--seed", *seed, "seed shared by all cells");
    sub->add_option("--out", *out, "output CSV path");
    sub->callback([heads, fusion, steps, seed, out, &action]() {
      action = [heads, fusion, steps, seed, out]() {
        return cmd_ablate(*heads, *fusion, *steps, *seed, *out);
      };
    });
  }
  // schedule
  {
    auto* sub = app.add_subcommand("schedule", "Emit the warm-up + cosine LR curve");
    auto epochs = std::make_shared<int>(500);
    auto iters = std::make_shared<int>(1);
    auto warmup = std::make_shared<int>(3);
    auto lr_init = std::make_shared<double>(0.01);
    auto lr_final = std::make_shared<double>(0.002);
    auto out = std::make_shared<std::string>("schedule.csv");
    sub->add_option("--epochs", *epochs, "epoch count");
    sub->add_option("--iters-per-epoch", *iters, "iterations per epoch");
    sub->add_option("--warmup-epochs", *warmup, "warm-up epochs");
    sub->add_option("--lr-init", *lr_init, "initial learning rate");
    sub->add_option("--lr-final", *lr_final, "final learning rate");
    sub->add_option("--out", *out, "output CSV path");
    sub->callback([epochs, iters, warmup, lr_init, lr_final, out, &action]() {
      action = [epochs, iters, warmup, lr_init, lr_final, out]() {
        return cmd_schedule(*epochs, *iters, *warmup, *lr_init, *lr_final, *out);
      };
    });
  }
  // train
  {
    auto* sub = app.add_subcommand("train", "Toy synthetic-detection training run");
    auto config = std::make_shared<std::string>();
    auto steps = std::make_shared<int>(200);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>("train_trace.csv");
    sub->add_option("--config", *config, "module config JSON (defaults used if omitted)");
    sub->add_option("--steps", *steps, "training steps");
    sub->add_option("--seed", *seed, "data seed");
    sub->add_option("--out", *out, "loss-trace CSV path");
    sub->callback([config, steps, seed, out, &action]() {
      action = [config, steps, seed, out]() { return cmd_train(*config, *steps, *seed, *out); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    return action();
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailure;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  }
}
