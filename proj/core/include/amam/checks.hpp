#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace amam {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Randomized invariant checks across every module, seeded for repeatability.
std::vector<CheckResult> run_invariant_suite(std::uint64_t seed);

struct GradTargetResult {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  bool passed() const { return max_rel_err < threshold; }
};

/// Finite-difference verification of every differentiable operator (threshold
/// 1e-6) and of the ME / AA / full-stack composites (threshold 1e-4).
/// inject_fault adds a control target with a deliberately wrong backward pass,
/// which must fail.
std::vector<GradTargetResult> run_gradcheck_suite(std::uint64_t seed, double eps,
                                                  bool inject_fault = false);

}  // namespace amam
