#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "amam/tensor.hpp"

namespace amam {

namespace detail {

// Kink signatures: while recording, non-smooth ops (ReLU, masked L1) hash the
// side of each kink every input falls on. A coordinate whose +eps and -eps
// evaluations produce different signatures crossed a kink, so its central
// difference is meaningless and the check skips it.
bool kink_recording();
void record_kink_signature(std::uint64_t signature);

class KinkScope {
 public:
  KinkScope();
  ~KinkScope();
  KinkScope(const KinkScope&) = delete;
  KinkScope& operator=(const KinkScope&) = delete;
  const std::vector<std::uint64_t>& signatures() const { return signatures_; }

 private:
  std::vector<std::uint64_t> signatures_;
  std::vector<std::uint64_t>* previous_;
};

}  // namespace detail

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // kink crossings
};

/// Rebuilds the graph from the current leaf values and returns a scalar root.
using ScalarFn = std::function<Tensor()>;

/// Central-difference check of d(f)/d(leaf) for every coordinate of every
/// leaf: (f(x+eps e) - f(x-eps e)) / (2 eps) against the reverse-mode result,
/// reported as max over coordinates of |a - n| / max(1e-8, |a| + |n|).
GradCheckResult gradcheck(const ScalarFn& f, const std::vector<Tensor>& leaves,
                          double eps = 1e-5);

/// Convenience wrapper for a single-input function.
GradCheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          double eps = 1e-5);

}  // namespace amam
