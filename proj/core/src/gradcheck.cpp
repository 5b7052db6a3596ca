#include "amam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace amam {

namespace detail {

namespace {
thread_local std::vector<std::uint64_t>* g_kink_target = nullptr;
}

bool kink_recording() { return g_kink_target != nullptr; }

void record_kink_signature(std::uint64_t signature) {
  if (g_kink_target) g_kink_target->push_back(signature);
}

KinkScope::KinkScope() : previous_(g_kink_target) { g_kink_target = &signatures_; }

KinkScope::~KinkScope() { g_kink_target = previous_; }

}  // namespace detail

namespace {

double eval_with_signature(const ScalarFn& f, std::vector<std::uint64_t>& sig_out) {
  NoGradGuard no_grad;
  detail::KinkScope scope;
  const double value = f().item();
  sig_out = scope.signatures();
  return value;
}

}  // namespace

GradCheckResult gradcheck(const ScalarFn& f, const std::vector<Tensor>& leaves, double eps) {
  // analytic pass
  for (const Tensor& leaf : leaves) {
    Tensor l = leaf;
    l.zero_grad();
  }
  Tensor root = f();
  root.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.push_back(leaf.grad());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);  // disconnected leaf
    }
  }

  GradCheckResult result;
  std::vector<std::uint64_t> sig_plus, sig_minus;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    double* data = leaf.data();
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double f_plus = eval_with_signature(f, sig_plus);
      data[i] = saved - eps;
      const double f_minus = eval_with_signature(f, sig_minus);
      data[i] = saved;
      if (sig_plus != sig_minus) {
        ++result.coords_skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.coords_checked;
    }
  }
  return result;
}

GradCheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          double eps) {
  return gradcheck([&]() { return f(x); }, {x}, eps);
}

}  // namespace amam
