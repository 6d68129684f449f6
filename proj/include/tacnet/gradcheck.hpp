#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tacnet/tensor.hpp"

namespace tacnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::size_t coordinates = 0;
  /// Tensor index and flat coordinate of the worst mismatch.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Denominator floor of the relative error, scaled by max(1, |f|). Central
/// differences at h = 1e-6 carry roundoff near 1e-10 * |f|, so smaller
/// gradients cannot be resolved.
inline constexpr double kGradCheckFloor = 1e-5;

/// Scalar-valued function of tensors that are read through the captured handles.
using GraphFunction = std::function<Tensor(Graph&)>;

/// Central-difference check of d f / d wrt. Each tensor in `wrt` must require
/// grad; its values are perturbed in place and restored. Relative error per
/// coordinate is |a - n| / max(kGradCheckFloor * max(1, |f|), |a| + |n|).
GradCheckReport finite_diff_check(const GraphFunction& f, std::vector<Tensor> wrt, double h, double tol);

/// Single-tensor form: f receives the point being checked.
GradCheckReport finite_diff_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor at, double h,
                                  double tol);

std::string describe(const GradCheckReport& report);

}  // namespace tacnet
