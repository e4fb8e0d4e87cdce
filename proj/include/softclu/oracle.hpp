#pragma once

// Verification-only solvers. None of these share code with the production
// Sinkhorn path.

#include "softclu/core.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace softclu::oracle {

inline constexpr Index kMaxOtRows = 12;
inline constexpr Index kMaxOtCols = 6;
inline constexpr Index kMaxAssignRows = 12;
inline constexpr Index kMaxAssignCols = 4;

struct ExactPlan {
  MatrixXd plan;        // N x J, marginals 1/N and 1/J
  double objective = 0; // <plan, D>
  // Dual certificate: D_ij - u_i - v_j >= 0 with equality on the support.
  VectorXd row_potential;
  VectorXd col_potential;
  int pivots = 0;
};

/// Exact optimum of <P, D> over plans with row sums 1/N and column sums 1/J,
/// by the transportation simplex on integer flows scaled by N*J.
ExactPlan exact_ot(const MatrixXd& cost);

/// Minimizer of sum_i D(i, label_i) with exactly N/J points per label, by
/// exhaustive branch-and-bound. Ties resolve to the lexicographically first
/// labeling.
std::vector<int> balanced_hard_assign(const MatrixXd& cost);

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Central differences on every entry of `params`, compared with `analytic`
/// using |a - fd| / (|a| + 1e-8). `loss` re-evaluates at the current values
/// of the viewed parameters.
template <typename Scalar>
GradCheckReport grad_check(const std::function<Scalar()>& loss, const std::vector<TensorView<Scalar>>& params,
                           const std::vector<TensorView<Scalar>>& analytic, Scalar h, double rel_tol) {
  if (!(h > Scalar(0))) throw ConfigError("grad_check: step must be positive");
  if (params.size() != analytic.size()) throw ShapeError("grad_check: parameter and gradient lists differ");
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].values.size() != analytic[t].values.size())
      throw ShapeError("grad_check: gradient shape mismatch for " + params[t].name);
    for (std::size_t k = 0; k < params[t].values.size(); ++k) {
      Scalar& theta = params[t].values[k];
      const Scalar saved = theta;
      theta = saved + h;
      const Scalar up = loss();
      theta = saved - h;
      const Scalar down = loss();
      theta = saved;
      const double numeric = static_cast<double>((up - down) / (Scalar(2) * h));
      const double a = static_cast<double>(analytic[t].values[k]);
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_name.empty()) {
        report.max_rel_error = rel;
        report.worst_name = params[t].name;
        report.worst_index = k;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < rel_tol;
  return report;
}

}  // namespace softclu::oracle
