#pragma once

// Self-check suite behind `softclu verify`. Each check compares production
// code against an oracle or an invariant and reports pass/fail.

#include "softclu/core.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace softclu {

enum class VerifyLevel { Fast, Full };

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Plan for cost D at regularization eps, iterated to convergence.
using PlanSolver = std::function<MatrixXd(const MatrixXd& cost, double epsilon)>;

/// The production solver run until the residual is below 1e-9 (capped at
/// 1e6 rounds).
MatrixXd converged_sinkhorn(const MatrixXd& cost, double epsilon);

/// Random uniform [0,1) costs with N in [2,8], J in [2,4]. For each instance
/// and eps in {1e-1, 1e-2, 1e-3}: the plan must not undercut the dual bound
/// of the exact optimum, the gap at 1e-3 must be within eps*log(NJ) + 1e-6,
/// and the gap must not grow as eps shrinks (slack 1e-6).
VerifyCheck check_sinkhorn_vs_lp(const PlanSolver& solver, int instances, std::uint64_t seed);

std::vector<VerifyCheck> run_verify(VerifyLevel level);

}  // namespace softclu
