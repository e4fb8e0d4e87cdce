#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

#include "softclu/oracle.hpp"
#include "softclu/ot.hpp"
#include "softclu/verify.hpp"
#include "test_util.hpp"

using namespace softclu;

namespace {

// Brute force over all balanced labelings.
double best_balanced(const MatrixXd& d, std::vector<int>& labels, Index pos, std::vector<int>& room,
                     double partial, double best) {
  if (pos == d.rows()) return std::min(best, partial);
  for (Index j = 0; j < d.cols(); ++j) {
    if (room[static_cast<std::size_t>(j)] == 0) continue;
    --room[static_cast<std::size_t>(j)];
    labels[static_cast<std::size_t>(pos)] = static_cast<int>(j);
    best = best_balanced(d, labels, pos + 1, room, partial + d(pos, j), best);
    ++room[static_cast<std::size_t>(j)];
  }
  return best;
}

double assignment_cost(const MatrixXd& d, const std::vector<int>& labels) {
  double c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) c += d(static_cast<Index>(i), labels[i]);
  return c;
}

}  // namespace

TEST_CASE("exact_ot: constant cost") {
  const auto r = oracle::exact_ot(MatrixXd::Constant(4, 3, 2.5));
  CHECK(r.objective == doctest::Approx(2.5).epsilon(1e-14));
  CHECK((r.plan.rowwise().sum().array() - 0.25).abs().maxCoeff() < 1e-12);
  CHECK((r.plan.colwise().sum().array() - 1.0 / 3).abs().maxCoeff() < 1e-12);
}

TEST_CASE("exact_ot: diagonal optimum") {
  MatrixXd d(2, 2);
  d << 0, 1, 1, 0;
  const auto r = oracle::exact_ot(d);
  CHECK(r.objective == 0.0);
  CHECK(r.plan(0, 0) == 0.5);
  CHECK(r.plan(1, 1) == 0.5);
  CHECK(r.plan(0, 1) == 0.0);
}

TEST_CASE("exact_ot: feasibility and dual certificate on random instances") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> rows(1, 12), cols(1, 6);
  for (int k = 0; k < 200; ++k) {
    const Index n = rows(rng), j = cols(rng);
    const MatrixXd d = testutil::random_matrix(n, j, rng, 0.0, 1.0);
    const auto r = oracle::exact_ot(d);
    CHECK((r.plan.rowwise().sum().array() - 1.0 / n).abs().maxCoeff() < 1e-10);
    CHECK((r.plan.colwise().sum().array() - 1.0 / j).abs().maxCoeff() < 1e-10);
    CHECK((r.plan.array() >= 0).all());
    CHECK(std::abs(r.objective - transport_cost<double>(r.plan, d)) < 1e-12);
    // Reduced costs nonnegative, zero on the support, and strong duality.
    const MatrixXd reduced = d - r.row_potential.replicate(1, j) - r.col_potential.transpose().replicate(n, 1);
    CHECK(reduced.minCoeff() > -1e-10);
    CHECK((reduced.array() * r.plan.array()).abs().maxCoeff() < 1e-12);
    CHECK(std::abs(r.row_potential.sum() / n + r.col_potential.sum() / j - r.objective) < 1e-10);
  }
}

TEST_CASE("exact_ot: no plan from a grid search beats it") {
  // 2 x 2 plans form a one-parameter family; scan it.
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const MatrixXd d = testutil::random_matrix(2, 2, rng, 0.0, 1.0);
    double best = 1e300;
    for (int t = 0; t <= 1000; ++t) {
      const double x = 0.5 * t / 1000.0;
      MatrixXd p(2, 2);
      p << x, 0.5 - x, 0.5 - x, x;
      best = std::min(best, transport_cost<double>(p, d));
    }
    CHECK(oracle::exact_ot(d).objective <= best + 1e-15);
  }
}

TEST_CASE("exact_ot: lower bound for Sinkhorn at every epsilon") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k) {
    const MatrixXd d = testutil::random_matrix(6, 3, rng, 0.0, 1.0);
    const double lp = oracle::exact_ot(d).objective;
    for (double eps : {1.0, 1e-1, 1e-2}) {
      const auto plan = sinkhorn_until<double>(d, eps, 1e-13, 1000000).plan;
      CHECK(transport_cost<double>(plan, d) >= lp - 1e-9);
    }
  }
}

TEST_CASE("exact_ot: size limits") {
  CHECK_THROWS_AS(oracle::exact_ot(MatrixXd::Zero(13, 2)), SizeError);
  CHECK_THROWS_AS(oracle::exact_ot(MatrixXd::Zero(4, 7)), SizeError);
}

TEST_CASE("balanced assignment examples") {
  MatrixXd d(2, 2);
  d << 0, 9, 9, 0;
  CHECK(oracle::balanced_hard_assign(d) == std::vector<int>{0, 1});

  // Points 0,1 sit together, as do 2,3.
  MatrixXd pairs(4, 2);
  pairs << 0.1, 5.0, 0.2, 5.1, 4.9, 0.3, 5.0, 0.1;
  CHECK(oracle::balanced_hard_assign(pairs) == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("balanced assignment: matches brute force and respects relabeling") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 40; ++k) {
    const Index j = 2 + k % 3;
    const Index n = j * (1 + k % 3);
    const MatrixXd d = testutil::random_matrix(n, j, rng, 0.0, 1.0);
    const auto labels = oracle::balanced_hard_assign(d);
    std::vector<int> counts(static_cast<std::size_t>(j), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (int c : counts) CHECK(c == n / j);
    std::vector<int> scratch(static_cast<std::size_t>(n));
    std::vector<int> room(static_cast<std::size_t>(j), static_cast<int>(n / j));
    CHECK(assignment_cost(d, labels) == doctest::Approx(best_balanced(d, scratch, 0, room, 0.0, 1e300)).epsilon(1e-14));

    std::vector<int> perm(static_cast<std::size_t>(j));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd permuted(n, j);
    for (Index c = 0; c < j; ++c) permuted.col(perm[static_cast<std::size_t>(c)]) = d.col(c);
    const auto relabeled = oracle::balanced_hard_assign(permuted);
    for (Index i = 0; i < n; ++i)
      CHECK(relabeled[static_cast<std::size_t>(i)] == perm[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]);
  }
}

TEST_CASE("balanced assignment: errors") {
  CHECK_THROWS_AS(oracle::balanced_hard_assign(MatrixXd::Zero(13, 1)), SizeError);
  CHECK_THROWS_AS(oracle::balanced_hard_assign(MatrixXd::Zero(4, 5)), SizeError);
  CHECK_THROWS_AS(oracle::balanced_hard_assign(MatrixXd::Zero(5, 2)), DivisibilityError);
}

TEST_CASE("balanced assignment of the largest instance is fast") {
  std::mt19937_64 rng(5);
  const auto t0 = std::chrono::steady_clock::now();
  oracle::balanced_hard_assign(testutil::random_matrix(12, 4, rng, 0.0, 1.0));
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
}

TEST_CASE("grad_check: quadratic") {
  double theta = 3.0, grad = 6.0;
  std::vector<TensorView<double>> p{{"theta", {&theta, 1}, {1}}};
  std::vector<TensorView<double>> g{{"theta", {&grad, 1}, {1}}};
  const std::function<double()> loss = [&] { return theta * theta; };
  const auto r = oracle::grad_check<double>(loss, p, g, 1e-3, 1e-8);
  CHECK(std::abs(r.worst_numeric - 6.0) < 1e-8);
  CHECK(r.passed);
  CHECK(theta == 3.0);
  CHECK_THROWS_AS(oracle::grad_check<double>(loss, p, g, 0.0, 1e-8), ConfigError);
}

TEST_CASE("grad_check: a 10% corrupted gradient fails") {
  MatrixXd x = (MatrixXd(2, 2) << 0.3, -0.2, 0.5, 1.1).finished();
  MatrixXd g = 2.0 * x;
  g(1, 0) *= 1.1;
  std::vector<TensorView<double>> p{{"x", {x.data(), 4}, {2, 2}}};
  std::vector<TensorView<double>> a{{"x", {g.data(), 4}, {2, 2}}};
  const std::function<double()> loss = [&] { return x.squaredNorm(); };
  const auto r = oracle::grad_check<double>(loss, p, a, 1e-5, 1e-4);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_name == "x");
  CHECK(r.worst_index == 1);
}

TEST_CASE("Sinkhorn-vs-LP check fails for a sign-flipped exponent") {
  const auto good = check_sinkhorn_vs_lp(converged_sinkhorn, 5, 99);
  CHECK(good.passed);
  const auto flipped = check_sinkhorn_vs_lp([](const MatrixXd& d, double eps) { return converged_sinkhorn(-d, eps); },
                                            5, 99);
  CHECK_FALSE(flipped.passed);
}
