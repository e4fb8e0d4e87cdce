#include "softclu/oracle.hpp"

#include <algorithm>
#include <deque>
#include <limits>

namespace softclu::oracle {

namespace {

struct Cell {
  int row;
  int col;
};

// Potentials with u_0 = 0 and u_i + v_j = c_ij on every basic cell.
void solve_potentials(const MatrixXd& cost, const std::vector<Cell>& basis, VectorXd& u, VectorXd& v) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  std::vector<bool> has_u(static_cast<std::size_t>(n), false), has_v(static_cast<std::size_t>(m), false);
  u = VectorXd::Zero(n);
  v = VectorXd::Zero(m);
  has_u[0] = true;
  std::size_t assigned = 1;
  while (assigned < static_cast<std::size_t>(n + m)) {
    bool progress = false;
    for (const auto& c : basis) {
      if (has_u[c.row] && !has_v[c.col]) {
        v[c.col] = cost(c.row, c.col) - u[c.row];
        has_v[c.col] = true;
        ++assigned;
        progress = true;
      } else if (!has_u[c.row] && has_v[c.col]) {
        u[c.row] = cost(c.row, c.col) - v[c.col];
        has_u[c.row] = true;
        ++assigned;
        progress = true;
      }
    }
    if (!progress) throw Error("exact_ot: basis is not a spanning tree");
  }
}

// Basic cells along the tree path from row `r` to column `c`, in order.
std::vector<int> tree_path(const std::vector<Cell>& basis, int n, int r, int c) {
  // Node ids: rows 0..n-1, columns n..n+m-1. parent_edge indexes into basis.
  const int target = n + c;
  int nodes = n;
  for (const auto& b : basis) nodes = std::max(nodes, n + b.col + 1);
  std::vector<int> parent_edge(static_cast<std::size_t>(nodes), -1);
  std::vector<bool> seen(static_cast<std::size_t>(nodes), false);
  std::deque<int> queue{r};
  seen[static_cast<std::size_t>(r)] = true;
  while (!queue.empty()) {
    const int node = queue.front();
    queue.pop_front();
    if (node == target) break;
    for (std::size_t e = 0; e < basis.size(); ++e) {
      int other = -1;
      if (node < n && basis[e].row == node) other = n + basis[e].col;
      if (node >= n && basis[e].col == node - n) other = basis[e].row;
      if (other < 0 || seen[static_cast<std::size_t>(other)]) continue;
      seen[static_cast<std::size_t>(other)] = true;
      parent_edge[static_cast<std::size_t>(other)] = static_cast<int>(e);
      queue.push_back(other);
    }
  }
  if (!seen[static_cast<std::size_t>(target)]) throw Error("exact_ot: no tree path for entering cell");
  std::vector<int> path;
  for (int node = target; node != r;) {
    const int e = parent_edge[static_cast<std::size_t>(node)];
    path.push_back(e);
    node = (node >= n) ? basis[static_cast<std::size_t>(e)].row : n + basis[static_cast<std::size_t>(e)].col;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

ExactPlan exact_ot(const MatrixXd& cost) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  if (n < 1 || m < 1) throw ShapeError("exact_ot: empty cost matrix");
  if (n > kMaxOtRows || m > kMaxOtCols)
    throw SizeError("exact_ot: instance exceeds " + std::to_string(kMaxOtRows) + "x" +
                    std::to_string(kMaxOtCols));
  if (!cost.allFinite()) throw NumericalError("exact_ot: non-finite cost");

  // Integer transportation problem: each row supplies m units, each column
  // demands n units.
  std::vector<long> supply(static_cast<std::size_t>(n), static_cast<long>(m));
  std::vector<long> demand(static_cast<std::size_t>(m), static_cast<long>(n));
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> flow =
      Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, m);
  std::vector<Cell> basis;

  // Northwest corner: a staircase of exactly n + m - 1 basic cells.
  {
    int i = 0, j = 0;
    for (;;) {
      const long x = std::min(supply[static_cast<std::size_t>(i)], demand[static_cast<std::size_t>(j)]);
      flow(i, j) = x;
      supply[static_cast<std::size_t>(i)] -= x;
      demand[static_cast<std::size_t>(j)] -= x;
      basis.push_back({i, j});
      if (i == n - 1 && j == m - 1) break;
      if (supply[static_cast<std::size_t>(i)] == 0 && i < n - 1)
        ++i;
      else
        ++j;
    }
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  VectorXd u, v;
  int pivots = 0;
  const int max_pivots = 100000;
  for (;; ++pivots) {
    if (pivots > max_pivots) throw NumericalError("exact_ot: pivot limit reached (cycling)");
    solve_potentials(cost, basis, u, v);

    std::vector<std::vector<bool>> is_basic(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(m), false));
    for (const auto& c : basis) is_basic[static_cast<std::size_t>(c.row)][static_cast<std::size_t>(c.col)] = true;

    double best = -tol;
    int er = -1, ec = -1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        if (is_basic[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
        const double reduced = cost(i, j) - u[i] - v[j];
        if (reduced < best) {
          best = reduced;
          er = i;
          ec = j;
        }
      }
    if (er < 0) break;

    const auto path = tree_path(basis, static_cast<int>(n), er, ec);
    // Signs along the cycle: entering +, then -, +, ..., - on the path.
    long theta = std::numeric_limits<long>::max();
    int leave = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const auto& c = basis[static_cast<std::size_t>(path[k])];
      const long f = flow(c.row, c.col);
      if (f < theta || (f == theta && leave >= 0 &&
                        (c.row < basis[static_cast<std::size_t>(leave)].row ||
                         (c.row == basis[static_cast<std::size_t>(leave)].row &&
                          c.col < basis[static_cast<std::size_t>(leave)].col)))) {
        theta = f;
        leave = path[k];
      }
    }
    flow(er, ec) += theta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      const auto& c = basis[static_cast<std::size_t>(path[k])];
      flow(c.row, c.col) += (k % 2 == 0) ? -theta : theta;
    }
    basis[static_cast<std::size_t>(leave)] = {er, ec};
  }

  ExactPlan out;
  const double mass = static_cast<double>(n * m);
  out.plan = flow.cast<double>() / mass;
  out.objective = out.plan.cwiseProduct(cost).sum();
  // Rescale the duals to the unit-mass problem: sum_i u_i/N + sum_j v_j/J = objective.
  out.row_potential = u;
  out.col_potential = v;
  out.pivots = pivots;
  return out;
}

namespace {

struct AssignSearch {
  const MatrixXd& cost;
  Index n;
  Index clusters;
  std::vector<int> capacity;
  std::vector<int> current;
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  VectorXd suffix_lower;  // sum of row minima from row i onward

  void search(Index i, double partial) {
    if (partial + suffix_lower[i] >= best_cost) return;
    if (i == n) {
      best_cost = partial;
      best = current;
      return;
    }
    for (Index j = 0; j < clusters; ++j) {
      if (capacity[static_cast<std::size_t>(j)] == 0) continue;
      --capacity[static_cast<std::size_t>(j)];
      current[static_cast<std::size_t>(i)] = static_cast<int>(j);
      search(i + 1, partial + cost(i, j));
      ++capacity[static_cast<std::size_t>(j)];
    }
  }
};

}  // namespace

std::vector<int> balanced_hard_assign(const MatrixXd& cost) {
  const Index n = cost.rows();
  const Index clusters = cost.cols();
  if (n < 1 || clusters < 1) throw ShapeError("balanced_hard_assign: empty cost matrix");
  if (n > kMaxAssignRows || clusters > kMaxAssignCols)
    throw SizeError("balanced_hard_assign: instance exceeds " + std::to_string(kMaxAssignRows) + "x" +
                    std::to_string(kMaxAssignCols));
  if (n % clusters != 0) throw DivisibilityError("balanced_hard_assign: J must divide N");

  AssignSearch s{cost, n, clusters, std::vector<int>(static_cast<std::size_t>(clusters), static_cast<int>(n / clusters)),
                 std::vector<int>(static_cast<std::size_t>(n), 0), {}, std::numeric_limits<double>::infinity(),
                 VectorXd::Zero(n + 1)};
  for (Index i = n; i-- > 0;) s.suffix_lower[i] = s.suffix_lower[i + 1] + cost.row(i).minCoeff();
  // The bound is exact-or-lower, so strict pruning keeps the first optimum found.
  s.best_cost = std::numeric_limits<double>::infinity();
  s.search(0, 0.0);
  return s.best;
}

}  // namespace softclu::oracle
