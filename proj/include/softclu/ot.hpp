#pragma once

// Prototype computation, the mixed geometric/feature cost, and soft-label
// assignment by entropic optimal transport with equipartition marginals.

#include "softclu/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace softclu {

struct SolverConfig {
  int clusters = 64;
  double epsilon = 1e-3;
  int iters = 20;
  double tol = 1e-6;
  double lambda = 0.5;
  bool learn_lambda = false;

  void validate() const {
    if (clusters < 2) throw ConfigError("solver: J must be >= 2");
    if (!(epsilon > 0.0)) throw ConfigError("solver: epsilon must be positive");
    if (iters < 1) throw ConfigError("solver: iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("solver: tol must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("solver: lambda must lie in [0, 1]");
  }

  bool operator==(const SolverConfig&) const = default;
};

template <typename Scalar>
struct Prototypes {
  Matrix<Scalar> geometric;  // J x 3
  Matrix<Scalar> feature;    // J x d
  // Clusters whose score mass fell below the floor and took the global mean.
  std::vector<bool> fallback;
};

template <typename Scalar>
struct CostMatrix {
  Matrix<Scalar> cost;       // lambda * geometric + (1 - lambda) * feature
  Matrix<Scalar> geometric;  // ||p_i - c^E_j||^2
  Matrix<Scalar> feature;    // ||f_i - c^F_j||^2
  Scalar lambda = Scalar(0.5);
};

template <typename Scalar>
struct TransportPlan {
  Matrix<Scalar> plan;  // N x J, total mass 1
  int iterations = 0;
};

template <typename Scalar>
struct SoftLabels {
  Matrix<Scalar> gamma;  // N x J, rows sum to 1
};

inline constexpr double kEmptyClusterMass = 1e-12;

/// Score-weighted centroids in both spaces. A cluster with total score
/// below kEmptyClusterMass falls back to the unweighted mean.
template <typename Scalar, typename DP, typename DF, typename DS>
Prototypes<Scalar> compute_prototypes(const Eigen::MatrixBase<DP>& points, const Eigen::MatrixBase<DF>& features,
                                      const Eigen::MatrixBase<DS>& scores) {
  const Index n = scores.rows();
  require_shape(points.rows() == n && features.rows() == n, "compute_prototypes: row counts differ");
  require_shape(n >= 1, "compute_prototypes: empty input");
  const Matrix<Scalar> p = points.template cast<Scalar>();
  const Matrix<Scalar> f = features.template cast<Scalar>();
  const Matrix<Scalar> s = scores.template cast<Scalar>();

  Prototypes<Scalar> out;
  const RowVector<Scalar> mass = s.colwise().sum();
  out.geometric = s.transpose() * p;
  out.feature = s.transpose() * f;
  out.fallback.assign(static_cast<std::size_t>(s.cols()), false);
  const RowVector<Scalar> mean_p = p.colwise().mean();
  const RowVector<Scalar> mean_f = f.colwise().mean();
  for (Index j = 0; j < s.cols(); ++j) {
    if (mass[j] < Scalar(kEmptyClusterMass)) {
      out.geometric.row(j) = mean_p;
      out.feature.row(j) = mean_f;
      out.fallback[static_cast<std::size_t>(j)] = true;
    } else {
      out.geometric.row(j) /= mass[j];
      out.feature.row(j) /= mass[j];
    }
  }
  return out;
}

template <typename Scalar>
struct PrototypeGradients {
  Matrix<Scalar> d_scores;    // N x J
  Matrix<Scalar> d_features;  // N x d
};

/// Chains dL/dC^E and dL/dC^F back through the weighted averages onto the
/// scores and the features. Points are constants.
template <typename Scalar>
PrototypeGradients<Scalar> prototype_backward(const Matrix<Scalar>& points, const Matrix<Scalar>& features,
                                              const Matrix<Scalar>& scores, const Prototypes<Scalar>& protos,
                                              const Matrix<Scalar>& d_geometric, const Matrix<Scalar>& d_feature) {
  const Index n = scores.rows();
  const Index clusters = scores.cols();
  require_shape(d_geometric.rows() == clusters && d_geometric.cols() == points.cols(),
                "prototype_backward: dC^E shape");
  require_shape(d_feature.rows() == clusters && d_feature.cols() == features.cols(),
                "prototype_backward: dC^F shape");
  PrototypeGradients<Scalar> g;
  g.d_scores = Matrix<Scalar>::Zero(n, clusters);
  g.d_features = Matrix<Scalar>::Zero(n, features.cols());
  const RowVector<Scalar> mass = scores.colwise().sum();
  for (Index j = 0; j < clusters; ++j) {
    if (protos.fallback[static_cast<std::size_t>(j)]) {
      // Unweighted mean: no dependence on S.
      g.d_features.rowwise() += d_feature.row(j) / Scalar(n);
      continue;
    }
    // c_j = sum_i s_ij x_i / m_j  =>  dc_j/ds_ij = (x_i - c_j) / m_j
    const Scalar inv = Scalar(1) / mass[j];
    g.d_scores.col(j) =
        ((points.rowwise() - protos.geometric.row(j)) * d_geometric.row(j).transpose() +
         (features.rowwise() - protos.feature.row(j)) * d_feature.row(j).transpose()) *
        inv;
    g.d_features += (scores.col(j) * inv) * d_feature.row(j);
  }
  return g;
}

template <typename Scalar, typename DX>
Matrix<Scalar> squared_distances(const Eigen::MatrixBase<DX>& x, const Matrix<Scalar>& centers) {
  const Matrix<Scalar> xs = x.template cast<Scalar>();
  Matrix<Scalar> d(xs.rows(), centers.rows());
  for (Index j = 0; j < centers.rows(); ++j) d.col(j) = (xs.rowwise() - centers.row(j)).rowwise().squaredNorm();
  return d;
}

template <typename Scalar, typename DP, typename DF>
CostMatrix<Scalar> compute_cost(const Eigen::MatrixBase<DP>& points, const Eigen::MatrixBase<DF>& features,
                                const Prototypes<Scalar>& protos, Scalar lambda) {
  if (!(lambda >= Scalar(0) && lambda <= Scalar(1))) throw ConfigError("compute_cost: lambda must lie in [0, 1]");
  require_shape(points.rows() == features.rows(), "compute_cost: row counts differ");
  require_shape(protos.geometric.cols() == points.cols() && protos.feature.cols() == features.cols(),
                "compute_cost: prototype dimensions differ from inputs");
  CostMatrix<Scalar> c;
  c.lambda = lambda;
  c.geometric = squared_distances<Scalar>(points, protos.geometric);
  c.feature = squared_distances<Scalar>(features, protos.feature);
  c.cost = lambda * c.geometric + (Scalar(1) - lambda) * c.feature;
  return c;
}

/// max(|row sum - 1/N|, |col sum - 1/J|) over all rows and columns.
template <typename Scalar>
Scalar marginal_residual(const Matrix<Scalar>& plan) {
  const Scalar n = static_cast<Scalar>(plan.rows());
  const Scalar j = static_cast<Scalar>(plan.cols());
  const Scalar rows = (plan.rowwise().sum().array() - Scalar(1) / n).abs().maxCoeff();
  const Scalar cols = (plan.colwise().sum().array() - Scalar(1) / j).abs().maxCoeff();
  return std::max(rows, cols);
}

namespace detail {

// exp(-D/eps) normalized to unit mass. D is first shifted by its row minima
// and then by the column minima of the result, so every row and every column
// of the kernel holds an exact 1 before normalization. Constant row and
// column shifts are absorbed by the diagonal scalings and leave the fixed
// point unchanged.
template <typename Scalar>
Matrix<Scalar> gibbs_kernel(const Matrix<Scalar>& cost, Scalar epsilon) {
  if (!(epsilon > Scalar(0))) throw ConfigError("sinkhorn: epsilon must be positive");
  require_shape(cost.rows() >= 1 && cost.cols() >= 1, "sinkhorn: empty cost matrix");
  if (!cost.allFinite()) throw NumericalError("sinkhorn: non-finite cost entry");
  Matrix<Scalar> shifted = cost - cost.rowwise().minCoeff().replicate(1, cost.cols());
  shifted -= shifted.colwise().minCoeff().replicate(cost.rows(), 1);
  Matrix<Scalar> k = (-shifted / epsilon).array().exp().matrix();
  k /= k.sum();
  return k;
}

template <typename Scalar>
void scale_rows(Matrix<Scalar>& plan, Scalar target) {
  const Vector<Scalar> sums = plan.rowwise().sum();
  for (Index i = 0; i < plan.rows(); ++i) {
    const Scalar f = target / sums[i];
    if (!(sums[i] > Scalar(0)) || !std::isfinite(static_cast<double>(f)))
      throw NumericalError("sinkhorn: row " + std::to_string(i) +
                           " mass underflowed; epsilon is too small for the cost scale");
    plan.row(i) *= f;
  }
}

template <typename Scalar>
void scale_cols(Matrix<Scalar>& plan, Scalar target) {
  const RowVector<Scalar> sums = plan.colwise().sum();
  for (Index j = 0; j < plan.cols(); ++j) {
    const Scalar f = target / sums[j];
    if (!(sums[j] > Scalar(0)) || !std::isfinite(static_cast<double>(f)))
      throw NumericalError("sinkhorn: column " + std::to_string(j) +
                           " mass underflowed; epsilon is too small for the cost scale");
    plan.col(j) *= f;
  }
}

}  // namespace detail

/// Entropic OT between uniform marginals (1/N over points, 1/J over
/// clusters) by `iters` rounds of row then column scaling.
template <typename Scalar>
TransportPlan<Scalar> sinkhorn(const Matrix<Scalar>& cost, Scalar epsilon, int iters) {
  if (iters < 1) throw ConfigError("sinkhorn: iters must be >= 1");
  TransportPlan<Scalar> out;
  out.plan = detail::gibbs_kernel(cost, epsilon);
  const Scalar row_target = Scalar(1) / static_cast<Scalar>(cost.rows());
  const Scalar col_target = Scalar(1) / static_cast<Scalar>(cost.cols());
  for (int it = 0; it < iters; ++it) {
    detail::scale_rows(out.plan, row_target);
    detail::scale_cols(out.plan, col_target);
  }
  out.iterations = iters;
  return out;
}

template <typename Scalar>
TransportPlan<Scalar> sinkhorn(const CostMatrix<Scalar>& cost, Scalar epsilon, int iters) {
  return sinkhorn(cost.cost, epsilon, iters);
}

/// Same iteration, run until the marginal residual drops below `tol` or
/// `max_iters` rounds have been spent (check `iterations` and the residual).
template <typename Scalar>
TransportPlan<Scalar> sinkhorn_until(const Matrix<Scalar>& cost, Scalar epsilon, Scalar tol, int max_iters) {
  TransportPlan<Scalar> out;
  out.plan = detail::gibbs_kernel(cost, epsilon);
  const Scalar row_target = Scalar(1) / static_cast<Scalar>(cost.rows());
  const Scalar col_target = Scalar(1) / static_cast<Scalar>(cost.cols());
  int it = 0;
  while (it < max_iters) {
    detail::scale_rows(out.plan, row_target);
    detail::scale_cols(out.plan, col_target);
    ++it;
    if (marginal_residual(out.plan) < tol) break;
  }
  out.iterations = it;
  return out;
}

template <typename Scalar>
SoftLabels<Scalar> assign_soft_labels(const TransportPlan<Scalar>& plan, Index n) {
  require_shape(plan.plan.rows() == n, "assign_soft_labels: N must equal the plan's row count");
  return {plan.plan * static_cast<Scalar>(n)};
}

/// Plain distance-based assignment: row softmax of -D / temperature. No
/// marginal constraint on the clusters.
template <typename Scalar>
SoftLabels<Scalar> assign_l2_labels(const Matrix<Scalar>& cost, Scalar temperature) {
  if (!(temperature > Scalar(0))) throw ConfigError("assign_l2_labels: temperature must be positive");
  Matrix<Scalar> g = -cost / temperature;
  for (Index i = 0; i < g.rows(); ++i) {
    const Scalar m = g.row(i).maxCoeff();
    g.row(i) = (g.row(i).array() - m).exp().matrix();
    g.row(i) /= g.row(i).sum();
  }
  return {g};
}

/// Frobenius inner product <plan, cost>.
template <typename Scalar>
Scalar transport_cost(const Matrix<Scalar>& plan, const Matrix<Scalar>& cost) {
  return plan.cwiseProduct(cost).sum();
}

}  // namespace softclu
