#pragma once

#include "softclu/core.hpp"
#include "softclu/ot.hpp"

#include <cmath>

namespace softclu {

template <typename Scalar>
struct LossReport {
  Scalar l_soft = Scalar(0);
  Scalar l_orth = Scalar(0);
  Scalar l_total = Scalar(0);
  Scalar eta = Scalar(0);
};

template <typename Scalar>
struct SoftCeResult {
  Scalar value = Scalar(0);
  Matrix<Scalar> d_scores;
};

/// -(1/N) sum_ij gamma_ij log s_ij, with gamma held constant.
template <typename Scalar>
SoftCeResult<Scalar> soft_ce_loss(const Matrix<Scalar>& gamma, const Matrix<Scalar>& scores) {
  require_shape(gamma.rows() == scores.rows() && gamma.cols() == scores.cols(),
                "soft_ce_loss: gamma and S shapes differ");
  if (!(scores.array() > Scalar(0)).all())
    throw NumericalError("soft_ce_loss: score matrix has a non-positive entry");
  const Scalar n = static_cast<Scalar>(scores.rows());
  SoftCeResult<Scalar> r;
  r.value = -(gamma.array() * scores.array().log()).sum() / n;
  r.d_scores = -(gamma.array() / scores.array()).matrix() / n;
  return r;
}

inline constexpr double kZeroPrototypeNorm = 1e-12;

template <typename Scalar>
struct OrthTerm {
  Scalar value = Scalar(0);
  Matrix<Scalar> d_protos;
};

/// ||U U^T - I||_F for U = prototypes with unit-normalized rows, and its
/// gradient through the normalization. Rows below kZeroPrototypeNorm are
/// used unnormalized and receive no gradient.
template <typename Scalar>
OrthTerm<Scalar> orth_term(const Matrix<Scalar>& protos) {
  const Index clusters = protos.rows();
  Matrix<Scalar> unit = protos;
  Vector<Scalar> norms = protos.rowwise().norm();
  std::vector<bool> guarded(static_cast<std::size_t>(clusters), false);
  for (Index k = 0; k < clusters; ++k) {
    if (norms[k] < Scalar(kZeroPrototypeNorm))
      guarded[static_cast<std::size_t>(k)] = true;
    else
      unit.row(k) /= norms[k];
  }
  const Matrix<Scalar> excess = unit * unit.transpose() - Matrix<Scalar>::Identity(clusters, clusters);
  OrthTerm<Scalar> r;
  r.value = excess.norm();
  r.d_protos = Matrix<Scalar>::Zero(protos.rows(), protos.cols());
  if (r.value == Scalar(0)) return r;  // subgradient 0 at the kink

  const Matrix<Scalar> d_unit = (Scalar(2) / r.value) * excess * unit;
  for (Index k = 0; k < clusters; ++k) {
    if (guarded[static_cast<std::size_t>(k)]) continue;
    const RowVector<Scalar> u = unit.row(k);
    const RowVector<Scalar> g = d_unit.row(k);
    r.d_protos.row(k) = (g - g.dot(u) * u) / norms[k];
  }
  return r;
}

template <typename Scalar>
struct OrthResult {
  Scalar value = Scalar(0);
  Matrix<Scalar> d_geometric;
  Matrix<Scalar> d_feature;
};

template <typename Scalar>
OrthResult<Scalar> orth_loss(const Prototypes<Scalar>& protos) {
  auto e = orth_term(protos.geometric);
  auto f = orth_term(protos.feature);
  return {e.value + f.value, std::move(e.d_protos), std::move(f.d_protos)};
}

template <typename Scalar>
struct TotalLoss {
  LossReport<Scalar> report;
  Matrix<Scalar> d_scores;     // direct path through the cross-entropy
  Matrix<Scalar> d_geometric;  // eta * dL_orth/dC^E
  Matrix<Scalar> d_feature;    // eta * dL_orth/dC^F
};

/// L_soft + eta * L_orth. Prototype gradients are returned separately so the
/// caller can chain them through the weighted averages.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const Matrix<Scalar>& gamma, const Matrix<Scalar>& scores,
                             const Prototypes<Scalar>& protos, Scalar eta) {
  if (!(eta >= Scalar(0))) throw ConfigError("total_loss: eta must be non-negative");
  auto ce = soft_ce_loss(gamma, scores);
  auto orth = orth_loss(protos);
  TotalLoss<Scalar> t;
  t.report.l_soft = ce.value;
  t.report.l_orth = orth.value;
  t.report.eta = eta;
  t.report.l_total = ce.value + eta * orth.value;
  t.d_scores = std::move(ce.d_scores);
  t.d_geometric = eta * orth.d_geometric;
  t.d_feature = eta * orth.d_feature;
  return t;
}

}  // namespace softclu
