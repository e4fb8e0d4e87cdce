#pragma once

// Per-cloud training objective L_tot = L_soft + eta * L_orth as a function of
// the encoder parameters, with the soft labels held fixed. The gradient runs
// through the prototypes (which depend on S and F) and the encoder.

#include "softclu/encoder.hpp"
#include "softclu/losses.hpp"
#include "softclu/ot.hpp"

namespace softclu {

template <typename Scalar>
struct ObjectiveGradient {
  LossReport<Scalar> report;
  EncoderParams<Scalar> grads;
};

template <typename Scalar>
ObjectiveGradient<Scalar> objective_gradient(const EncoderParams<Scalar>& params, const ForwardTrace<Scalar>& trace,
                                             const Prototypes<Scalar>& protos, const Matrix<Scalar>& gamma,
                                             Scalar eta) {
  auto loss = total_loss<Scalar>(gamma, trace.scores, protos, eta);
  auto pg = prototype_backward<Scalar>(trace.input, trace.features, trace.scores, protos, loss.d_geometric,
                                       loss.d_feature);
  const Matrix<Scalar> d_scores = loss.d_scores + pg.d_scores;
  return {loss.report, backward(trace, params, d_scores, pg.d_features)};
}

template <typename Scalar>
ObjectiveGradient<Scalar> objective_gradient(const EncoderParams<Scalar>& params, const ForwardTrace<Scalar>& trace,
                                             const Matrix<Scalar>& gamma, Scalar eta) {
  const auto protos = compute_prototypes<Scalar>(trace.input, trace.features, trace.scores);
  return objective_gradient(params, trace, protos, gamma, eta);
}

template <typename Scalar, typename Derived>
LossReport<Scalar> objective_value(const EncoderParams<Scalar>& params, const Eigen::MatrixBase<Derived>& points,
                                   const Matrix<Scalar>& gamma, Scalar eta) {
  const auto trace = forward(params, points);
  const auto protos = compute_prototypes<Scalar>(trace.input, trace.features, trace.scores);
  return total_loss<Scalar>(gamma, trace.scores, protos, eta).report;
}

}  // namespace softclu
