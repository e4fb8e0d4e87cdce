#pragma once

// Desk-scale point encoder: a shared per-point MLP (ReLU on hidden layers,
// linear feature layer), optional max-pooled global context, and a linear
// segmentation head followed by a row softmax. Forward keeps every
// intermediate needed for an exact backward pass.

#include "softclu/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace softclu {

struct EncoderConfig {
  std::vector<int> hidden{64, 128};
  int feature_dim = 128;
  bool global_context = true;
  int clusters = 64;

  static constexpr int kInputDim = 3;

  int head_input_dim() const { return global_context ? 2 * feature_dim : feature_dim; }

  /// Layer widths including the 3-d input and the feature layer.
  std::vector<int> widths() const {
    std::vector<int> w{kInputDim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(feature_dim);
    return w;
  }

  void validate() const {
    for (int h : hidden)
      if (h <= 0) throw ConfigError("encoder hidden widths must be positive");
    if (feature_dim <= 0) throw ConfigError("encoder feature_dim must be positive");
    if (clusters < 2) throw ConfigError("number of clusters J must be >= 2");
  }

  bool operator==(const EncoderConfig&) const = default;
};

template <typename Scalar>
struct Dense {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
};

template <typename Scalar>
struct EncoderParams {
  EncoderConfig config;
  std::vector<Dense<Scalar>> mlp;
  Dense<Scalar> head;
  // Unconstrained parameter behind the cost mixing weight, lambda = sigmoid(lambda_raw).
  Scalar lambda_raw = Scalar(0);

  /// Flat, named view of every trainable tensor in a fixed order. The views
  /// alias this object; they are invalidated by anything that reallocates.
  std::vector<TensorView<Scalar>> tensors() {
    std::vector<TensorView<Scalar>> out;
    auto add = [&out](std::string name, auto& t, std::vector<Index> shape) {
      out.push_back({std::move(name), std::span<Scalar>(t.data(), static_cast<std::size_t>(t.size())),
                     std::move(shape)});
    };
    for (std::size_t l = 0; l < mlp.size(); ++l) {
      const auto prefix = "mlp." + std::to_string(l);
      add(prefix + ".weight", mlp[l].weight, {mlp[l].weight.rows(), mlp[l].weight.cols()});
      add(prefix + ".bias", mlp[l].bias, {mlp[l].bias.size()});
    }
    add("head.weight", head.weight, {head.weight.rows(), head.weight.cols()});
    add("head.bias", head.bias, {head.bias.size()});
    out.push_back({"lambda_raw", std::span<Scalar>(&lambda_raw, 1), {1}});
    return out;
  }

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    for (auto& t : z.tensors())
      for (auto& v : t.values) v = Scalar(0);
    return z;
  }

  template <typename Other>
  EncoderParams<Other> cast() const {
    EncoderParams<Other> out;
    out.config = config;
    for (const auto& d : mlp) out.mlp.push_back({d.weight.template cast<Other>(), d.bias.template cast<Other>()});
    out.head = {head.weight.template cast<Other>(), head.bias.template cast<Other>()};
    out.lambda_raw = static_cast<Other>(lambda_raw);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 1;
    for (const auto& d : mlp) n += static_cast<std::size_t>(d.weight.size() + d.bias.size());
    return n + static_cast<std::size_t>(head.weight.size() + head.bias.size());
  }
};

template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> input;                    // N x 3
  std::vector<Matrix<Scalar>> pre;         // per MLP layer, N x out
  std::vector<Matrix<Scalar>> act;         // act[l] feeds layer l; act[0] == input
  Matrix<Scalar> features;                 // N x d
  RowVector<Scalar> global;                // 1 x d, empty without context
  std::vector<Index> global_argmax;        // row chosen per feature channel
  Matrix<Scalar> head_input;               // N x (d or 2d)
  Matrix<Scalar> logits;                   // N x J
  Matrix<Scalar> scores;                   // N x J, row-stochastic

  Index points() const { return input.rows(); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
template <typename Scalar = double>
EncoderParams<Scalar> init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto dense = [&rng](int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Dense<Scalar> d;
    d.weight.resize(out, in);
    // Fill row-major so the draw order does not depend on storage order.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) d.weight(r, c) = static_cast<Scalar>(dist(rng));
    d.bias = Vector<Scalar>::Zero(out);
    return d;
  };
  EncoderParams<Scalar> p;
  p.config = config;
  const auto w = config.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) p.mlp.push_back(dense(w[l], w[l + 1]));
  p.head = dense(config.head_input_dim(), config.clusters);
  return p;
}

template <typename Scalar>
Matrix<Scalar> row_softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out = logits;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Scalar, typename Derived>
ForwardTrace<Scalar> forward(const EncoderParams<Scalar>& params, const Eigen::MatrixBase<Derived>& points) {
  require_shape(points.cols() == EncoderConfig::kInputDim, "forward: points must be N x 3");
  require_shape(points.rows() >= 1, "forward: empty cloud");
  ForwardTrace<Scalar> t;
  t.input = points.template cast<Scalar>();
  t.act.push_back(t.input);
  const std::size_t layers = params.mlp.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& d = params.mlp[l];
    Matrix<Scalar> z = t.act.back() * d.weight.transpose();
    z.rowwise() += d.bias.transpose();
    t.pre.push_back(z);
    if (l + 1 < layers) t.act.push_back(z.cwiseMax(Scalar(0)));
  }
  t.features = t.pre.back();

  const Index n = t.features.rows();
  const Index dim = t.features.cols();
  if (params.config.global_context) {
    t.global.resize(dim);
    t.global_argmax.assign(static_cast<std::size_t>(dim), 0);
    for (Index k = 0; k < dim; ++k) {
      Index best = 0;
      for (Index i = 1; i < n; ++i)
        if (t.features(i, k) > t.features(best, k)) best = i;  // ties keep the lowest index
      t.global_argmax[static_cast<std::size_t>(k)] = best;
      t.global[k] = t.features(best, k);
    }
    t.head_input.resize(n, 2 * dim);
    t.head_input.leftCols(dim) = t.features;
    t.head_input.rightCols(dim) = t.global.replicate(n, 1);
  } else {
    t.head_input = t.features;
  }

  t.logits = t.head_input * params.head.weight.transpose();
  t.logits.rowwise() += params.head.bias.transpose();
  t.scores = row_softmax(t.logits);
  return t;
}

/// Exact parameter gradients for upstream gradients with respect to the
/// scores S and the features F. Max-pool routes to the recorded argmax row.
template <typename Scalar>
EncoderParams<Scalar> backward(const ForwardTrace<Scalar>& trace, const EncoderParams<Scalar>& params,
                               const Matrix<Scalar>& d_scores, const Matrix<Scalar>& d_features) {
  const Index n = trace.points();
  const Index dim = trace.features.cols();
  require_shape(d_scores.rows() == n && d_scores.cols() == trace.scores.cols(),
                "backward: dL/dS must match the score matrix shape");
  require_shape(d_features.rows() == n && d_features.cols() == dim,
                "backward: dL/dF must match the feature matrix shape");

  EncoderParams<Scalar> grads = params.zeros_like();

  // Softmax Jacobian, row by row: dz = s * (g - <g, s>).
  const Vector<Scalar> inner = (d_scores.cwiseProduct(trace.scores)).rowwise().sum();
  Matrix<Scalar> d_logits = trace.scores.cwiseProduct(d_scores - inner.replicate(1, d_scores.cols()));

  grads.head.weight.noalias() = d_logits.transpose() * trace.head_input;
  grads.head.bias = d_logits.colwise().sum().transpose();
  const Matrix<Scalar> d_head_input = d_logits * params.head.weight;

  Matrix<Scalar> dz = d_features + d_head_input.leftCols(dim);
  if (params.config.global_context) {
    const RowVector<Scalar> d_global = d_head_input.rightCols(dim).colwise().sum();
    for (Index k = 0; k < dim; ++k) dz(trace.global_argmax[static_cast<std::size_t>(k)], k) += d_global[k];
  }

  for (std::size_t l = params.mlp.size(); l-- > 0;) {
    const Matrix<Scalar>& a_in = trace.act[l];
    grads.mlp[l].weight.noalias() = dz.transpose() * a_in;
    grads.mlp[l].bias = dz.colwise().sum().transpose();
    if (l == 0) break;
    Matrix<Scalar> d_act = dz * params.mlp[l].weight;
    dz = d_act.cwiseProduct((trace.pre[l - 1].array() > Scalar(0)).matrix().template cast<Scalar>());
  }
  return grads;
}

}  // namespace softclu
