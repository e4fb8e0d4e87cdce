#include "softclu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "softclu/objective.hpp"

namespace softclu {

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"l_soft", m.l_soft},
          {"l_orth", m.l_orth},
          {"l_total", m.l_total},
          {"lr", m.lr},
          {"max_marginal_residual", m.max_marginal_residual},
          {"lambda", m.lambda}};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

double effective_lambda(const EncoderParams<double>& params, const SolverConfig& solver) {
  return solver.learn_lambda ? sigmoid(params.lambda_raw) : solver.lambda;
}

namespace {

// Shared E-step body; `solve` maps the detached cost to a plan.
template <typename Solve>
EStep run_e_step(const EncoderParams<double>& params, const PointCloud& cloud, const SolverConfig& solver,
                 Solve&& solve) {
  solver.validate();
  if (params.config.clusters != solver.clusters)
    throw ConfigError("e_step: head width " + std::to_string(params.config.clusters) + " differs from J " +
                      std::to_string(solver.clusters));
  EStep e;
  e.trace = forward(params, cloud.points);
  e.protos = compute_prototypes<double>(e.trace.input, e.trace.features, e.trace.scores);
  e.cost = compute_cost<double>(e.trace.input, e.trace.features, e.protos, effective_lambda(params, solver));
  // Sinkhorn sees a detached copy of D; nothing flows back through it.
  const MatrixXd detached = e.cost.cost;
  e.plan = solve(detached);
  e.labels = assign_soft_labels(e.plan, cloud.size());
  e.marginal_residual = marginal_residual(e.plan.plan);
  return e;
}

}  // namespace

EStep e_step(const EncoderParams<double>& params, const PointCloud& cloud, const SolverConfig& solver) {
  return run_e_step(params, cloud, solver,
                    [&](const MatrixXd& d) { return sinkhorn<double>(d, solver.epsilon, solver.iters); });
}

EStep e_step_until(const EncoderParams<double>& params, const PointCloud& cloud, const SolverConfig& solver,
                   int max_iters) {
  if (max_iters < 1) throw ConfigError("e_step_until: max_iters must be >= 1");
  return run_e_step(params, cloud, solver, [&](const MatrixXd& d) {
    return sinkhorn_until<double>(d, solver.epsilon, solver.tol, max_iters);
  });
}

CloudGradient cloud_gradient(const EncoderParams<double>& params, const EStep& e, const TrainConfig& config) {
  auto obj = objective_gradient<double>(params, e.trace, e.protos, e.labels.gamma, config.eta);
  CloudGradient g{obj.report, std::move(obj.grads)};
  if (config.solver.learn_lambda) {
    // lambda only enters the E-step objective <Gamma, D>; its gradient comes
    // from there, not from L_tot.
    const double lam = sigmoid(params.lambda_raw);
    g.grads.lambda_raw = transport_cost<double>(e.plan.plan, e.cost.geometric - e.cost.feature) * lam * (1.0 - lam);
  }
  return g;
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.params = init_params<double>(config.encoder, config.seed);
  s.params.lambda_raw = logit(config.solver.lambda);
  s.first_moment = s.params.zeros_like();
  s.second_moment = s.params.zeros_like();
  return s;
}

double lr_at_epoch(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

void adamw_update(TrainState& state, EncoderParams<double>& grads, const TrainConfig& config, double lr) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto params = state.params.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  auto g = grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    const bool is_lambda = params[t].name == "lambda_raw";
    if (is_lambda && !config.solver.learn_lambda) continue;
    const double decay = is_lambda ? 0.0 : config.weight_decay;
    for (std::size_t k = 0; k < params[t].values.size(); ++k) {
      double& theta = params[t].values[k];
      const double grad = g[t].values[k];
      theta -= lr * decay * theta;  // decoupled weight decay
      m[t].values[k] = config.beta1 * m[t].values[k] + (1.0 - config.beta1) * grad;
      v[t].values[k] = config.beta2 * v[t].values[k] + (1.0 - config.beta2) * grad * grad;
      const double m_hat = m[t].values[k] / bc1;
      const double v_hat = v[t].values[k] / bc2;
      theta -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

LossReport<double> m_step(TrainState& state, std::span<const EStep> batch, const TrainConfig& config, double lr,
                          int threads, long batch_id) {
  if (batch.empty()) throw ConfigError("m_step: empty batch");
  std::vector<CloudGradient> per_cloud(batch.size());
  parallel_for(batch.size(), threads,
               [&](std::size_t i) { per_cloud[i] = cloud_gradient(state.params, batch[i], config); });

  // Fixed-order reduction keeps the update independent of the thread count.
  LossReport<double> mean;
  mean.eta = config.eta;
  EncoderParams<double> total = state.params.zeros_like();
  auto acc = total.tensors();
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& c : per_cloud) {
    if (!std::isfinite(c.loss.l_total))
      throw NumericalError("non-finite loss in batch " + std::to_string(batch_id));
    mean.l_soft += c.loss.l_soft * inv;
    mean.l_orth += c.loss.l_orth * inv;
    mean.l_total += c.loss.l_total * inv;
    auto g = c.grads.tensors();
    for (std::size_t t = 0; t < acc.size(); ++t)
      for (std::size_t k = 0; k < acc[t].values.size(); ++k) acc[t].values[k] += g[t].values[k] * inv;
  }
  adamw_update(state, total, config, lr);
  return mean;
}

void pretrain_epochs(TrainState& state, const std::vector<PointCloud>& clouds, const TrainConfig& config,
                     const PretrainOptions& options) {
  config.validate();
  if (clouds.empty()) throw ConfigError("pretrain: dataset is empty");
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  // Replay the shuffles of completed epochs so a resumed run matches a fresh one.
  std::vector<std::size_t> order(clouds.size());
  for (int e = 0; e < state.epoch; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }
  long batch_id = 0;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  while (state.epoch < config.epochs) {
    const double lr = lr_at_epoch(config, state.epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    EpochMetrics metrics;
    metrics.epoch = state.epoch + 1;
    metrics.lr = lr;
    metrics.lambda = effective_lambda(state.params, config.solver);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      std::vector<EStep> batch(count);
      parallel_for(count, options.threads, [&](std::size_t i) {
        batch[i] = e_step(state.params, clouds[order[start + i]], config.solver);
      });
      for (const auto& e : batch)
        metrics.max_marginal_residual = std::max(metrics.max_marginal_residual, e.marginal_residual);
      const auto loss = m_step(state, batch, config, lr, options.threads, batch_id++);
      const double w = static_cast<double>(count) / static_cast<double>(order.size());
      metrics.l_soft += loss.l_soft * w;
      metrics.l_orth += loss.l_orth * w;
      metrics.l_total += loss.l_total * w;
    }
    ++state.epoch;
    state.history.push_back(metrics);
    if (options.on_epoch) options.on_epoch(state);
  }
}

TrainState pretrain(const std::vector<PointCloud>& clouds, const TrainConfig& config,
                    const PretrainOptions& options) {
  if (clouds.empty()) throw ConfigError("pretrain: dataset is empty");
  TrainState state = init_state(config);
  pretrain_epochs(state, clouds, config, options);
  return state;
}

}  // namespace softclu
