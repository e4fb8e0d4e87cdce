#pragma once

// EM pretraining loop. E-step: forward, prototypes, cost, Sinkhorn soft
// labels (cost treated as a constant). M-step: batch-mean L_tot,
// backpropagation through prototypes and encoder, one AdamW update.

#include "softclu/config.hpp"
#include "softclu/encoder.hpp"
#include "softclu/losses.hpp"
#include "softclu/ot.hpp"
#include "softclu/pointcloud.hpp"

#include <functional>
#include <span>
#include <vector>

namespace softclu {

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double l_soft = 0;
  double l_orth = 0;
  double l_total = 0;
  double lr = 0;
  double max_marginal_residual = 0;
  double lambda = 0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainState {
  EncoderParams<double> params;
  EncoderParams<double> first_moment;
  EncoderParams<double> second_moment;
  long step = 0;
  int epoch = 0;
  std::vector<EpochMetrics> history;
};

struct EStep {
  ForwardTrace<double> trace;
  Prototypes<double> protos;
  CostMatrix<double> cost;
  TransportPlan<double> plan;
  SoftLabels<double> labels;
  double marginal_residual = 0;
};

double sigmoid(double x);
double logit(double p);

/// Mixing weight used by the E-step: the configured lambda, or
/// sigmoid(lambda_raw) when lambda is learned.
double effective_lambda(const EncoderParams<double>& params, const SolverConfig& solver);

EStep e_step(const EncoderParams<double>& params, const PointCloud& cloud, const SolverConfig& solver);

/// E-step that iterates Sinkhorn until the marginal residual is below
/// solver.tol or `max_iters` rounds have run. Used at inference.
EStep e_step_until(const EncoderParams<double>& params, const PointCloud& cloud, const SolverConfig& solver,
                   int max_iters);

struct CloudGradient {
  LossReport<double> loss;
  EncoderParams<double> grads;
};

/// L_tot for one cloud and its exact gradient with gamma and D held fixed.
CloudGradient cloud_gradient(const EncoderParams<double>& params, const EStep& e, const TrainConfig& config);

TrainState init_state(const TrainConfig& config);

double lr_at_epoch(const TrainConfig& config, int epoch);

/// One AdamW update from the mean gradient over `batch`. Returns the
/// batch-mean losses. Throws NumericalError on a non-finite loss.
LossReport<double> m_step(TrainState& state, std::span<const EStep> batch, const TrainConfig& config, double lr,
                          int threads = 1, long batch_id = 0);

/// Applies one AdamW step with the given gradient.
void adamw_update(TrainState& state, EncoderParams<double>& grads, const TrainConfig& config, double lr);

struct PretrainOptions {
  int threads = 1;
  std::function<void(const TrainState&)> on_epoch;  // after each epoch's history entry
};

/// Runs config.epochs epochs over `clouds`, which must already be normalized
/// and downsampled. Clouds are shuffled per epoch under config.seed.
TrainState pretrain(const std::vector<PointCloud>& clouds, const TrainConfig& config,
                    const PretrainOptions& options = {});

/// Runs pretraining from an existing state (used by resume and tests).
void pretrain_epochs(TrainState& state, const std::vector<PointCloud>& clouds, const TrainConfig& config,
                     const PretrainOptions& options);

/// Runs fn(0..count-1) on up to `threads` workers; fn must write only to its
/// own slot.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace softclu
