// Acceptance suite. One line per criterion:  [PASS|FAIL] <id> <name>: <detail>
// Exit status is 0 only if every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "softclu/checkpoint.hpp"
#include "softclu/objective.hpp"
#include "softclu/oracle.hpp"
#include "softclu/synthetic.hpp"
#include "softclu/trainer.hpp"

using namespace softclu;
namespace fs = std::filesystem;

namespace {

struct Result {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Cost matrix handed to Sinkhorn by the E-step for a freshly initialized
// default encoder on a normalized random sphere cloud.
MatrixXd e_step_cost(Index n, int clusters, std::uint64_t seed) {
  EncoderConfig ec;
  ec.clusters = clusters;
  const auto params = init_params<double>(ec, seed);
  const auto cloud = normalize(make_sphere_cloud(n, seed + 50000));
  const auto trace = forward(params, cloud.points);
  const auto protos = compute_prototypes<double>(trace.input, trace.features, trace.scores);
  return compute_cost<double>(trace.input, trace.features, protos, 0.5).cost;
}

// 1. Sinkhorn feasibility.
Result criterion_feasibility() {
  const auto t0 = std::chrono::steady_clock::now();
  const Index sizes[] = {8, 64, 512};
  const int clusters[] = {2, 8, 64};
  double worst_conv = 0, worst_fixed = 0;
  int fixed_over = 0, max_rounds = 0;
  std::string worst_fixed_at;
  for (int k = 0; k < 100; ++k) {
    const Index n = sizes[k % 3];
    const int j = clusters[(k / 3) % 3];
    const MatrixXd d = e_step_cost(n, j, 10000 + static_cast<std::uint64_t>(k));
    const auto conv = sinkhorn_until<double>(d, 1e-3, 1e-7, 1000000);
    worst_conv = std::max(worst_conv, marginal_residual(conv.plan));
    max_rounds = std::max(max_rounds, conv.iterations);
    const double fixed = marginal_residual(sinkhorn<double>(d, 1e-3, 20).plan);
    if (fixed >= 1e-3) ++fixed_over;
    if (fixed > worst_fixed) {
      worst_fixed = fixed;
      worst_fixed_at = std::to_string(n) + "x" + std::to_string(j);
    }
  }
  const double secs = seconds_since(t0);
  return {worst_conv < 1e-6 && worst_fixed < 1e-3 && secs < 10.0,
          "100 E-step costs, eps=1e-3; converged max residual " + fmt(worst_conv) + " (< 1e-6, <= " +
              std::to_string(max_rounds) + " rounds); 20 rounds max residual " + fmt(worst_fixed) + " at " +
              worst_fixed_at + ", " + std::to_string(fixed_over) + "/100 at or above 1e-3 (< 1e-3); " + fmt(secs) +
              " s (< 10 s)"};
}

// 2. LP-oracle equivalence.
Result criterion_lp() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> rows(2, 8), cols(2, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int bound_violations = 0, monotone_violations = 0;
  double worst_margin = -1e300;
  for (int k = 0; k < 50; ++k) {
    const Index n = rows(rng), j = cols(rng);
    MatrixXd d(n, j);
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < j; ++c) d(r, c) = unit(rng);
    const double lp = oracle::exact_ot(d).objective;
    double previous = std::numeric_limits<double>::infinity();
    for (double eps : {1e-1, 1e-2, 1e-3}) {
      const auto plan = sinkhorn_until<double>(d, eps, 1e-9, 1000000).plan;
      const double gap = transport_cost<double>(plan, d) - lp;
      if (gap > previous + 1e-6) ++monotone_violations;
      previous = gap;
      if (eps == 1e-3) {
        const double bound = eps * std::log(static_cast<double>(n * j)) + 1e-6;
        worst_margin = std::max(worst_margin, gap - bound);
        if (gap > bound) ++bound_violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bound_violations == 0 && monotone_violations == 0 && secs < 30.0,
          "50 uniform costs; gap <= eps log(NJ) + 1e-6 violations " + std::to_string(bound_violations) +
              " (worst gap - bound " + fmt(worst_margin) + "); gap increases across eps {1e-1,1e-2,1e-3} beyond 1e-6: " +
              std::to_string(monotone_violations) + "; " + fmt(secs) + " s (< 30 s)"};
}

// 3. Gradient exactness.
Result criterion_gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  EncoderConfig ec;
  ec.hidden = {16, 16};
  ec.feature_dim = 8;
  ec.clusters = 4;
  auto params = init_params<double>(ec, 0);
  const auto cloud = normalize(make_sphere_cloud(16, 0));
  SolverConfig solver;
  solver.clusters = 4;
  // gamma (and the cost behind it) are fixed targets.
  const MatrixXd gamma = e_step(params, cloud, solver).labels.gamma;
  const double eta = 0.01;
  auto g = objective_gradient<double>(params, forward(params, cloud.points), gamma, eta);
  auto pv = params.tensors();
  auto gv = g.grads.tensors();
  pv.pop_back();  // lambda_raw is not a parameter of L_tot
  gv.pop_back();
  const std::function<double()> loss = [&] { return objective_value<double>(params, cloud.points, gamma, eta).l_total; };
  const auto r = oracle::grad_check<double>(loss, pv, gv, 1e-5, 1e-4);
  const double secs = seconds_since(t0);
  return {r.passed && secs < 60.0, "N=16 J=4 d=8, " + std::to_string(r.checked) + " parameters, h=1e-5; max rel error " +
                                       fmt(r.max_rel_error) + " at " + r.worst_name + "[" +
                                       std::to_string(r.worst_index) + "] (< 1e-4); " + fmt(secs) + " s (< 60 s)"};
}

// 4. Equipartition.
Result criterion_equipartition() {
  const int clusters[] = {2, 8, 64};
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const Index n = 128 * (1 + k % 4);
    const int j = clusters[k % 3];
    EncoderConfig ec;
    ec.clusters = j;
    SolverConfig solver;
    solver.clusters = j;
    const auto e = e_step(init_params<double>(ec, 30000 + static_cast<std::uint64_t>(k)),
                          normalize(make_sphere_cloud(n, 40000 + static_cast<std::uint64_t>(k))), solver);
    const double dev = (e.labels.gamma.colwise().sum().array() - static_cast<double>(n) / j).abs().maxCoeff();
    worst = std::max(worst, dev / static_cast<double>(n));
  }
  return {worst < 1e-5, "20 clouds, default solver (eps=1e-3, 20 rounds); max |colsum - N/J| / N = " + fmt(worst) +
                            " (< 1e-5)"};
}

// 5. Clustering sanity at lambda = 1.
Result criterion_blobs() {
  const auto t0 = std::chrono::steady_clock::now();
  const double radius = 0.05, separation = 0.5;  // 10x
  int trials = 0, failures = 0, failures20 = 0;
  SolverConfig solver;
  solver.lambda = 1.0;
  for (int j : {2, 4}) {
    const int per_blob = 12 / j;
    for (int s = 0; s < 100; ++s) {
      const auto seed = static_cast<std::uint64_t>(1000 * j + s);
      const auto blobs = make_blob_cloud(j, per_blob, radius, separation, seed);
      const auto cloud = normalize(blobs.cloud);
      // Scores that lean weakly toward a relabeled blob: what a partly
      // trained head produces.
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> noise(0.0, 0.5);
      std::vector<int> relabel(static_cast<std::size_t>(j));
      std::iota(relabel.begin(), relabel.end(), 0);
      std::shuffle(relabel.begin(), relabel.end(), rng);
      MatrixXd logits(cloud.size(), j);
      for (Index i = 0; i < cloud.size(); ++i)
        for (int c = 0; c < j; ++c)
          logits(i, c) = noise(rng) + (relabel[static_cast<std::size_t>(blobs.membership[static_cast<std::size_t>(i)])] == c ? 1.0 : 0.0);
      const MatrixXd scores = row_softmax<double>(logits);
      const MatrixXd features = MatrixXd::Zero(cloud.size(), 4);
      const auto protos = compute_prototypes<double>(cloud.points, features, scores);
      const auto cost = compute_cost<double>(cloud.points, features, protos, 1.0);
      const auto hard = oracle::balanced_hard_assign(cost.cost);
      const auto converged = sinkhorn_until<double>(cost.cost, solver.epsilon, solver.tol, 1000000);
      const auto labels = label_cloud(cloud, assign_soft_labels(converged, cloud.size()).gamma).labels;
      ++trials;
      if (purity(labels, blobs.membership) < 1.0 || labels != hard) ++failures;
      // Reported only: truncated plans on 12 points are far from converged.
      const auto truncated = sinkhorn<double>(cost.cost, solver.epsilon, solver.iters);
      const auto labels20 = label_cloud(cloud, assign_soft_labels(truncated, cloud.size()).gamma).labels;
      if (purity(labels20, blobs.membership) < 1.0 || labels20 != hard) ++failures20;
    }
  }
  // The full E-step with an untrained encoder, J = 2.
  int encoder_trials = 0, encoder_failures = 0;
  for (int s = 0; s < 100; ++s) {
    const auto blobs = make_blob_cloud(2, 6, radius, separation, static_cast<std::uint64_t>(5000 + s));
    const auto cloud = normalize(blobs.cloud);
    EncoderConfig ec;
    ec.clusters = 2;
    SolverConfig sc = solver;
    sc.clusters = 2;
    const auto e = e_step_until(init_params<double>(ec, static_cast<std::uint64_t>(6000 + s)), cloud, sc, 1000000);
    const auto labels = label_cloud(cloud, e.labels.gamma).labels;
    ++encoder_trials;
    if (purity(labels, blobs.membership) < 1.0 || labels != oracle::balanced_hard_assign(e.cost.cost)) ++encoder_failures;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && encoder_failures == 0 && secs < 10.0,
          "J in {2,4}, separation 10x radius: " + std::to_string(trials - failures) + "/" + std::to_string(trials) +
              " clouds pure and equal to the balanced oracle (converged to tol " + fmt(solver.tol) + "; with " +
              std::to_string(solver.iters) + " fixed rounds " + std::to_string(trials - failures20) + "/" +
              std::to_string(trials) + ", not gated); untrained-encoder E-step (J=2) " +
              std::to_string(encoder_trials - encoder_failures) + "/" + std::to_string(encoder_trials) + "; " +
              fmt(secs) + " s (< 10 s)"};
}

// 6. Learning signal.
Result criterion_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<PointCloud> clouds;
  for (int k = 0; k < 64; ++k)
    clouds.push_back(normalize(make_blob_cloud(8, 32, 0.05, 0.5, 7000 + static_cast<std::uint64_t>(k)).cloud));
  TrainConfig config;
  config.epochs = 20;
  config.seed = 1;
  config.solver.clusters = 8;
  config.encoder.clusters = 8;
  const auto state = pretrain(clouds, config);
  const auto& first = state.history.front();
  const auto& last = state.history.back();
  const double reduction = 1.0 - last.l_total / first.l_total;
  const double secs = seconds_since(t0);
  return {reduction >= 0.30 && last.l_orth < first.l_orth && secs < 300.0,
          "64 clouds x 256 points, J=8, 20 epochs; l_total " + fmt(first.l_total) + " -> " + fmt(last.l_total) +
              " (reduction " + fmt(100 * reduction) + "%, >= 30%); l_orth " + fmt(first.l_orth) + " -> " +
              fmt(last.l_orth) + "; " + fmt(secs) + " s (< 300 s)"};
}

// 7. Ablation mechanics.
Result criterion_ablation() {
  // (a) every point prefers column 0.
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> jitter(0.0, 0.05);
  const Index n = 64, j = 4;
  MatrixXd d(n, j);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < j; ++c) d(i, c) = 0.1 * static_cast<double>(c) + jitter(rng);
  const double tol = static_cast<double>(n) * 1e-5;
  const double target = static_cast<double>(n) / j;
  const MatrixXd l2 = assign_l2_labels<double>(d, 1e-3).gamma;
  const MatrixXd ot = assign_soft_labels(sinkhorn<double>(d, 1e-3, 20), n).gamma;
  const double dev_l2 = (l2.colwise().sum().array() - target).abs().maxCoeff();
  const double dev_ot = (ot.colwise().sum().array() - target).abs().maxCoeff();
  const bool a_ok = dev_l2 > 10 * tol && dev_ot < tol;

  // (b) two mirrored halves carrying identical features.
  std::normal_distribution<double> g(0.0, 1.0);
  const Index half = 32;
  MatrixXd pts(2 * half, 3), feats(2 * half, 16);
  std::vector<int> side(static_cast<std::size_t>(2 * half));
  for (Index i = 0; i < half; ++i) {
    const Eigen::RowVector3d p(-0.5 + 0.1 * g(rng), 0.3 * g(rng), 0.3 * g(rng));
    pts.row(i) = p;
    pts.row(i + half) = Eigen::RowVector3d(-p(0), p(1), p(2));
    for (Index c = 0; c < feats.cols(); ++c) feats(i, c) = feats(i + half, c) = 0.1 * g(rng);
    side[static_cast<std::size_t>(i + half)] = 1;
  }
  // Scores of a random untrained encoder on these points.
  EncoderConfig ec;
  ec.clusters = 2;
  const MatrixXd scores = forward(init_params<double>(ec, 78), pts).scores;
  auto purity_at = [&](double lambda) {
    const auto protos = compute_prototypes<double>(pts, feats, scores);
    const auto gamma =
        assign_soft_labels(sinkhorn<double>(compute_cost<double>(pts, feats, protos, lambda), 1e-3, 20), 2 * half).gamma;
    std::vector<int> labels(static_cast<std::size_t>(2 * half));
    for (Index i = 0; i < 2 * half; ++i) gamma.row(i).maxCoeff(&labels[static_cast<std::size_t>(i)]);
    return purity(labels, side);
  };
  const double p_feature = purity_at(0.0);
  const double p_mixed = purity_at(0.5);
  const bool b_ok = p_feature < 0.6 && p_mixed >= 0.99;
  return {a_ok && b_ok, "(a) column deviation L2 " + fmt(dev_l2) + " (> " + fmt(10 * tol) + "), Sinkhorn " +
                            fmt(dev_ot) + " (< " + fmt(tol) + "); (b) purity lambda=0 " + fmt(p_feature) +
                            " (< 0.6), lambda=0.5 " + fmt(p_mixed) + " (>= 0.99)"};
}

// 8. Determinism of the pretrain command.
Result criterion_determinism() {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  const fs::path dir = fs::temp_directory_path() / ("softclu_accept_" + std::to_string(stamp));
  fs::create_directories(dir / "data");
  for (int k = 0; k < 6; ++k)
    save_xyz(make_blob_cloud(4, 64, 0.05, 0.5, 8000 + static_cast<std::uint64_t>(k)).cloud,
             dir / "data" / ("cloud" + std::to_string(k) + ".xyz"));
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"epochs": 3, "batch_size": 4, "num_points": 200, "seed": 11, "solver": {"J": 4}})";
  }
  auto run = [&](const std::string& out) {
    const std::string cmd = std::string("\"") + SOFTCLU_CLI + "\" pretrain --threads 1 --config \"" +
                            (dir / "config.json").string() + "\" --data-dir \"" + (dir / "data").string() +
                            "\" --out-dir \"" + (dir / out).string() + "\" > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const int a = run("run_a");
  const int b = run("run_b");
  Result r;
  if (a != 0 || b != 0) {
    r = {false, "pretrain exit codes " + std::to_string(a) + ", " + std::to_string(b)};
  } else {
    const auto da = file_digest(dir / "run_a" / "final.bin");
    const auto db = file_digest(dir / "run_b" / "final.bin");
    std::ifstream fa(dir / "run_a" / "final.bin", std::ios::binary), fb(dir / "run_b" / "final.bin", std::ios::binary);
    const std::string ba{std::istreambuf_iterator<char>(fa), {}}, bb{std::istreambuf_iterator<char>(fb), {}};
    r = {ba == bb && !ba.empty(), "two runs, --threads 1: " + std::to_string(ba.size()) + " bytes, digests " + da +
                                      (ba == bb ? " == " : " != ") + db};
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  return r;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Result()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "sinkhorn feasibility", criterion_feasibility},
      {2, "LP-oracle equivalence", criterion_lp},
      {3, "gradient exactness", criterion_gradient},
      {4, "equipartition", criterion_equipartition},
      {5, "clustering sanity at lambda=1", criterion_blobs},
      {6, "learning signal", criterion_learning},
      {7, "ablation mechanics", criterion_ablation},
      {8, "determinism", criterion_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.passed) ++failed;
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << r.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
