// softclu: pretraining, clustering, export and self-checks from the shell.
//
// Exit codes:
//   0  success
//   1  verify found a failing check
//   2  configuration or usage error
//   3  data error (missing, empty or unparseable input)
//   4  numerical abort during training
//   5  checkpoint error or checkpoint/flag mismatch

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "softclu/checkpoint.hpp"
#include "softclu/config.hpp"
#include "softclu/pointcloud.hpp"
#include "softclu/trainer.hpp"
#include "softclu/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace softclu;

namespace {

constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitCheckpoint = 5;

struct ExitError {
  int code;
  std::string message;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

bool is_cloud_file(const fs::path& p) {
  try {
    format_from_extension(p);
    return true;
  } catch (const ParseError&) {
    return false;
  }
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  int threads = 1;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

fs::path resolve_out_dir(const PretrainArgs& a) {
  if (!a.out_dir.empty()) return a.out_dir;
  if (const char* env = std::getenv("SOFTCLU_OUT_DIR"); env && *env) return env;
  return "softclu_out";
}

std::vector<fs::path> list_clouds(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ExitError{kExitData, "data dir " + dir.string() + " is not a directory"};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_cloud_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_pretrain(const PretrainArgs& a) {
  TrainConfig config;
  try {
    config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
    if (a.epochs) config.epochs = *a.epochs;
    if (a.seed) config.seed = *a.seed;
    config.validate();
  } catch (const Error& e) {
    throw ExitError{kExitConfig, e.what()};
  }
  if (a.threads < 1) throw ExitError{kExitConfig, "--threads must be >= 1"};

  const auto files = list_clouds(a.data_dir);
  if (files.empty())
    throw ExitError{kExitData, "found 0 cloud files (.off, .ply, .xyz, .txt, .pts) in " + a.data_dir};
  std::vector<PointCloud> clouds;
  for (std::size_t k = 0; k < files.size(); ++k) {
    try {
      const auto raw = load_cloud(files[k]);
      clouds.push_back(normalize(downsample_random(raw, config.num_points, config.seed + k)));
    } catch (const Error& e) {
      throw ExitError{kExitData, e.what()};
    }
  }

  const fs::path out = resolve_out_dir(a);
  fs::create_directories(out);
  const std::string hash = config_hash(config);
  json manifest = {{"tool_version", SOFTCLU_VERSION},
                   {"config", to_json(config)},
                   {"config_hash", hash},
                   {"seed", config.seed},
                   {"threads", a.threads},
                   {"data_dir", a.data_dir},
                   {"start_time", utc_now()},
                   {"end_time", nullptr}};
  manifest["inputs"] = json::array();
  for (const auto& f : files) manifest["inputs"].push_back(f.filename().string());
  write_json(out / "manifest.json", manifest);

  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (out / "metrics.jsonl").string());

  auto checkpoint_of = [&](const TrainState& s) {
    return Checkpoint{s.params, config.solver, hash, s.epoch, s.step};
  };
  PretrainOptions opts;
  opts.threads = a.threads;
  opts.on_epoch = [&](const TrainState& s) {
    metrics << to_json(s.history.back()).dump() << '\n' << std::flush;
    std::cerr << "epoch " << s.epoch << "/" << config.epochs << " l_total " << s.history.back().l_total << '\n';
    if (config.checkpoint_every > 0 && s.epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_epoch_%04d.bin", s.epoch);
      save_checkpoint(checkpoint_of(s), out / name);
    }
  };

  TrainState state;
  try {
    state = pretrain(clouds, config, opts);
  } catch (const NumericalError& e) {
    throw ExitError{kExitNumerical, e.what()};
  }
  save_checkpoint(checkpoint_of(state), out / "final.bin");
  manifest["end_time"] = utc_now();
  write_json(out / "manifest.json", manifest);
  std::cout << "wrote " << (out / "final.bin").string() << " after " << state.epoch << " epochs\n";
  return 0;
}

// ----------------------------------------------------------------- cluster

struct ClusterArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::optional<int> clusters;
  std::optional<double> epsilon;
  std::optional<double> lambda;
  std::optional<int> iters;
  int max_iters = 10000;
};

fs::path sidecar_path(const fs::path& ply) { return fs::path(ply.string() + ".json"); }

int cmd_cluster(const ClusterArgs& a) {
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(a.checkpoint);
  } catch (const Error& e) {
    throw ExitError{kExitCheckpoint, e.what()};
  }
  SolverConfig solver = ckpt.solver;
  if (a.clusters && *a.clusters != ckpt.params.config.clusters)
    throw ExitError{kExitCheckpoint, "--J " + std::to_string(*a.clusters) + " does not match the checkpoint head width " +
                                         std::to_string(ckpt.params.config.clusters) +
                                         "; a new J needs a retrained head"};
  if (a.epsilon) solver.epsilon = *a.epsilon;
  if (a.lambda) solver.lambda = *a.lambda;
  if (a.iters) solver.iters = *a.iters;
  try {
    solver.validate();
  } catch (const ConfigError& e) {
    throw ExitError{kExitConfig, e.what()};
  }
  if (a.max_iters < 1) throw ExitError{kExitConfig, "--max-iters must be >= 1"};

  PointCloud raw;
  try {
    raw = load_cloud(a.input);
  } catch (const Error& e) {
    throw ExitError{kExitData, e.what()};
  }

  EStep e;
  try {
    // A fixed --iters reproduces the training E-step; otherwise iterate to tol.
    e = a.iters ? e_step(ckpt.params, normalize(raw), solver)
                : e_step_until(ckpt.params, normalize(raw), solver, a.max_iters);
  } catch (const NumericalError& err) {
    throw ExitError{kExitNumerical, err.what()};
  }

  const auto labeled = label_cloud(raw, e.labels.gamma);
  const int j = solver.clusters;
  export_labeled_ply(labeled, a.out, default_palette(j));

  std::vector<long> counts(static_cast<std::size_t>(j), 0);
  for (int l : labeled.labels) ++counts[static_cast<std::size_t>(l)];
  double mean_conf = 0;
  for (double c : labeled.confidences) mean_conf += c;
  mean_conf /= static_cast<double>(labeled.confidences.size());
  const VectorXd mass = e.labels.gamma.colwise().sum().transpose();
  json side = {{"points", raw.size()},
               {"J", j},
               {"counts", counts},
               {"soft_counts", std::vector<double>(mass.data(), mass.data() + mass.size())},
               {"mean_confidence", mean_conf},
               {"marginal_residual", e.marginal_residual},
               {"sinkhorn_iterations", e.plan.iterations},
               {"lambda", effective_lambda(ckpt.params, solver)},
               {"epsilon", solver.epsilon},
               {"checkpoint", a.checkpoint},
               {"labels", labeled.labels},
               {"confidences", labeled.confidences}};
  write_json(sidecar_path(a.out), side);
  std::cout << "wrote " << a.out << " (" << raw.size() << " points, J=" << j << ", residual "
            << e.marginal_residual << ")\n";
  return 0;
}

// ------------------------------------------------------------------ export

struct ExportArgs {
  std::string input;
  std::string labels;
  std::string out;
  std::optional<int> clusters;
};

// Labels from a sidecar JSON ({"labels": [...], optional "confidences"}) or
// a text file with one integer per line.
void read_labels(const fs::path& path, std::vector<int>& labels, std::vector<double>& conf) {
  if (path.extension() == ".json") {
    const json j = read_json(path);
    if (!j.contains("labels")) throw ParseError(path.string() + ": no \"labels\" array", 0);
    labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("confidences")) conf = j.at("confidences").get<std::vector<double>>();
    return;
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    try {
      std::size_t used = 0;
      labels.push_back(std::stoi(line.substr(start), &used));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": bad label '" + line + "'", lineno);
    }
  }
}

int cmd_export(const ExportArgs& a) {
  PointCloud cloud;
  LabeledCloud labeled;
  try {
    cloud = load_cloud(a.input);
    read_labels(a.labels, labeled.labels, labeled.confidences);
  } catch (const Error& e) {
    throw ExitError{kExitData, e.what()};
  } catch (const nlohmann::json::exception& e) {
    throw ExitError{kExitData, std::string("labels: ") + e.what()};
  }
  if (static_cast<Index>(labeled.labels.size()) != cloud.size())
    throw ExitError{kExitData, "label count " + std::to_string(labeled.labels.size()) + " differs from point count " +
                                   std::to_string(cloud.size())};
  if (labeled.confidences.empty()) labeled.confidences.assign(labeled.labels.size(), 1.0);
  if (labeled.confidences.size() != labeled.labels.size())
    throw ExitError{kExitData, "confidence count differs from label count"};
  const int max_label = labeled.labels.empty() ? 0 : *std::max_element(labeled.labels.begin(), labeled.labels.end());
  if (!labeled.labels.empty() && *std::min_element(labeled.labels.begin(), labeled.labels.end()) < 0)
    throw ExitError{kExitData, "labels must be non-negative"};
  const int j = a.clusters.value_or(std::max(max_label + 1, 1));
  if (max_label >= j) throw ExitError{kExitConfig, "label " + std::to_string(max_label) + " exceeds --J"};
  labeled.cloud = cloud;
  export_labeled_ply(labeled, a.out, default_palette(j));
  std::cout << "wrote " << a.out << " (" << cloud.size() << " points)\n";
  return 0;
}

// ------------------------------------------------------------------ verify

int cmd_verify(const std::string& level) {
  const auto checks = run_verify(level == "full" ? VerifyLevel::Full : VerifyLevel::Fast);
  std::size_t width = 5;
  for (const auto& c : checks) width = std::max(width, c.name.size());
  int failed = 0;
  std::cout << std::left << std::setw(static_cast<int>(width) + 2) << "check" << "result  seconds  detail\n";
  for (const auto& c : checks) {
    if (!c.passed) ++failed;
    std::cout << std::left << std::setw(static_cast<int>(width) + 2) << c.name << std::setw(8)
              << (c.passed ? "PASS" : "FAIL") << std::right << std::setw(7) << std::fixed << std::setprecision(2)
              << c.seconds << "  " << c.detail << '\n';
    std::cout.unsetf(std::ios::floatfield);
  }
  std::cout << (checks.size() - static_cast<std::size_t>(failed)) << "/" << checks.size() << " checks passed\n";
  return failed == 0 ? 0 : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised point cloud clustering with optimal-transport soft labels"};
  app.set_version_flag("--version", std::string(SOFTCLU_VERSION));
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "train the encoder on a directory of clouds");
  pretrain_cmd->add_option("--config", pa.config, "JSON config; missing keys take defaults")->check(CLI::ExistingFile);
  pretrain_cmd->add_option("--data-dir", pa.data_dir, "directory of .off/.ply/.xyz clouds")->required();
  pretrain_cmd->add_option("--out-dir", pa.out_dir, "output directory (default $SOFTCLU_OUT_DIR or softclu_out)");
  pretrain_cmd->add_option("--threads", pa.threads, "worker threads for the E-step and gradients");
  pretrain_cmd->add_option("--epochs", pa.epochs, "override config epochs");
  pretrain_cmd->add_option("--seed", pa.seed, "override config seed");

  ClusterArgs ca;
  auto* cluster_cmd = app.add_subcommand("cluster", "soft-label one cloud with a checkpoint");
  cluster_cmd->add_option("--checkpoint", ca.checkpoint, "checkpoint file")->required();
  cluster_cmd->add_option("--input", ca.input, "input cloud")->required();
  cluster_cmd->add_option("--out", ca.out, "output PLY; a .json sidecar is written next to it")->required();
  cluster_cmd->add_option("--J", ca.clusters, "expected cluster count (must match the checkpoint)");
  cluster_cmd->add_option("--epsilon", ca.epsilon, "entropic regularization");
  cluster_cmd->add_option("--lambda", ca.lambda, "geometric weight in [0, 1]");
  cluster_cmd->add_option("--iters", ca.iters, "fixed Sinkhorn rounds (default: iterate to the solver tol)");
  cluster_cmd->add_option("--max-iters", ca.max_iters, "cap when iterating to tol");

  ExportArgs ea;
  auto* export_cmd = app.add_subcommand("export", "write a labeled PLY from a cloud and a label file");
  export_cmd->add_option("--input", ea.input, "input cloud")->required();
  export_cmd->add_option("--labels", ea.labels, "labels: text (one per line) or a cluster sidecar .json")->required();
  export_cmd->add_option("--out", ea.out, "output PLY")->required();
  export_cmd->add_option("--J", ea.clusters, "palette size (default max label + 1)");

  std::string level = "fast";
  auto* verify_cmd = app.add_subcommand("verify", "run the self-check suite");
  verify_cmd->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*pretrain_cmd) return cmd_pretrain(pa);
    if (*cluster_cmd) return cmd_cluster(ca);
    if (*export_cmd) return cmd_export(ea);
    if (*verify_cmd) return cmd_verify(level);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
