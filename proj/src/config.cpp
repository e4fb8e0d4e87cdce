#include "softclu/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace softclu {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
  if (num_points < 1) throw ConfigError("num_points must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  solver.validate();
  encoder.validate();
  if (encoder.clusters != solver.clusters) throw ConfigError("encoder head width must equal solver J");
}

json to_json(const SolverConfig& s) {
  return {{"J", s.clusters},     {"epsilon", s.epsilon}, {"iters", s.iters},
          {"tol", s.tol},        {"lambda", s.lambda},   {"learn_lambda", s.learn_lambda}};
}

json to_json(const EncoderConfig& e) {
  return {{"hidden", e.hidden}, {"feature_dim", e.feature_dim}, {"global_context", e.global_context}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"decay_every", c.decay_every},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"eta", c.eta},
          {"num_points", c.num_points},
          {"checkpoint_every", c.checkpoint_every},
          {"solver", to_json(c.solver)},
          {"encoder", to_json(c.encoder)}};
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

SolverConfig solver_config_from_json(const json& j) {
  check_keys(j, {"J", "epsilon", "iters", "tol", "lambda", "learn_lambda"}, "solver");
  SolverConfig s;
  read(j, "J", s.clusters);
  read(j, "epsilon", s.epsilon);
  read(j, "iters", s.iters);
  read(j, "tol", s.tol);
  read(j, "lambda", s.lambda);
  read(j, "learn_lambda", s.learn_lambda);
  return s;
}

EncoderConfig encoder_config_from_json(const json& j) {
  check_keys(j, {"hidden", "feature_dim", "global_context", "J"}, "encoder");
  EncoderConfig e;
  read(j, "hidden", e.hidden);
  read(j, "feature_dim", e.feature_dim);
  read(j, "global_context", e.global_context);
  read(j, "J", e.clusters);
  return e;
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"epochs", "batch_size", "lr", "lr_decay", "decay_every", "weight_decay", "beta1", "beta2",
              "adam_eps", "seed", "eta", "num_points", "checkpoint_every", "solver", "encoder"},
             "config");
  TrainConfig c;
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "lr_decay", c.lr_decay);
  read(j, "decay_every", c.decay_every);
  read(j, "weight_decay", c.weight_decay);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "seed", c.seed);
  read(j, "eta", c.eta);
  read(j, "num_points", c.num_points);
  read(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"));
  if (j.contains("encoder")) {
    if (j.at("encoder").contains("J")) throw ConfigError("set J under 'solver', not 'encoder'");
    c.encoder = encoder_config_from_json(j.at("encoder"));
  }
  c.encoder.clusters = c.solver.clusters;
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const TrainConfig& config) { return fnv1a_hex(to_json(config).dump()); }

}  // namespace softclu
