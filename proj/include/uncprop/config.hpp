#pragma once
// Run configuration: one JSON document per run.
//
// {
//   "task": "classification" | "regression",
//   "output_dir": "runs/x",
//   "dataset":  {"size": 32, "count": 1000, "noise_std": 1.0, "seed": 1},
//   "masks": [{"accel": 2, "center_fraction": 0.16}, ...],
//   "upstream":   {"hidden": [64], "activation": "relu"},
//   "downstream": {"hidden": [32], "activation": "tanh"},
//   "train_upstream":   {"seed": 2, "learning_rate": ..., "batch_size": ..., "epochs": ...,
//                        "optimizer": "adam" | "sgd", "beta1": ..., "beta2": ..., "epsilon": ...},
//   "train_downstream": {same keys, plus "mc_samples": 8, "objective": "aggregate" | "per_sample"},
//   "mc": {"samples": 256, "seed": 3}
// }
//
// Every seed is required. Other numeric fields fall back to the library
// defaults. Unknown keys anywhere are an error.

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "uncprop/core/errors.hpp"
#include "uncprop/dataset.hpp"
#include "uncprop/io.hpp"
#include "uncprop/pipeline.hpp"
#include "uncprop/training.hpp"

namespace uncprop {

struct ModelConfig {
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
};

struct RunConfig {
  Task task = Task::classification;
  std::string output_dir;
  DatasetConfig dataset;
  std::vector<Acceleration> masks;
  ModelConfig upstream{{64}, Activation::relu};
  ModelConfig downstream{{32}, Activation::tanh};
  TrainConfig train_upstream;
  TrainConfig train_downstream;
  std::size_t mc_samples = 256;
  std::uint64_t mc_seed = 0;
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed,
                       const std::set<std::string>& required = {}) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
  for (const auto& k : required) {
    if (!obj.contains(k)) throw ConfigError(where + ": missing required key '" + k + "'");
  }
}

inline std::uint64_t get_u64(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::size_t get_count(const json& obj, const std::string& key, const std::string& where, std::size_t def) {
  if (!obj.contains(key)) return def;
  return static_cast<std::size_t>(get_u64(obj, key, where));
}

inline double get_num(const json& obj, const std::string& key, const std::string& where, double def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(where + "." + key + ": must be finite");
  return d;
}

inline std::string get_str(const json& obj, const std::string& key, const std::string& where, const std::string& def) {
  if (!obj.contains(key)) return def;
  if (!obj.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return obj.at(key).get<std::string>();
}

inline ModelConfig parse_model(const json& j, const std::string& where, ModelConfig def) {
  check_keys(j, where, {"hidden", "activation"});
  if (j.contains("hidden")) {
    const json& h = j.at("hidden");
    if (!h.is_array()) throw ConfigError(where + ".hidden: expected an array of widths");
    def.hidden.clear();
    for (const auto& w : h) {
      if (!w.is_number_integer() || w.get<std::int64_t>() <= 0) {
        throw ConfigError(where + ".hidden: widths must be positive integers");
      }
      def.hidden.push_back(w.get<std::size_t>());
    }
  }
  const std::string act = get_str(j, "activation", where, to_string(def.activation));
  if (act == "relu") def.activation = Activation::relu;
  else if (act == "tanh") def.activation = Activation::tanh;
  else throw ConfigError(where + ".activation: expected relu or tanh, got '" + act + "'");
  return def;
}

inline TrainConfig parse_train(const json& j, const std::string& where, bool downstream) {
  std::set<std::string> allowed = {"seed", "learning_rate", "batch_size", "epochs", "optimizer",
                                   "beta1", "beta2", "epsilon"};
  if (downstream) {
    allowed.insert("mc_samples");
    allowed.insert("objective");
  }
  check_keys(j, where, allowed, {"seed"});
  TrainConfig t;
  t.seed = get_u64(j, "seed", where);
  t.learning_rate = get_num(j, "learning_rate", where, t.learning_rate);
  t.batch_size = get_count(j, "batch_size", where, t.batch_size);
  t.epochs = get_count(j, "epochs", where, t.epochs);
  const std::string opt = get_str(j, "optimizer", where, "adam");
  if (opt == "adam") t.optimizer = OptimizerKind::adam;
  else if (opt == "sgd") t.optimizer = OptimizerKind::sgd;
  else throw ConfigError(where + ".optimizer: expected adam or sgd, got '" + opt + "'");
  t.beta1 = get_num(j, "beta1", where, t.beta1);
  t.beta2 = get_num(j, "beta2", where, t.beta2);
  t.epsilon = get_num(j, "epsilon", where, t.epsilon);
  t.mc_samples_train = get_count(j, "mc_samples", where, t.mc_samples_train);
  const std::string obj = get_str(j, "objective", where, "aggregate");
  if (obj == "aggregate") t.objective = McObjective::aggregate;
  else if (obj == "per_sample") t.objective = McObjective::per_sample;
  else throw ConfigError(where + ".objective: expected aggregate or per_sample, got '" + obj + "'");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
  using namespace detail;
  check_keys(j, "config",
             {"task", "output_dir", "dataset", "masks", "upstream", "downstream", "train_upstream",
              "train_downstream", "mc"},
             {"task", "output_dir", "dataset", "masks", "train_upstream", "train_downstream", "mc"});
  RunConfig c;
  const std::string task = get_str(j, "task", "config", "");
  if (task == "classification") c.task = Task::classification;
  else if (task == "regression") c.task = Task::regression;
  else throw ConfigError("config.task: expected classification or regression, got '" + task + "'");
  c.output_dir = get_str(j, "output_dir", "config", "");
  if (c.output_dir.empty()) throw ConfigError("config.output_dir: must not be empty");

  const json& d = j.at("dataset");
  check_keys(d, "dataset", {"size", "count", "noise_std", "seed"}, {"seed"});
  c.dataset.seed = get_u64(d, "seed", "dataset");
  c.dataset.size = get_count(d, "size", "dataset", c.dataset.size);
  c.dataset.count = get_count(d, "count", "dataset", c.dataset.count);
  c.dataset.noise_std = get_num(d, "noise_std", "dataset", c.dataset.noise_std);
  c.dataset.validate();

  const json& m = j.at("masks");
  if (!m.is_array() || m.empty()) throw ConfigError("masks: expected a non-empty array");
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::string where = "masks[" + std::to_string(i) + "]";
    check_keys(m[i], where, {"accel", "center_fraction"}, {"accel", "center_fraction"});
    Acceleration a{get_num(m[i], "accel", where, 0.0), get_num(m[i], "center_fraction", where, 0.0)};
    try {
      MaskSpec{a.R, a.c, c.dataset.size, 0}.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + " (accel " + fmt_sig4(a.R) + ", center_fraction " + fmt_sig4(a.c) + "): " + e.what());
    }
    for (const auto& prev : c.masks) {
      if (prev == a) throw ConfigError(where + ": duplicate acceleration row");
    }
    c.masks.push_back(a);
  }

  if (j.contains("upstream")) c.upstream = parse_model(j.at("upstream"), "upstream", c.upstream);
  if (j.contains("downstream")) c.downstream = parse_model(j.at("downstream"), "downstream", c.downstream);
  c.train_upstream = parse_train(j.at("train_upstream"), "train_upstream", false);
  c.train_downstream = parse_train(j.at("train_downstream"), "train_downstream", true);

  const json& mc = j.at("mc");
  check_keys(mc, "mc", {"samples", "seed"}, {"seed"});
  c.mc_seed = get_u64(mc, "seed", "mc");
  c.mc_samples = get_count(mc, "samples", "mc", c.mc_samples);
  if (c.mc_samples < 2) throw ConfigError("mc.samples must be >= 2");
  return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config_text(read_file(path), path.string());
}

namespace detail {

inline json train_json(const TrainConfig& t, bool downstream) {
  json j = {{"seed", t.seed},
            {"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"epsilon", t.epsilon}};
  if (downstream) {
    j["mc_samples"] = t.mc_samples_train;
    j["objective"] = t.objective == McObjective::aggregate ? "aggregate" : "per_sample";
  }
  return j;
}

inline json model_json(const ModelConfig& m) { return {{"hidden", m.hidden}, {"activation", to_string(m.activation)}}; }

}  // namespace detail

inline json masks_json(const std::vector<Acceleration>& masks) {
  json a = json::array();
  for (const auto& m : masks) a.push_back({{"accel", m.R}, {"center_fraction", m.c}});
  return a;
}

/// Effective configuration with every default filled in; parses back to the same RunConfig.
inline json config_to_json(const RunConfig& c) {
  return {{"task", to_string(c.task)},
          {"output_dir", c.output_dir},
          {"dataset", dataset_config_json(c.dataset)},
          {"masks", masks_json(c.masks)},
          {"upstream", detail::model_json(c.upstream)},
          {"downstream", detail::model_json(c.downstream)},
          {"train_upstream", detail::train_json(c.train_upstream, false)},
          {"train_downstream", detail::train_json(c.train_downstream, true)},
          {"mc", {{"samples", c.mc_samples}, {"seed", c.mc_seed}}}};
}

}  // namespace uncprop
