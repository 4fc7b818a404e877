#pragma once

#include <initializer_list>
#include <optional>
#include <string>

#include <json.hpp>

#include "translob/lob.hpp"
#include "translob/metrics.hpp"
#include "translob/model.hpp"

namespace translob {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok |= (item.key() == k);
    if (!ok) throw ValidationError(std::string(what) + ": unknown key '" + item.key() + "'");
  }
}

// --- labeling / windowing ---------------------------------------------------

inline const char* to_string(StatsPolicy p) {
  switch (p) {
    case StatsPolicy::prev_day: return "prev_day";
    case StatsPolicy::all_prev_days: return "all_prev_days";
    case StatsPolicy::explicit_stats: return "explicit_stats";
  }
  return "?";
}

inline StatsPolicy stats_policy_from_string(const std::string& s) {
  if (s == "prev_day") return StatsPolicy::prev_day;
  if (s == "all_prev_days") return StatsPolicy::all_prev_days;
  if (s == "explicit_stats") return StatsPolicy::explicit_stats;
  throw ValidationError("unknown stats_policy: " + s);
}

/// Labeling plus windowing knobs, the `label` section of a run config.
struct PrepareConfig {
  LabelConfig label;
  StatsPolicy stats_policy = StatsPolicy::prev_day;
  bool cross_day = false;
};

inline nlohmann::json prepare_config_to_json(const PrepareConfig& c) {
  return {{"horizon_k", c.label.horizon_k},
          {"alpha", c.label.alpha},
          {"smoothing", to_string(c.label.smoothing)},
          {"stats_policy", to_string(c.stats_policy)},
          {"cross_day", c.cross_day}};
}

inline PrepareConfig prepare_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"horizon_k", "alpha", "smoothing", "stats_policy", "cross_day"},
                      "label config");
  PrepareConfig c;
  if (j.contains("horizon_k")) c.label.horizon_k = j.at("horizon_k").get<int>();
  if (j.contains("alpha")) c.label.alpha = j.at("alpha").get<double>();
  if (j.contains("smoothing"))
    c.label.smoothing = smoothing_from_string(j.at("smoothing").get<std::string>());
  if (j.contains("stats_policy"))
    c.stats_policy = stats_policy_from_string(j.at("stats_policy").get<std::string>());
  if (j.contains("cross_day")) c.cross_day = j.at("cross_day").get<bool>();
  return c;
}

// --- model -------------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"window", c.window},
          {"input_features", c.input_features},
          {"conv_filters", c.conv_filters},
          {"kernel_size", c.kernel_size},
          {"dilations", c.dilations},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"blocks", c.blocks},
          {"weights_shared", c.weights_shared},
          {"mlp_inner", c.mlp_inner},
          {"dense_dim", c.dense_dim},
          {"classes", c.classes},
          {"dropout_rate", c.dropout_rate},
          {"l2_lambda", c.l2_lambda},
          {"scale_mode", to_string(c.scale_mode)},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"window", "input_features", "conv_filters", "kernel_size", "dilations",
                       "model_dim", "heads", "blocks", "weights_shared", "mlp_inner", "dense_dim",
                       "classes", "dropout_rate", "l2_lambda", "scale_mode", "seed"},
                      "model config");
  ModelConfig c;
  if (j.contains("window")) c.window = j.at("window").get<int>();
  if (j.contains("input_features")) c.input_features = j.at("input_features").get<int>();
  if (j.contains("conv_filters")) c.conv_filters = j.at("conv_filters").get<int>();
  if (j.contains("kernel_size")) c.kernel_size = j.at("kernel_size").get<int>();
  if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<int>>();
  if (j.contains("model_dim")) c.model_dim = j.at("model_dim").get<int>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int>();
  if (j.contains("blocks")) c.blocks = j.at("blocks").get<int>();
  if (j.contains("weights_shared")) c.weights_shared = j.at("weights_shared").get<bool>();
  if (j.contains("mlp_inner")) c.mlp_inner = j.at("mlp_inner").get<int>();
  if (j.contains("dense_dim")) c.dense_dim = j.at("dense_dim").get<int>();
  if (j.contains("classes")) c.classes = j.at("classes").get<int>();
  if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("l2_lambda")) c.l2_lambda = j.at("l2_lambda").get<double>();
  if (j.contains("scale_mode"))
    c.scale_mode = scale_mode_from_string(j.at("scale_mode").get<std::string>());
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// --- metrics -----------------------------------------------------------------

inline nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json conf = nlohmann::json::array();
  for (int a = 0; a < 3; ++a)
    conf.push_back({m.confusion[a][0], m.confusion[a][1], m.confusion[a][2]});
  return {{"total", m.total},
          {"confusion", conf},
          {"accuracy", m.accuracy},
          {"precision", {m.precision[0], m.precision[1], m.precision[2]}},
          {"recall", {m.recall[0], m.recall[1], m.recall[2]}},
          {"f1", {m.f1[0], m.f1[1], m.f1[2]}},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1},
          {"classes", {"down", "neutral", "up"}}};
}

}  // namespace translob
