#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "translob/adam.hpp"
#include "translob/config_json.hpp"
#include "translob/model.hpp"

namespace translob {

inline constexpr const char* kCheckpointFormat = "translob-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Versioned JSON checkpoint: model config, every param as id -> shape +
/// row-major values, and optionally the Adam moments for resuming.
inline nlohmann::json checkpoint_to_json(const ModelParams& mp, const AdamState* opt = nullptr) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = model_config_to_json(mp.cfg);
  nlohmann::json params = nlohmann::json::array();
  for (const Param* p : mp.all())
    params.push_back({{"id", p->id}, {"shape", p->value.shape}, {"data", p->value.data}});
  j["params"] = std::move(params);
  if (opt) {
    nlohmann::json moments = nlohmann::json::array();
    const auto ps = mp.all();
    for (std::size_t i = 0; i < ps.size(); ++i)
      moments.push_back({{"id", ps[i]->id}, {"m", opt->m[i].data}, {"v", opt->v[i].data}});
    j["adam"] = {{"t", opt->t},
                 {"lr", opt->cfg.lr},
                 {"beta1", opt->cfg.beta1},
                 {"beta2", opt->cfg.beta2},
                 {"eps", opt->cfg.eps},
                 {"moments", std::move(moments)}};
  } else {
    j["adam"] = nullptr;
  }
  return j;
}

inline void save_checkpoint(const std::string& path, const ModelParams& mp,
                            const AdamState* opt = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << checkpoint_to_json(mp, opt).dump();
  out << '\n';
  if (!out) throw IoError("failed writing " + path);
}

/// Load params (and optional Adam state) into an already-built model,
/// validating every tensor shape by id.
inline void load_checkpoint_into(const nlohmann::json& j, ModelParams& mp,
                                 AdamState* opt = nullptr) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw ParseError("not a translob checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));

  std::map<std::string, Param*> by_id;
  for (Param* p : mp.all()) by_id[p->id] = p;

  std::size_t seen = 0;
  for (const nlohmann::json& entry : j.at("params")) {
    const std::string id = entry.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("checkpoint tensor '" + id + "' does not exist in this model");
    Param& p = *it->second;
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != p.value.shape)
      throw ValidationError("checkpoint tensor '" + id + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p.value.shape));
    const auto data = entry.at("data").get<std::vector<double>>();
    if (static_cast<std::int64_t>(data.size()) != p.value.numel())
      throw ValidationError("checkpoint tensor '" + id + "' has wrong element count");
    p.value.data = data;
    ++seen;
  }
  if (seen != by_id.size())
    throw ValidationError("checkpoint is missing " + std::to_string(by_id.size() - seen) +
                          " model tensors");

  if (opt) {
    if (j.at("adam").is_null()) throw ValidationError("checkpoint has no optimizer state");
    const nlohmann::json& a = j.at("adam");
    AdamConfig cfg{a.at("lr").get<double>(), a.at("beta1").get<double>(),
                   a.at("beta2").get<double>(), a.at("eps").get<double>()};
    const auto ps = mp.all();
    AdamState st = AdamState::init(std::span<Param* const>(ps.data(), ps.size()), cfg);
    st.t = a.at("t").get<std::int64_t>();
    std::map<std::string, const nlohmann::json*> mom_by_id;
    for (const nlohmann::json& m : a.at("moments")) mom_by_id[m.at("id").get<std::string>()] = &m;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto it = mom_by_id.find(ps[i]->id);
      if (it == mom_by_id.end())
        throw ValidationError("optimizer state missing moments for '" + ps[i]->id + "'");
      st.m[i].data = it->second->at("m").get<std::vector<double>>();
      st.v[i].data = it->second->at("v").get<std::vector<double>>();
      if (static_cast<std::int64_t>(st.m[i].data.size()) != ps[i]->value.numel() ||
          static_cast<std::int64_t>(st.v[i].data.size()) != ps[i]->value.numel())
        throw ValidationError("optimizer moments for '" + ps[i]->id + "' have wrong size");
    }
    *opt = std::move(st);
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return j;
}

/// Build a model from the checkpoint's embedded config and load its weights.
inline ModelParams load_checkpoint(const std::string& path, AdamState* opt = nullptr) {
  const nlohmann::json j = read_json_file(path);
  if (!j.is_object() || !j.contains("config")) throw ParseError("not a translob checkpoint");
  ModelParams mp = build_model(model_config_from_json(j.at("config")));
  load_checkpoint_into(j, mp, opt);
  return mp;
}

/// Load a checkpoint file into an existing model (shape-checked by id).
inline void load_checkpoint_file_into(const std::string& path, ModelParams& mp,
                                      AdamState* opt = nullptr) {
  load_checkpoint_into(read_json_file(path), mp, opt);
}

}  // namespace translob
