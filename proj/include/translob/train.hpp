#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "translob/adam.hpp"
#include "translob/checkpoint.hpp"
#include "translob/metrics.hpp"
#include "translob/model.hpp"

namespace translob {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 150;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool shuffle = true;
  int eval_every = 1;
  std::optional<int> early_stop_patience;  // off by default

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (lr <= 0.0) throw ValidationError("learning rate must be positive");
    if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
    if (early_stop_patience && *early_stop_patience < 1)
      throw ValidationError("early_stop_patience must be >= 1");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j{{"batch_size", c.batch_size}, {"epochs", c.epochs},
                   {"lr", c.lr},                 {"beta1", c.beta1},
                   {"beta2", c.beta2},           {"adam_eps", c.adam_eps},
                   {"seed", c.seed},             {"shuffle", c.shuffle},
                   {"eval_every", c.eval_every}};
  j["early_stop_patience"] =
      c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"batch_size", "epochs", "lr", "beta1", "beta2", "adam_eps", "seed",
                       "shuffle", "eval_every", "early_stop_patience"},
                      "train config");
  TrainConfig c;
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("shuffle")) c.shuffle = j.at("shuffle").get<bool>();
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
  if (j.contains("early_stop_patience") && !j.at("early_stop_patience").is_null())
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
  return c;
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // percent
  std::optional<double> eval_accuracy;
};

/// Mini-batch training driver. One optimizer step per batch; the trailing
/// partial batch is trained at its actual size. Shuffling and dropout draw
/// from streams forked off the config seed, so runs repeat bit for bit.
class Trainer {
 public:
  Trainer(ModelParams& model, const TrainConfig& cfg)
      : model_(&model),
        cfg_(cfg),
        params_(model.all()),
        state_(AdamState::init(std::span<Param* const>(params_.data(), params_.size()),
                               AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps})),
        shuffle_rng_(Rng(cfg.seed).fork(2)),
        dropout_rng_(Rng(cfg.seed).fork(3)) {
    cfg.validate();
    model.cfg.validate();
  }

  EpochStats run_epoch(std::span<const LabeledWindow> data, int epoch_number) {
    if (data.empty()) throw ValidationError("train: empty dataset");
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (cfg_.shuffle) {
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = shuffle_rng_.uniform_index(i);
        std::swap(order[i - 1], order[j]);
      }
    }

    double loss_sum = 0.0;
    std::int64_t correct = 0;
    const std::size_t bsz = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < n; start += bsz) {
      const std::size_t end = std::min(n, start + bsz);
      Tape tape;
      BoundModel bm = bind_model(tape, *model_);
      std::vector<Var> prob_rows;
      std::vector<int> labels;
      prob_rows.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const LabeledWindow& w = data[order[i]];
        ModelOutput out = model_forward(tape, bm, w.input, /*training=*/true, dropout_rng_);
        if (argmax_class(out.probs.value()) == w.label) ++correct;
        prob_rows.push_back(out.probs);
        labels.push_back(w.label);
      }
      Var probs = prob_rows.size() == 1 ? prob_rows[0] : concat_rows(prob_rows);
      Var loss = cross_entropy_loss(probs, labels, model_->cfg.l2_lambda, {bm.dense_w});
      loss_sum += loss.value().data[0] * static_cast<double>(labels.size());
      tape.backward(loss);
      adam_step(std::span<Param* const>(params_.data(), params_.size()), state_);
    }

    EpochStats s;
    s.epoch = epoch_number;
    s.train_loss = loss_sum / static_cast<double>(n);
    s.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    return s;
  }

  AdamState& optimizer_state() { return state_; }
  const AdamState& optimizer_state() const { return state_; }

  /// Install a previously saved optimizer state (resume).
  void set_optimizer_state(AdamState st) {
    if (st.m.size() != params_.size())
      throw ValidationError("optimizer state does not match the model's param list");
    state_ = std::move(st);
  }

  std::int64_t steps() const { return state_.t; }

 private:
  ModelParams* model_;
  TrainConfig cfg_;
  std::vector<Param*> params_;
  AdamState state_;
  Rng shuffle_rng_;
  Rng dropout_rng_;
};

struct TrainOutputs {
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

inline nlohmann::json history_to_json(const std::vector<EpochStats>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochStats& e : history) {
    nlohmann::json row{{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy}};
    row["eval_accuracy"] =
        e.eval_accuracy ? nlohmann::json(*e.eval_accuracy) : nlohmann::json(nullptr);
    arr.push_back(std::move(row));
  }
  return arr;
}

/// Full training loop with bookkeeping. When out_dir is non-empty, writes
/// checkpoint_best.json, checkpoint_final.json, history.json and run.log
/// there. "Best" is highest eval accuracy when an eval set is given,
/// otherwise lowest training loss. Resuming continues the Adam step counter.
inline TrainOutputs train(ModelParams& model, std::span<const LabeledWindow> train_set,
                          std::span<const LabeledWindow> eval_set, const TrainConfig& cfg,
                          const std::string& out_dir = "",
                          const AdamState* resume_state = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty dataset");

  Trainer trainer(model, cfg);
  if (resume_state) trainer.set_optimizer_state(*resume_state);

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir + "/run.log");
    if (!log) throw IoError("cannot open " + out_dir + "/run.log");
    log << "translob training run\n";
    log << "seed: " << cfg.seed << "\n";
    log << "train config: " << train_config_to_json(cfg).dump() << "\n";
    log << "model config: " << model_config_to_json(model.cfg).dump() << "\n";
    log << "train windows: " << train_set.size() << ", eval windows: " << eval_set.size() << "\n";
  }

  TrainOutputs out;
  double best_eval = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats = trainer.run_epoch(train_set, epoch);
    if (!eval_set.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs))
      stats.eval_accuracy = evaluate(model, eval_set).accuracy;
    out.history.push_back(stats);

    bool improved;
    if (stats.eval_accuracy) {
      improved = *stats.eval_accuracy > best_eval;
      if (improved) best_eval = *stats.eval_accuracy;
    } else {
      improved = stats.train_loss < best_loss;
      if (improved) best_loss = stats.train_loss;
    }
    if (improved) {
      out.best_epoch = epoch;
      since_best = 0;
      if (!out_dir.empty())
        save_checkpoint(out_dir + "/checkpoint_best.json", model, &trainer.optimizer_state());
    } else {
      ++since_best;
    }

    if (log) {
      log << "epoch " << epoch << ": train_loss=" << stats.train_loss
          << " train_acc=" << stats.train_accuracy;
      if (stats.eval_accuracy) log << " eval_acc=" << *stats.eval_accuracy;
      log << "\n";
      log.flush();
    }

    if (cfg.early_stop_patience && since_best >= *cfg.early_stop_patience) break;
  }

  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/checkpoint_final.json", model, &trainer.optimizer_state());
    std::ofstream hist(out_dir + "/history.json");
    if (!hist) throw IoError("cannot open " + out_dir + "/history.json");
    hist << history_to_json(out.history).dump(2) << '\n';
    if (log) log << "best epoch: " << out.best_epoch << "\n";
  }
  return out;
}

}  // namespace translob
