// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "softlm/data.hpp"
#include "softlm/models.hpp"
#include "softlm/trainer.hpp"

namespace softlm {

/// Every knob of a run. Text form is flat "section.key = value" lines; '#'
/// starts a comment. Unknown keys are rejected by name.
struct RunConfig {
  // model
  std::string model_kind = "encoder";  // encoder | mlp
  std::size_t n_blocks = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  bool pre_norm = false;
  std::vector<std::size_t> mlp_hidden = {64, 64};
  std::string compress = "all";

  // data
  std::string data_source = "synthetic";  // synthetic | csv | dataset
  std::size_t data_n = 2000;
  std::size_t seq_len = 16;
  std::size_t vocab_size = 32;
  std::size_t n_classes = 4;
  double difficulty = 0.0;
  std::size_t pairs_per_class = 1;
  double val_fraction = 0.2;
  std::string data_path;
  std::string text_column = "text";
  std::string label_column = "label";
  std::size_t vocab_cap = 5000;
  std::size_t max_len = 64;

  // training
  std::uint64_t seed = 0;
  std::size_t pretrain_epochs = 14;
  double pretrain_lr = 1e-3;
  double cr = 0.5;
  double gamma = 0.01;
  std::string variant = "adaptive";
  double base_lr = 1e-3;
  double threshold_lr = 1e-2;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t recovery_epochs = 2;
  std::size_t max_budget_steps = 3000;
  double sharpness = 10.0;
  std::size_t eval_every = 1;
  double rank_eps = kRankEps;

  // sweep
  std::size_t sweep_seeds = 5;
  std::vector<double> sweep_crs = {0.25, 0.5, 0.75};

  // reports
  bool telemetry_sigmas = false;

  /// Applies "key = value" lines on top of the current values.
  void apply_text(const std::string &text, const std::string &origin = "<config>");
  void set(const std::string &key, const std::string &value);
  /// Canonical key -> value text for every key, sorted.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  static std::vector<std::string> keys();

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  TrainConfig train_config() const;
  PretrainConfig pretrain_config() const;
};

/// Reads a config file: "key = value" text, or a run manifest (.json) whose
/// "config" object is applied the same way.
RunConfig load_config(const std::filesystem::path &path);

/// FNV-1a 64-bit hash of the canonical config text, as 16 hex digits.
std::string run_id(const RunConfig &cfg);

struct RunData {
  Dataset train, val;
  std::size_t max_seq_len = 0;
};

/// Builds or loads the dataset named by the config and splits it.
RunData prepare_data(const RunConfig &cfg);

/// Untrained model sized for the data.
std::unique_ptr<Classifier> build_model(const RunConfig &cfg, const RunData &data);

}  // namespace softlm
