// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "softlm/data.hpp"
#include "softlm/losses.hpp"
#include "softlm/metrics.hpp"
#include "softlm/models.hpp"
#include "softlm/optim.hpp"

namespace softlm {

struct PretrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  /// Requested compression ratio over compressible layers, in [0, 1).
  double cr = 0.5;
  /// Explicit parameter budget P; overrides cr when set.
  std::optional<std::size_t> target_params;
  double gamma = 0.01;
  CompressionVariant variant = CompressionVariant::adaptive;
  double base_lr = 1e-3;
  double threshold_lr = 1e-2;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t recovery_epochs = 3;
  std::size_t max_budget_steps = 3000;
  /// Evaluate every this many recovery epochs (0 = only at the end).
  std::size_t eval_every = 1;
  double rank_eps = kRankEps;
  /// Keep per-step sigma snapshots in memory (needed for offline recounts).
  bool record_sigmas = true;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based optimizer step
  std::string phase;     // "budget" or "recovery"
  double l_acc = 0.0;
  double compression_term = 0.0;
  double l_tot = 0.0;
  bool frozen = false;
  std::vector<double> alphas;
  std::vector<std::size_t> ranks;
  std::size_t live_params = 0;
  std::vector<std::vector<double>> sigmas;
};

struct EvalRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t step = 0;
  Metrics metrics;
};

struct RunTelemetry {
  std::vector<std::string> layer_paths;  // decomposed layers, registry order
  std::size_t dense_params = 0;
  std::size_t target_params = 0;
  std::size_t initial_live_params = 0;
  /// Optimizer steps taken before the freeze fired (0 = at the outset).
  std::size_t freeze_step = 0;
  std::size_t params_at_freeze = 0;
  double achieved_cr = 0.0;
  std::size_t total_steps = 0;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

/// Parameter budget P for a requested compression ratio.
std::size_t budget_for_cr(std::size_t dense_total, double cr);

/// "decay" (dense weights, U, V, merged factors, head), "no_decay" (sigma,
/// biases, embeddings, norms) and "threshold" (alpha, clamped at 0).
std::vector<ParamGroup> make_param_groups(Classifier &model, double base_lr, double weight_decay,
                                          double threshold_lr);

/// Per-layer storage recomputed from raw sigma and alpha snapshots.
std::size_t recount_live_params(const Classifier &model, const std::vector<std::string> &paths,
                                const std::vector<std::vector<double>> &sigmas,
                                const std::vector<double> &alphas, double eps);

std::vector<int> predict(const Classifier &model, const Dataset &ds, std::size_t batch_size = 256);
/// Logits for the whole dataset, row-major [n x n_classes].
std::vector<double> predict_logits(const Classifier &model, const Dataset &ds,
                                   std::size_t batch_size = 256);
/// Throws DataError on an empty dataset.
Metrics evaluate(const Classifier &model, const Dataset &ds);

/// Plain supervised training of the (dense) model with cross-entropy.
std::vector<EvalRecord> pretrain(Classifier &model, const Dataset &train, const Dataset *val,
                                 const PretrainConfig &cfg);

/// Threshold learning until the live compressed parameter count reaches the
/// budget, then thresholds are frozen (their learning rate set to 0) and
/// recovery_epochs more epochs run on the same loss. Throws BudgetUnreachable
/// after max_budget_steps steps without reaching the budget.
RunTelemetry finetune(Classifier &model, const Dataset &train, const Dataset *val,
                      const TrainConfig &cfg);

struct StaticPlan {
  std::size_t rank = 0;
  std::size_t params = 0;
  std::size_t budget = 0;
  std::size_t gap = 0;  // budget - params
};

/// Largest uniform rank whose total storage over compressible layers fits the
/// budget.
StaticPlan plan_static_rank(const Classifier &model, std::size_t budget);

/// Replaces compressible dense layers by hard rank-k SVD truncations (kept
/// dense when k is at or above break-even).
void apply_static_rank(Classifier &model, std::size_t rank);

/// Cross-entropy fine-tuning for exactly `steps` optimizer steps.
RunTelemetry train_steps(Classifier &model, const Dataset &train, const Dataset *val,
                         const TrainConfig &cfg, std::size_t steps);

}  // namespace softlm
