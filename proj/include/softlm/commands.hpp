// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "softlm/config.hpp"
#include "softlm/report.hpp"

namespace softlm {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitBudget = 3,
  kExitData = 4,
  kExitCheckpoint = 5,
};

/// Maps an exception thrown by a command to its exit status.
int exit_code_for(const std::exception &e);

/// Data plus the dense model trained on it, shared by runs that differ only
/// in compression settings.
struct PreparedRun {
  RunData data;
  std::unique_ptr<Classifier> pretrained;
  std::vector<EvalRecord> pretrain_evals;
};

PreparedRun prepare_run(const RunConfig &cfg);

struct CompressResult {
  std::string run_id;
  RunTelemetry telemetry;
  std::unique_ptr<Classifier> frozen;  // after fine-tuning, before merge
  std::unique_ptr<Classifier> merged;  // compact inference form
  Metrics frozen_metrics, merged_metrics;
  bool identical_predictions = false;
  /// ||y_merged - y_frozen|| / ||y_frozen|| over the validation logits.
  double output_rel_diff = 0.0;
  CompressionReport report;
};

/// Decompose -> fine-tune with budget freeze -> merge, starting from a copy
/// of prepared.pretrained. Writes all artifacts to out_dir unless it is empty.
CompressResult run_compress(const RunConfig &cfg, const PreparedRun &prepared,
                            const std::filesystem::path &out_dir);

/// Writes the ranks CSV for a checkpoint and returns the JSON summary.
nlohmann::json cmd_inspect(const std::filesystem::path &checkpoint, std::ostream &csv);

/// Evaluates a checkpoint on an interchange-format dataset.
nlohmann::json cmd_eval(const std::filesystem::path &checkpoint,
                        const std::filesystem::path &data);

/// Converts every decomposed layer of a checkpoint to its compact form.
void cmd_merge(const std::filesystem::path &in, const std::filesystem::path &out,
               double eps = kRankEps);

struct SweepRow {
  std::uint64_t seed = 0;
  double cr_requested = 0.0;
  std::string status;  // "ok" or the failure message
  double cr_achieved = 0.0;
  Metrics metrics;
  std::size_t params_merged = 0;
  double mac_ratio = 0.0;
};

/// One compress run per (seed, CR); child seeds are cfg.seed + replicate
/// index. Failures are recorded and the sweep continues. One line per
/// finished run goes to `progress` when given.
std::vector<SweepRow> cmd_sweep(const RunConfig &cfg, const std::filesystem::path &out_dir,
                                std::ostream *progress = nullptr);

void write_sweep_csv(const std::vector<SweepRow> &rows, std::ostream &out);
/// Mean metrics per requested CR over successful runs.
void write_sweep_trend_csv(const std::vector<SweepRow> &rows, std::ostream &out);

}  // namespace softlm
