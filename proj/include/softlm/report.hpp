// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "softlm/models.hpp"
#include "softlm/trainer.hpp"

// Every CSV report starts with "# schema: <name>/<version>" and every JSON
// report carries a "schema" field of the same form. Readers reject other
// versions.

namespace softlm {

inline constexpr const char *kRanksSchema = "softlm.ranks/1";
inline constexpr const char *kProfileSchema = "softlm.rank_profile/1";
inline constexpr const char *kLossCurveSchema = "softlm.loss_curve/1";
inline constexpr const char *kTelemetrySchema = "softlm.telemetry/1";
inline constexpr const char *kReportSchema = "softlm.report/1";
inline constexpr const char *kManifestSchema = "softlm.manifest/1";
inline constexpr const char *kSweepSchema = "softlm.sweep/1";
inline constexpr const char *kSweepTrendSchema = "softlm.sweep_trend/1";
inline constexpr const char *kEvalSchema = "softlm.eval/1";

struct LayerRow {
  std::string path;
  std::string kind;
  std::size_t m = 0, n = 0, rank = 0;
  double break_even = 0.0;
  std::size_t params_dense = 0, params_merged = 0;
  std::size_t macs_dense = 0, macs_merged = 0;
};

/// Per-layer accounting over the compressible layers of a model.
struct CompressionReport {
  std::vector<LayerRow> rows;
  LayerRow total;  // column sums, path "total"
  std::size_t seq_len = 0;

  double compression_ratio() const;
  double mac_ratio() const;
};

CompressionReport build_report(const Classifier &model, double eps = kRankEps);

void write_ranks_csv(const CompressionReport &report, std::ostream &out);
/// Throws DataError on a missing or unknown schema line or malformed rows.
CompressionReport read_ranks_csv(std::istream &in);

/// Rank pivot: one row per block, one column per slot (encoder), or one row
/// per layer (MLP).
void write_rank_profile_csv(const CompressionReport &report, std::ostream &out);

void write_loss_curve_csv(const RunTelemetry &tel, std::ostream &out);

/// One JSON object per line: a header, then "step" and "eval" records.
void write_telemetry_jsonl(const RunTelemetry &tel, std::ostream &out, bool with_sigmas);

nlohmann::json report_to_json(const CompressionReport &report);

/// Throws DataError unless j["schema"] equals `expected`.
void require_schema(const nlohmann::json &j, const std::string &expected);
/// Reads the leading "# schema:" line of a CSV stream and checks it.
void require_csv_schema(std::istream &in, const std::string &expected);

/// Minimal CSV field quoting.
std::string csv_field(const std::string &s);

}  // namespace softlm
