// SPDX-License-Identifier: Apache-2.0
#include "softlm/commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "softlm/checkpoint.hpp"
#include "softlm/errors.hpp"

namespace softlm {

int exit_code_for(const std::exception &e) {
  if (dynamic_cast<const ConfigError *>(&e)) return kExitConfig;
  if (dynamic_cast<const BudgetUnreachable *>(&e)) return kExitBudget;
  if (dynamic_cast<const DataError *>(&e)) return kExitData;
  if (dynamic_cast<const CheckpointError *>(&e)) return kExitCheckpoint;
  return kExitFailure;
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json metrics_json(const Metrics &m) {
  return {{"accuracy", m.accuracy}, {"f1_macro", m.f1_macro}, {"mcc", m.mcc}};
}

std::ofstream open_out(const std::filesystem::path &p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

std::string fmt_cr(double cr) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << cr;
  return s.str();
}

}  // namespace

PreparedRun prepare_run(const RunConfig &cfg) {
  cfg.validate();
  PreparedRun out;
  out.data = prepare_data(cfg);
  out.pretrained = build_model(cfg, out.data);
  if (cfg.pretrain_epochs > 0) {
    out.pretrain_evals = pretrain(*out.pretrained, out.data.train, &out.data.val,
                                  cfg.pretrain_config());
  }
  return out;
}

CompressResult run_compress(const RunConfig &cfg, const PreparedRun &prepared,
                            const std::filesystem::path &out_dir) {
  cfg.validate();
  const auto started = utc_now();
  CompressResult res;
  res.run_id = run_id(cfg);
  const auto &val = prepared.data.val;

  auto model = prepared.pretrained->clone();
  replace_linears(*model, LayerFilter{cfg.compress}, cfg.sharpness);
  auto tcfg = cfg.train_config();
  res.telemetry = finetune(*model, prepared.data.train, &val, tcfg);
  // Match what frozen.slm holds, so merging the file reproduces model.slm.
  round_to_float32(*model);

  res.frozen = std::move(model);
  res.merged = res.frozen->clone();
  compact_model(*res.merged, cfg.rank_eps);

  const auto y_frozen = predict_logits(*res.frozen, val);
  const auto y_merged = predict_logits(*res.merged, val);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y_frozen.size(); ++i) {
    num += (y_merged[i] - y_frozen[i]) * (y_merged[i] - y_frozen[i]);
    den += y_frozen[i] * y_frozen[i];
  }
  res.output_rel_diff = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  res.identical_predictions = predict(*res.frozen, val) == predict(*res.merged, val);
  res.frozen_metrics = evaluate(*res.frozen, val);
  res.merged_metrics = evaluate(*res.merged, val);
  res.report = build_report(*res.merged, cfg.rank_eps);

  if (out_dir.empty()) return res;
  std::filesystem::create_directories(out_dir);
  save_checkpoint(*res.frozen, out_dir / "frozen.slm");
  save_checkpoint(*res.merged, out_dir / "model.slm");
  save_dataset(val, out_dir / "val.tsv");
  {
    auto out = open_out(out_dir / "telemetry.jsonl");
    write_telemetry_jsonl(res.telemetry, out, cfg.telemetry_sigmas);
  }
  {
    auto out = open_out(out_dir / "loss_curve.csv");
    write_loss_curve_csv(res.telemetry, out);
  }
  {
    auto out = open_out(out_dir / "ranks.csv");
    write_ranks_csv(res.report, out);
  }
  {
    auto out = open_out(out_dir / "rank_profile.csv");
    write_rank_profile_csv(res.report, out);
  }

  nlohmann::json report = {
      {"schema", kReportSchema},
      {"run_id", res.run_id},
      {"model", res.merged->topology()},
      {"requested_cr", cfg.cr},
      {"dense_params", res.telemetry.dense_params},
      {"target_params", res.telemetry.target_params},
      {"freeze_step", res.telemetry.freeze_step},
      {"params_at_freeze", res.telemetry.params_at_freeze},
      {"cr_at_freeze", res.telemetry.achieved_cr},
      {"total_steps", res.telemetry.total_steps},
      {"achieved_cr", res.report.compression_ratio()},
      {"compression", report_to_json(res.report)},
      {"metrics_frozen", metrics_json(res.frozen_metrics)},
      {"metrics_merged", metrics_json(res.merged_metrics)},
      {"identical_predictions", res.identical_predictions},
      {"output_rel_diff", res.output_rel_diff}};
  if (!prepared.pretrain_evals.empty()) {
    report["metrics_pretrained"] = metrics_json(prepared.pretrain_evals.back().metrics);
  }
  {
    auto out = open_out(out_dir / "report.json");
    out << report.dump(2) << "\n";
  }

  nlohmann::json ranks = nlohmann::json::object();
  for (const auto &r : res.report.rows) ranks[r.path] = r.rank;
  nlohmann::json manifest = {{"schema", kManifestSchema},
                             {"run_id", res.run_id},
                             {"config", cfg.to_map()},
                             {"seed", cfg.seed},
                             {"started_at", started},
                             {"finished_at", utc_now()},
                             {"achieved_cr", res.report.compression_ratio()},
                             {"final_metric", metrics_json(res.merged_metrics)},
                             {"ranks", ranks}};
  auto out = open_out(out_dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  return res;
}

nlohmann::json cmd_inspect(const std::filesystem::path &checkpoint, std::ostream &csv) {
  const auto model = load_checkpoint(checkpoint);
  const auto report = build_report(*model);
  write_ranks_csv(report, csv);
  auto j = report_to_json(report);
  j["schema"] = kReportSchema;
  j["model"] = model->topology();
  return j;
}

nlohmann::json cmd_eval(const std::filesystem::path &checkpoint,
                        const std::filesystem::path &data) {
  const auto model = load_checkpoint(checkpoint);
  const auto ds = load_dataset(data);
  if (ds.empty()) throw DataError("evaluation set " + data.string() + " is empty");
  if (ds.vocab_size > model->vocab_size() || ds.n_classes != model->n_classes()) {
    throw DataError("dataset shape (vocab " + std::to_string(ds.vocab_size) + ", classes " +
                    std::to_string(ds.n_classes) + ") does not match checkpoint (vocab " +
                    std::to_string(model->vocab_size()) + ", classes " +
                    std::to_string(model->n_classes()) + ")");
  }
  const auto m = evaluate(*model, ds);
  return {{"schema", kEvalSchema},
          {"checkpoint", checkpoint.string()},
          {"data", data.string()},
          {"n", ds.size()},
          {"accuracy", m.accuracy},
          {"f1_macro", m.f1_macro},
          {"mcc", m.mcc}};
}

void cmd_merge(const std::filesystem::path &in, const std::filesystem::path &out, double eps) {
  auto model = load_checkpoint(in);
  if (decomposed_layers(*model).empty()) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          in.string() + " has no decomposed layers to merge");
  }
  compact_model(*model, eps);
  save_checkpoint(*model, out);
}

std::vector<SweepRow> cmd_sweep(const RunConfig &cfg, const std::filesystem::path &out_dir,
                                std::ostream *progress) {
  cfg.validate();
  if (cfg.sweep_crs.empty()) throw ConfigError("sweep.crs is empty");
  std::vector<SweepRow> rows;
  for (std::size_t rep = 0; rep < cfg.sweep_seeds; ++rep) {
    RunConfig child = cfg;
    child.seed = cfg.seed + rep;
    std::unique_ptr<PreparedRun> prepared;
    std::string prep_error;
    try {
      prepared = std::make_unique<PreparedRun>(prepare_run(child));
    } catch (const std::exception &e) {
      prep_error = e.what();
    }
    for (double cr : cfg.sweep_crs) {
      SweepRow row;
      row.seed = child.seed;
      row.cr_requested = cr;
      child.cr = cr;
      if (!prepared) {
        row.status = "failed: " + prep_error;
        rows.push_back(row);
        continue;
      }
      try {
        const auto dir = out_dir.empty() ? out_dir
                                         : out_dir / ("seed_" + std::to_string(child.seed)) /
                                               ("cr_" + fmt_cr(cr));
        const auto res = run_compress(child, *prepared, dir);
        row.status = "ok";
        row.cr_achieved = res.report.compression_ratio();
        row.metrics = res.merged_metrics;
        row.params_merged = res.report.total.params_merged;
        row.mac_ratio = res.report.mac_ratio();
      } catch (const std::exception &e) {
        row.status = std::string("failed: ") + e.what();
      }
      if (progress) {
        *progress << "seed " << row.seed << " cr " << fmt_cr(cr) << ": " << row.status;
        if (row.status == "ok") {
          *progress << " (achieved " << row.cr_achieved << ", accuracy " << row.metrics.accuracy
                    << ")";
        }
        *progress << std::endl;
      }
      rows.push_back(row);
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    {
      auto out = open_out(out_dir / "summary.csv");
      write_sweep_csv(rows, out);
    }
    auto out = open_out(out_dir / "cr_trend.csv");
    write_sweep_trend_csv(rows, out);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow> &rows, std::ostream &out) {
  out << "# schema: " << kSweepSchema << "\n";
  out << "seed,cr_requested,cr,accuracy,f1_macro,mcc,params_merged,mac_ratio,status\n";
  out.precision(10);
  for (const auto &r : rows) {
    out << r.seed << ',' << r.cr_requested << ',' << r.cr_achieved << ',' << r.metrics.accuracy
        << ',' << r.metrics.f1_macro << ',' << r.metrics.mcc << ',' << r.params_merged << ','
        << r.mac_ratio << ',' << csv_field(r.status) << "\n";
  }
}

void write_sweep_trend_csv(const std::vector<SweepRow> &rows, std::ostream &out) {
  struct Acc {
    std::size_t n = 0, failed = 0;
    double cr = 0, acc = 0, acc2 = 0, f1 = 0, mcc = 0;
  };
  std::map<double, Acc> by_cr;
  for (const auto &r : rows) {
    auto &a = by_cr[r.cr_requested];
    if (r.status != "ok") {
      ++a.failed;
      continue;
    }
    ++a.n;
    a.cr += r.cr_achieved;
    a.acc += r.metrics.accuracy;
    a.acc2 += r.metrics.accuracy * r.metrics.accuracy;
    a.f1 += r.metrics.f1_macro;
    a.mcc += r.metrics.mcc;
  }
  out << "# schema: " << kSweepTrendSchema << "\n";
  out << "cr_requested,runs,failed,cr_mean,accuracy_mean,accuracy_std,f1_macro_mean,mcc_mean\n";
  out.precision(10);
  for (const auto &[cr, a] : by_cr) {
    const double n = static_cast<double>(a.n);
    const double mean = a.n ? a.acc / n : 0.0;
    const double var = a.n > 1 ? std::max(0.0, (a.acc2 - n * mean * mean) / (n - 1)) : 0.0;
    out << cr << ',' << a.n << ',' << a.failed << ',' << (a.n ? a.cr / n : 0.0) << ',' << mean
        << ',' << std::sqrt(var) << ',' << (a.n ? a.f1 / n : 0.0) << ','
        << (a.n ? a.mcc / n : 0.0) << "\n";
  }
}

}  // namespace softlm
