// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "softlm/checkpoint.hpp"
#include "softlm/commands.hpp"
#include "softlm/errors.hpp"

namespace fs = std::filesystem;
using namespace softlm;

namespace {

struct Options {
  std::string config, checkpoint, data, out_dir;
  std::optional<std::uint64_t> seed;
  std::string cr;
};

RunConfig resolve_config(const Options &o) {
  auto cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.cr.empty()) {
    if (o.cr.find(',') != std::string::npos) {
      cfg.set("sweep.crs", o.cr);
    } else {
      cfg.set("train.cr", o.cr);
      cfg.set("sweep.crs", o.cr);
    }
  }
  cfg.validate();
  return cfg;
}

void write_json(const nlohmann::json &j, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

int run_compress_cmd(const Options &o) {
  const auto cfg = resolve_config(o);
  const fs::path out = o.out_dir.empty() ? fs::path("runs") / run_id(cfg) : fs::path(o.out_dir);
  std::cerr << "run " << run_id(cfg) << " -> " << out.string() << "\n";
  const auto prepared = prepare_run(cfg);
  if (!prepared.pretrain_evals.empty()) {
    std::cerr << "pretrained accuracy " << prepared.pretrain_evals.back().metrics.accuracy << "\n";
  }
  const auto res = run_compress(cfg, prepared, out);
  std::cout << "freeze_step " << res.telemetry.freeze_step << "\n"
            << "cr_at_freeze " << res.telemetry.achieved_cr << "\n"
            << "achieved_cr " << res.report.compression_ratio() << "\n"
            << "mac_ratio " << res.report.mac_ratio() << "\n"
            << "accuracy " << res.merged_metrics.accuracy << "\n"
            << "f1_macro " << res.merged_metrics.f1_macro << "\n"
            << "mcc " << res.merged_metrics.mcc << "\n";
  return kExitOk;
}

int run_inspect_cmd(const Options &o) {
  if (o.out_dir.empty()) {
    const auto j = cmd_inspect(o.checkpoint, std::cout);
    std::cerr << "compression_ratio " << j["compression_ratio"].get<double>() << "\n";
    return kExitOk;
  }
  fs::create_directories(o.out_dir);
  std::ofstream csv(fs::path(o.out_dir) / "ranks.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write ranks.csv in " + o.out_dir);
  const auto j = cmd_inspect(o.checkpoint, csv);
  write_json(j, fs::path(o.out_dir) / "inspect.json");
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_eval_cmd(const Options &o) {
  const auto j = cmd_eval(o.checkpoint, o.data);
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    write_json(j, fs::path(o.out_dir) / "eval.json");
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_sweep_cmd(const Options &o) {
  const auto cfg = resolve_config(o);
  const fs::path out = o.out_dir.empty() ? fs::path("runs") / ("sweep_" + run_id(cfg))
                                         : fs::path(o.out_dir);
  const auto rows = cmd_sweep(cfg, out, &std::cerr);
  write_sweep_csv(rows, std::cout);
  std::size_t failed = 0;
  for (const auto &r : rows) failed += r.status != "ok";
  if (failed) std::cerr << failed << " of " << rows.size() << " runs failed\n";
  return kExitOk;
}

int run_merge_cmd(const Options &o) {
  if (o.out_dir.empty()) throw ConfigError("merge needs --out-dir");
  fs::create_directories(o.out_dir);
  const auto out = fs::path(o.out_dir) / "model.slm";
  cmd_merge(o.checkpoint, out);
  std::cout << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"softlm: adaptive low-rank compression of linear layers"};
  app.require_subcommand(1);
  Options o;

  auto *compress = app.add_subcommand("compress", "decompose, fine-tune to a budget, merge");
  compress->add_option("--config", o.config, "config file (key = value) or run manifest (.json)");
  compress->add_option("--out-dir", o.out_dir, "output directory");
  compress->add_option("--seed", o.seed, "override train.seed");
  compress->add_option("--cr", o.cr, "override train.cr");

  auto *inspect = app.add_subcommand("inspect", "per-layer rank, parameter and MAC table");
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  inspect->add_option("--out-dir", o.out_dir, "write ranks.csv and inspect.json here");

  auto *eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", o.data, "dataset in interchange format")->required();
  eval->add_option("--out-dir", o.out_dir, "write eval.json here");

  auto *sweep = app.add_subcommand("sweep", "compress runs over seeds and compression ratios");
  sweep->add_option("--config", o.config, "config file or run manifest");
  sweep->add_option("--out-dir", o.out_dir, "output directory");
  sweep->add_option("--seed", o.seed, "override train.seed (base of child seeds)");
  sweep->add_option("--cr", o.cr, "comma-separated compression ratios");

  auto *merge = app.add_subcommand("merge", "merge a frozen checkpoint into its compact form");
  merge->add_option("--checkpoint", o.checkpoint, "frozen checkpoint")->required();
  merge->add_option("--out-dir", o.out_dir, "output directory (writes model.slm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (compress->parsed()) return run_compress_cmd(o);
    if (inspect->parsed()) return run_inspect_cmd(o);
    if (eval->parsed()) return run_eval_cmd(o);
    if (sweep->parsed()) return run_sweep_cmd(o);
    if (merge->parsed()) return run_merge_cmd(o);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitFailure;
}
