// SPDX-License-Identifier: Apache-2.0
#include "softlm/report.hpp"

#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "softlm/errors.hpp"

namespace softlm {

double CompressionReport::compression_ratio() const {
  if (total.params_dense == 0) return 0.0;
  return 1.0 - static_cast<double>(total.params_merged) / static_cast<double>(total.params_dense);
}

double CompressionReport::mac_ratio() const {
  if (total.macs_dense == 0) return 0.0;
  return static_cast<double>(total.macs_merged) / static_cast<double>(total.macs_dense);
}

CompressionReport build_report(const Classifier &model, double eps) {
  CompressionReport r;
  r.seq_len = model.mac_seq_len();
  r.total.path = "total";
  r.total.kind = "";
  for (const auto &p : model.compressible_paths()) {
    const auto &l = model.registry().at(p);
    LayerRow row;
    row.path = p;
    row.kind = to_string(l.kind());
    row.m = l.out_features();
    row.n = l.in_features();
    row.rank = l.rank(eps);
    row.break_even = break_even_rank(row.m, row.n);
    row.params_dense = dense_params(row.m, row.n);
    row.params_merged = l.storage_params(eps);
    row.macs_dense = dense_macs(r.seq_len, row.m, row.n);
    row.macs_merged = r.seq_len * row.params_merged;
    r.total.m += row.m;
    r.total.n += row.n;
    r.total.rank += row.rank;
    r.total.params_dense += row.params_dense;
    r.total.params_merged += row.params_merged;
    r.total.macs_dense += row.macs_dense;
    r.total.macs_merged += row.macs_merged;
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_ranks_csv(const CompressionReport &report, std::ostream &out) {
  out << "# schema: " << kRanksSchema << "\n";
  out << "layer_path,M,N,rank,params_dense,params_merged,macs_dense,macs_merged,kind,"
         "break_even_rank\n";
  auto line = [&](const LayerRow &r) {
    std::ostringstream be;
    be.precision(6);
    be << std::fixed << r.break_even;
    out << csv_field(r.path) << ',' << r.m << ',' << r.n << ',' << r.rank << ',' << r.params_dense
        << ',' << r.params_merged << ',' << r.macs_dense << ',' << r.macs_merged << ',' << r.kind
        << ',' << (r.path == "total" ? "" : be.str()) << "\n";
  };
  for (const auto &r : report.rows) line(r);
  line(report.total);
}

void require_csv_schema(std::istream &in, const std::string &expected) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("report is empty; expected schema " + expected);
  const std::string prefix = "# schema: ";
  if (line.rfind(prefix, 0) != 0) {
    throw DataError("report has no schema line; expected " + expected);
  }
  const auto got = line.substr(prefix.size());
  if (got != expected) {
    throw DataError("unsupported report schema '" + got + "' (this reader handles " + expected + ")");
  }
}

CompressionReport read_ranks_csv(std::istream &in) {
  require_csv_schema(in, kRanksSchema);
  std::string line;
  if (!std::getline(in, line)) throw DataError("ranks report has no header");
  CompressionReport r;
  bool have_total = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 9) throw DataError("ranks report row has " + std::to_string(f.size()) + " fields");
    LayerRow row;
    try {
      row.path = f[0];
      row.m = std::stoul(f[1]);
      row.n = std::stoul(f[2]);
      row.rank = std::stoul(f[3]);
      row.params_dense = std::stoul(f[4]);
      row.params_merged = std::stoul(f[5]);
      row.macs_dense = std::stoul(f[6]);
      row.macs_merged = std::stoul(f[7]);
      row.kind = f[8];
      row.break_even = f.size() > 9 && !f[9].empty() ? std::stod(f[9]) : 0.0;
    } catch (const std::exception &) {
      throw DataError("malformed ranks report row: " + line);
    }
    if (row.path == "total") {
      r.total = row;
      have_total = true;
    } else {
      r.rows.push_back(row);
    }
  }
  if (!have_total) throw DataError("ranks report has no totals row");
  return r;
}

void write_rank_profile_csv(const CompressionReport &report, std::ostream &out) {
  out << "# schema: " << kProfileSchema << "\n";
  // Group "block/<i>/<slot>" rows into one line per block.
  std::map<std::size_t, std::map<std::string, std::size_t>> blocks;
  std::vector<const LayerRow *> other;
  for (const auto &r : report.rows) {
    if (r.path.rfind("block/", 0) == 0) {
      const auto slash = r.path.find('/', 6);
      blocks[std::stoul(r.path.substr(6, slash - 6))][r.path.substr(slash + 1)] = r.rank;
    } else {
      other.push_back(&r);
    }
  }
  if (!blocks.empty()) {
    out << "block";
    for (const auto &slot : kEncoderSlots) out << ',' << slot;
    out << ",total\n";
    for (const auto &[b, slots] : blocks) {
      out << b;
      std::size_t sum = 0;
      for (const auto &slot : kEncoderSlots) {
        auto it = slots.find(slot);
        const auto v = it == slots.end() ? 0 : it->second;
        sum += v;
        out << ',' << v;
      }
      out << ',' << sum << "\n";
    }
  } else {
    out << "layer_path,rank\n";
    for (const auto *r : other) out << csv_field(r->path) << ',' << r->rank << "\n";
  }
}

void write_loss_curve_csv(const RunTelemetry &tel, std::ostream &out) {
  out << "# schema: " << kLossCurveSchema << "\n";
  out << "step,phase,l_acc,compression_term,l_tot,live_params,frozen\n";
  out.precision(17);
  for (const auto &s : tel.steps) {
    out << s.step << ',' << s.phase << ',' << s.l_acc << ',' << s.compression_term << ','
        << s.l_tot << ',' << s.live_params << ',' << (s.frozen ? 1 : 0) << "\n";
  }
}

void write_telemetry_jsonl(const RunTelemetry &tel, std::ostream &out, bool with_sigmas) {
  nlohmann::json head = {{"schema", kTelemetrySchema},
                         {"type", "header"},
                         {"layers", tel.layer_paths},
                         {"dense_params", tel.dense_params},
                         {"target_params", tel.target_params},
                         {"initial_live_params", tel.initial_live_params},
                         {"freeze_step", tel.freeze_step},
                         {"params_at_freeze", tel.params_at_freeze},
                         {"achieved_cr", tel.achieved_cr},
                         {"total_steps", tel.total_steps}};
  out << head.dump() << "\n";
  for (const auto &s : tel.steps) {
    nlohmann::json j = {{"type", "step"},     {"step", s.step},
                        {"phase", s.phase},   {"l_acc", s.l_acc},
                        {"compression_term", s.compression_term},
                        {"l_tot", s.l_tot},   {"frozen", s.frozen},
                        {"alphas", s.alphas}, {"ranks", s.ranks},
                        {"live_params", s.live_params}};
    if (with_sigmas && !s.sigmas.empty()) j["sigmas"] = s.sigmas;
    out << j.dump() << "\n";
  }
  for (const auto &e : tel.evals) {
    nlohmann::json j = {{"type", "eval"},
                        {"phase", e.phase},
                        {"epoch", e.epoch},
                        {"step", e.step},
                        {"accuracy", e.metrics.accuracy},
                        {"f1_macro", e.metrics.f1_macro},
                        {"mcc", e.metrics.mcc}};
    out << j.dump() << "\n";
  }
}

nlohmann::json report_to_json(const CompressionReport &report) {
  auto row_json = [](const LayerRow &r) {
    return nlohmann::json{{"layer_path", r.path},       {"kind", r.kind},
                          {"M", r.m},                    {"N", r.n},
                          {"rank", r.rank},              {"break_even_rank", r.break_even},
                          {"params_dense", r.params_dense}, {"params_merged", r.params_merged},
                          {"macs_dense", r.macs_dense},  {"macs_merged", r.macs_merged}};
  };
  nlohmann::json layers = nlohmann::json::array();
  for (const auto &r : report.rows) layers.push_back(row_json(r));
  return {{"seq_len", report.seq_len},
          {"layers", layers},
          {"params_dense", report.total.params_dense},
          {"params_merged", report.total.params_merged},
          {"macs_dense", report.total.macs_dense},
          {"macs_merged", report.total.macs_merged},
          {"compression_ratio", report.compression_ratio()},
          {"mac_ratio", report.mac_ratio()}};
}

void require_schema(const nlohmann::json &j, const std::string &expected) {
  if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string()) {
    throw DataError("report has no schema field; expected " + expected);
  }
  const auto got = j["schema"].get<std::string>();
  if (got != expected) {
    throw DataError("unsupported report schema '" + got + "' (this reader handles " + expected + ")");
  }
}

}  // namespace softlm
