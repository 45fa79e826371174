// SPDX-License-Identifier: Apache-2.0
#include "softlm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "softlm/errors.hpp"

namespace softlm {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  // Shortest text that round-trips.
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

[[noreturn]] void bad_value(const std::string &key, const std::string &value, const char *want) {
  throw ConfigError("config key " + key + ": '" + value + "' is not " + want);
}

template <typename T>
T parse_int(const std::string &key, const std::string &value) {
  T out{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) {
    bad_value(key, value, "a non-negative integer");
  }
  return out;
}

double parse_double(const std::string &key, const std::string &value) {
  char *end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size()) bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string &value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Key {
  std::function<std::string(const RunConfig &)> get;
  std::function<void(RunConfig &, const std::string &, const std::string &)> set;
};

Key size_key(std::size_t RunConfig::*m) {
  return {[m](const RunConfig &c) { return std::to_string(c.*m); },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            c.*m = parse_int<std::size_t>(k, v);
          }};
}
Key u64_key(std::uint64_t RunConfig::*m) {
  return {[m](const RunConfig &c) { return std::to_string(c.*m); },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            c.*m = parse_int<std::uint64_t>(k, v);
          }};
}
Key double_key(double RunConfig::*m) {
  return {[m](const RunConfig &c) { return fmt_double(c.*m); },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            c.*m = parse_double(k, v);
          }};
}
Key bool_key(bool RunConfig::*m) {
  return {[m](const RunConfig &c) { return std::string(c.*m ? "true" : "false"); },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            c.*m = parse_bool(k, v);
          }};
}
Key string_key(std::string RunConfig::*m) {
  return {[m](const RunConfig &c) { return c.*m; },
          [m](RunConfig &c, const std::string &, const std::string &v) { c.*m = v; }};
}
Key sizes_key(std::vector<std::size_t> RunConfig::*m) {
  return {[m](const RunConfig &c) {
            std::string s;
            for (auto x : c.*m) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
          },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            std::vector<std::size_t> out;
            for (const auto &item : split_list(v)) out.push_back(parse_int<std::size_t>(k, item));
            c.*m = out;
          }};
}
Key doubles_key(std::vector<double> RunConfig::*m) {
  return {[m](const RunConfig &c) {
            std::string s;
            for (auto x : c.*m) s += (s.empty() ? "" : ",") + fmt_double(x);
            return s;
          },
          [m](RunConfig &c, const std::string &k, const std::string &v) {
            std::vector<double> out;
            for (const auto &item : split_list(v)) out.push_back(parse_double(k, item));
            c.*m = out;
          }};
}

const std::map<std::string, Key> &key_table() {
  static const std::map<std::string, Key> table = {
      {"model.kind", string_key(&RunConfig::model_kind)},
      {"model.n_blocks", size_key(&RunConfig::n_blocks)},
      {"model.d_model", size_key(&RunConfig::d_model)},
      {"model.n_heads", size_key(&RunConfig::n_heads)},
      {"model.d_ff", size_key(&RunConfig::d_ff)},
      {"model.pre_norm", bool_key(&RunConfig::pre_norm)},
      {"model.mlp_hidden", sizes_key(&RunConfig::mlp_hidden)},
      {"model.compress", string_key(&RunConfig::compress)},
      {"data.source", string_key(&RunConfig::data_source)},
      {"data.n", size_key(&RunConfig::data_n)},
      {"data.seq_len", size_key(&RunConfig::seq_len)},
      {"data.vocab_size", size_key(&RunConfig::vocab_size)},
      {"data.n_classes", size_key(&RunConfig::n_classes)},
      {"data.difficulty", double_key(&RunConfig::difficulty)},
      {"data.pairs_per_class", size_key(&RunConfig::pairs_per_class)},
      {"data.val_fraction", double_key(&RunConfig::val_fraction)},
      {"data.path", string_key(&RunConfig::data_path)},
      {"data.text_column", string_key(&RunConfig::text_column)},
      {"data.label_column", string_key(&RunConfig::label_column)},
      {"data.vocab_cap", size_key(&RunConfig::vocab_cap)},
      {"data.max_len", size_key(&RunConfig::max_len)},
      {"train.seed", u64_key(&RunConfig::seed)},
      {"train.pretrain_epochs", size_key(&RunConfig::pretrain_epochs)},
      {"train.pretrain_lr", double_key(&RunConfig::pretrain_lr)},
      {"train.cr", double_key(&RunConfig::cr)},
      {"train.gamma", double_key(&RunConfig::gamma)},
      {"train.variant", string_key(&RunConfig::variant)},
      {"train.base_lr", double_key(&RunConfig::base_lr)},
      {"train.threshold_lr", double_key(&RunConfig::threshold_lr)},
      {"train.weight_decay", double_key(&RunConfig::weight_decay)},
      {"train.batch_size", size_key(&RunConfig::batch_size)},
      {"train.recovery_epochs", size_key(&RunConfig::recovery_epochs)},
      {"train.max_budget_steps", size_key(&RunConfig::max_budget_steps)},
      {"train.sharpness", double_key(&RunConfig::sharpness)},
      {"train.eval_every", size_key(&RunConfig::eval_every)},
      {"train.rank_eps", double_key(&RunConfig::rank_eps)},
      {"sweep.seeds", size_key(&RunConfig::sweep_seeds)},
      {"sweep.crs", doubles_key(&RunConfig::sweep_crs)},
      {"report.telemetry_sigmas", bool_key(&RunConfig::telemetry_sigmas)},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string &key, const std::string &value) {
  const auto &table = key_table();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

void RunConfig::apply_text(const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> unknown;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!key_table().count(key)) {
      unknown.push_back(key);
      continue;
    }
    set(key, value);
  }
  if (!unknown.empty()) {
    std::string names;
    for (const auto &k : unknown) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError(origin + ": unknown config keys: " + names);
  }
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto &[k, key] : key_table()) out[k] = key.get(*this);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto &[k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto &[k, key] : key_table()) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  if (model_kind != "encoder" && model_kind != "mlp") {
    throw ConfigError("model.kind must be encoder or mlp, got '" + model_kind + "'");
  }
  if (data_source != "synthetic" && data_source != "csv" && data_source != "dataset") {
    throw ConfigError("data.source must be synthetic, csv or dataset, got '" + data_source + "'");
  }
  if (data_source != "synthetic" && data_path.empty()) {
    throw ConfigError("data.path is required for data.source = " + data_source);
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must lie in (0, 1)");
  }
  if (!(cr >= 0.0 && cr < 1.0)) throw ConfigError("train.cr must lie in [0, 1)");
  if (!(gamma >= 0.0)) throw ConfigError("train.gamma must be non-negative");
  parse_variant(variant);
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(sharpness > 0.0)) throw ConfigError("train.sharpness must be positive");
  if (!(base_lr >= 0.0 && threshold_lr >= 0.0 && pretrain_lr >= 0.0 && weight_decay >= 0.0)) {
    throw ConfigError("learning rates and weight decay must be non-negative");
  }
  if (!(rank_eps >= 0.0)) throw ConfigError("train.rank_eps must be non-negative");
  for (double c : sweep_crs) {
    if (!(c > 0.0 && c < 1.0)) {
      throw ConfigError("sweep.crs entries must lie in (0, 1), got " + fmt_double(c));
    }
  }
  if (model_kind == "encoder") {
    EncoderConfig ec{n_blocks, d_model, n_heads, d_ff, 2, 1, 2, pre_norm};
    ec.validate();
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.seed = seed;
  t.cr = cr;
  t.gamma = gamma;
  t.variant = parse_variant(variant);
  t.base_lr = base_lr;
  t.threshold_lr = threshold_lr;
  t.weight_decay = weight_decay;
  t.batch_size = batch_size;
  t.recovery_epochs = recovery_epochs;
  t.max_budget_steps = max_budget_steps;
  t.eval_every = eval_every;
  t.rank_eps = rank_eps;
  t.record_sigmas = true;
  return t;
}

PretrainConfig RunConfig::pretrain_config() const {
  return {seed, pretrain_epochs, pretrain_lr, weight_decay, batch_size};
}

RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) {
      throw ConfigError(path.string() + ": manifest has no \"config\" object");
    }
    std::vector<std::string> unknown;
    for (const auto &[k, v] : j["config"].items()) {
      if (!v.is_string()) throw ConfigError(path.string() + ": config value for " + k + " is not a string");
      try {
        cfg.set(k, v.get<std::string>());
      } catch (const ConfigError &e) {
        if (std::string(e.what()).rfind("unknown config key", 0) != 0) throw;
        unknown.push_back(k);
      }
    }
    if (!unknown.empty()) {
      std::string names;
      for (const auto &k : unknown) names += (names.empty() ? "" : ", ") + k;
      throw ConfigError(path.string() + ": unknown config keys: " + names);
    }
  } else {
    cfg.apply_text(ss.str(), path.string());
  }
  cfg.validate();
  return cfg;
}

std::string run_id(const RunConfig &cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : cfg.to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunData prepare_data(const RunConfig &cfg) {
  Dataset all;
  if (cfg.data_source == "synthetic") {
    SynthConfig sc;
    sc.seed = cfg.seed;
    sc.n = cfg.data_n;
    sc.seq_len = cfg.seq_len;
    sc.vocab_size = cfg.vocab_size;
    sc.n_classes = cfg.n_classes;
    sc.difficulty = cfg.difficulty;
    sc.pairs_per_class = cfg.pairs_per_class;
    all = synth_generate(sc);
  } else if (cfg.data_source == "csv") {
    all = csv_load(cfg.data_path, cfg.text_column, cfg.label_column, cfg.vocab_cap);
  } else {
    all = load_dataset(cfg.data_path);
  }
  if (all.size() < 2) throw DataError("dataset needs at least 2 examples");
  for (auto &ex : all.examples) {
    if (ex.ids.size() > cfg.max_len) ex.ids.resize(cfg.max_len);
  }
  all.validate();
  RunData out;
  auto [train, val] = split_dataset(all, cfg.val_fraction, cfg.seed);
  if (train.empty() || val.empty()) {
    throw DataError("train/validation split of " + std::to_string(all.size()) +
                    " examples leaves an empty side");
  }
  out.train = std::move(train);
  out.val = std::move(val);
  for (const auto &ex : all.examples) out.max_seq_len = std::max(out.max_seq_len, ex.ids.size());
  return out;
}

std::unique_ptr<Classifier> build_model(const RunConfig &cfg, const RunData &data) {
  std::mt19937_64 rng(cfg.seed);
  if (cfg.model_kind == "mlp") {
    MlpConfig mc{data.train.vocab_size, cfg.mlp_hidden, data.train.n_classes};
    return std::make_unique<Mlp>(mc, rng);
  }
  EncoderConfig ec{cfg.n_blocks, cfg.d_model,          cfg.n_heads,           cfg.d_ff,
                   data.train.vocab_size, data.max_seq_len, data.train.n_classes, cfg.pre_norm};
  return std::make_unique<Encoder>(ec, rng);
}

}  // namespace softlm
