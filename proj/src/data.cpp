// SPDX-License-Identifier: Apache-2.0
#include "softlm/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "softlm/errors.hpp"

namespace softlm {

void Dataset::validate() const {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto &ex = examples[i];
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) {
      throw DataError("example " + std::to_string(i) + ": label " + std::to_string(ex.label) +
                      " outside [0, " + std::to_string(n_classes) + ")");
    }
    for (int id : ex.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw DataError("example " + std::to_string(i) + ": token id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(vocab_size));
      }
    }
  }
}

// --- synthetic ---------------------------------------------------------------

namespace {

int marker_a(std::size_t c) { return kFirstContentId + 2 * static_cast<int>(c); }
int marker_b(std::size_t c) { return kFirstContentId + 2 * static_cast<int>(c) + 1; }

struct Unit {
  int cls;  // -1 for filler
  int first, second;
};

bool adjacent_same_class(const std::vector<Unit> &units) {
  for (std::size_t i = 1; i < units.size(); ++i) {
    if (units[i].cls >= 0 && units[i].cls == units[i - 1].cls) return true;
  }
  return false;
}

}  // namespace

int synth_reference_label(std::span<const int> ids, std::size_t n_classes) {
  std::vector<int> votes(n_classes, 0);
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
    const int a = ids[i] - kFirstContentId;
    if (a < 0 || a % 2 != 0) continue;
    const auto c = static_cast<std::size_t>(a / 2);
    if (c < n_classes && ids[i + 1] == marker_b(c)) ++votes[c];
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

Dataset synth_generate(const SynthConfig &cfg) {
  if (cfg.n_classes < 2) throw DataError("synthetic task needs at least 2 classes");
  const std::size_t markers = 2 * cfg.n_classes;
  if (cfg.vocab_size < kFirstContentId + markers + 1) {
    throw DataError("synthetic vocab_size " + std::to_string(cfg.vocab_size) +
                    " too small for " + std::to_string(cfg.n_classes) +
                    " classes (need at least " +
                    std::to_string(kFirstContentId + markers + 1) + ")");
  }
  const std::size_t marker_tokens = markers * cfg.pairs_per_class;
  if (cfg.seq_len < marker_tokens) {
    throw DataError("synthetic seq_len " + std::to_string(cfg.seq_len) + " cannot hold " +
                    std::to_string(marker_tokens) + " marker tokens");
  }
  if (!(cfg.difficulty >= 0.0 && cfg.difficulty <= 1.0)) {
    throw DataError("synthetic difficulty must lie in [0, 1]");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const int first_filler = kFirstContentId + static_cast<int>(markers);
  std::uniform_int_distribution<int> filler(first_filler, static_cast<int>(cfg.vocab_size) - 1);
  const std::size_t n_fill = cfg.seq_len - marker_tokens;

  Dataset ds;
  ds.vocab_size = cfg.vocab_size;
  ds.n_classes = cfg.n_classes;
  ds.split = "all";
  ds.examples.reserve(cfg.n);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const auto label = i % cfg.n_classes;
    std::vector<Unit> units;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
      const double p_ordered = c == label ? 1.0 - cfg.difficulty / 2.0 : cfg.difficulty / 2.0;
      for (std::size_t k = 0; k < cfg.pairs_per_class; ++k) {
        const bool ordered = coin(rng) < p_ordered;
        units.push_back({static_cast<int>(c), ordered ? marker_a(c) : marker_b(c),
                         ordered ? marker_b(c) : marker_a(c)});
      }
    }
    for (std::size_t k = 0; k < n_fill; ++k) units.push_back({-1, filler(rng), -1});
    // "b a" followed by "b a" of the same class would create a stray "a b".
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::shuffle(units.begin(), units.end(), rng);
      if (!adjacent_same_class(units)) break;
    }
    Example ex;
    ex.label = static_cast<int>(label);
    for (const auto &u : units) {
      ex.ids.push_back(u.first);
      if (u.second >= 0) ex.ids.push_back(u.second);
    }
    agree += synth_reference_label(ex.ids, cfg.n_classes) == ex.label ? 1 : 0;
    ds.examples.push_back(std::move(ex));
  }
  std::shuffle(ds.examples.begin(), ds.examples.end(), rng);
  if (cfg.n > 0) ds.reference_accuracy = static_cast<double>(agree) / static_cast<double>(cfg.n);
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset &all, double val_fraction,
                                          std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw DataError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::llround(static_cast<double>(all.size()) * val_fraction));
  Dataset train, val;
  for (auto *d : {&train, &val}) {
    d->vocab_size = all.vocab_size;
    d->n_classes = all.n_classes;
    d->reference_accuracy.reset();
  }
  train.split = "train";
  val.split = "val";
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).examples.push_back(all.examples[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

// --- CSV -----------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(std::istream &in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  char ch;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(ch)) {
    any = true;
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started && field.empty()) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (in.peek() == '\n') in.get(ch);
      end_row();
      any = false;
    } else if (ch == '\n') {
      end_row();
      any = false;
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (any) end_row();
  return rows;
}

namespace {

std::vector<std::string> tokenize(const std::string &text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<int> parse_label_int(const std::string &s) {
  if (s.empty()) return std::nullopt;
  int v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') return std::nullopt;
    v = v * 10 + (ch - '0');
    if (v > 1'000'000) return std::nullopt;
  }
  return v;
}

}  // namespace

Dataset csv_load(const std::filesystem::path &path, const std::string &text_column,
                 const std::string &label_column, std::size_t vocab_cap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open csv file " + path.string());
  auto rows = parse_csv(in);
  if (rows.empty()) throw DataError("csv file " + path.string() + " is empty");
  const auto &header = rows.front();
  auto column = [&](const std::string &name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw DataError("csv file " + path.string() + " has no column named '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto text_idx = column(text_column);
  const auto label_idx = column(label_column);

  std::vector<std::vector<std::string>> texts;
  std::vector<std::string> labels;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto &row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    if (row.size() <= std::max(text_idx, label_idx)) {
      throw DataError("csv row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    texts.push_back(tokenize(row[text_idx]));
    labels.push_back(row[label_idx]);
  }
  if (texts.empty()) throw DataError("csv file " + path.string() + " has no data rows");

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto &t : texts)
    for (const auto &tok : t) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > vocab_cap) ranked.resize(vocab_cap);
  std::unordered_map<std::string, int> vocab;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    vocab.emplace(ranked[i].first, kFirstContentId + static_cast<int>(i));
  }

  bool numeric = true;
  for (const auto &l : labels) numeric = numeric && parse_label_int(l).has_value();
  std::map<std::string, int> label_ids;
  if (!numeric) {
    for (const auto &l : labels) label_ids.emplace(l, 0);
    int next = 0;
    for (auto &[name, id] : label_ids) id = next++;
  }

  Dataset ds;
  ds.vocab_size = kFirstContentId + ranked.size();
  ds.split = "all";
  int max_label = -1;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Example ex;
    for (const auto &tok : texts[i]) {
      auto it = vocab.find(tok);
      ex.ids.push_back(it == vocab.end() ? kUnkId : it->second);
    }
    if (ex.ids.empty()) ex.ids.push_back(kUnkId);
    ex.label = numeric ? *parse_label_int(labels[i]) : label_ids.at(labels[i]);
    max_label = std::max(max_label, ex.label);
    ds.examples.push_back(std::move(ex));
  }
  ds.n_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
  return ds;
}

// --- interchange -----------------------------------------------------------------

void write_dataset(const Dataset &ds, std::ostream &out) {
  out << "# softlm-dataset v1 vocab_size=" << ds.vocab_size << " n_classes=" << ds.n_classes
      << " split=" << ds.split << '\n';
  for (const auto &ex : ds.examples) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      if (i) out << ' ';
      out << ex.ids[i];
    }
    out << '\n';
  }
}

Dataset read_dataset(std::istream &in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file is empty");
  std::istringstream hs(line);
  std::string hash, magic, version;
  hs >> hash >> magic >> version;
  if (hash != "#" || magic != "softlm-dataset") {
    throw DataError("not a softlm dataset file (header '" + line + "')");
  }
  if (version != "v1") throw DataError("unsupported dataset format version '" + version + "'");
  Dataset ds;
  std::string kv;
  while (hs >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("malformed dataset header field '" + kv + "'");
    const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "vocab_size") ds.vocab_size = std::stoul(value);
    else if (key == "n_classes") ds.n_classes = std::stoul(value);
    else if (key == "split") ds.split = value;
    else throw DataError("unknown dataset header field '" + key + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("dataset line " + std::to_string(lineno) + " has no tab separator");
    }
    Example ex;
    try {
      ex.label = std::stoi(line.substr(0, tab));
    } catch (const std::exception &) {
      throw DataError("dataset line " + std::to_string(lineno) + " has a malformed label");
    }
    std::istringstream ids(line.substr(tab + 1));
    int id;
    while (ids >> id) ex.ids.push_back(id);
    if (!ids.eof()) throw DataError("dataset line " + std::to_string(lineno) + " has a malformed id");
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset &ds, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  write_dataset(ds, out);
}

Dataset load_dataset(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return read_dataset(in);
}

// --- batching ----------------------------------------------------------------------

Batch make_batch(const Dataset &ds, std::span<const std::size_t> indices) {
  Batch b;
  b.batch = indices.size();
  for (auto i : indices) b.seq_len = std::max(b.seq_len, ds.examples.at(i).ids.size());
  b.ids.assign(b.batch * b.seq_len, kPadId);
  b.mask.assign(b.batch * b.seq_len, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto &ex = ds.examples[indices[r]];
    for (std::size_t l = 0; l < ex.ids.size(); ++l) {
      b.ids[r * b.seq_len + l] = ex.ids[l];
      b.mask[r * b.seq_len + l] = 1.0;
    }
    b.labels.push_back(ex.label);
  }
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::mt19937_64 *rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace softlm
