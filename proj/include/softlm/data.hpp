// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace softlm {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kFirstContentId = 2;

struct Example {
  std::vector<int> ids;
  int label = 0;

  bool operator==(const Example &) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t vocab_size = 0;
  std::size_t n_classes = 0;
  std::string split = "all";
  /// Accuracy of the generator's rule-based classifier, when known.
  std::optional<double> reference_accuracy;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  /// Throws DataError if an id or label is out of range.
  void validate() const;
};

// --- synthetic sequence classification -------------------------------------
//
// Class c owns two marker tokens (a_c, b_c). Every sequence carries
// `pairs_per_class` adjacent marker pairs for every class, so unigram counts
// carry no signal; only the order inside a pair does. The true class's pairs
// appear as "a b" with probability 1 - difficulty/2, every other class's as
// "a b" with probability difficulty/2 (else "b a"). Remaining positions are
// filler tokens. The reference classifier predicts the class with the most
// ordered pairs (ties -> lowest index).

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::size_t seq_len = 24;
  std::size_t vocab_size = 32;
  std::size_t n_classes = 4;
  double difficulty = 0.0;  // in [0, 1]
  std::size_t pairs_per_class = 2;
};

Dataset synth_generate(const SynthConfig &cfg);
int synth_reference_label(std::span<const int> ids, std::size_t n_classes);

/// Seeded, disjoint split. The validation part holds round(n * val_fraction).
std::pair<Dataset, Dataset> split_dataset(const Dataset &all, double val_fraction,
                                          std::uint64_t seed);

// --- CSV text classification -----------------------------------------------

/// RFC 4180 reader: comma separated, optional double-quoted fields with ""
/// escapes and embedded newlines, CRLF or LF line ends.
std::vector<std::vector<std::string>> parse_csv(std::istream &in);

/// Lowercased whitespace tokens. Vocabulary = the vocab_cap most frequent
/// tokens ordered by (count desc, token asc), ids from kFirstContentId; the
/// rest map to kUnkId. Integer labels are used as-is, otherwise distinct
/// label strings are numbered in sorted order.
Dataset csv_load(const std::filesystem::path &path, const std::string &text_column,
                 const std::string &label_column, std::size_t vocab_cap);

// --- interchange format ----------------------------------------------------
//
//   # softlm-dataset v1 vocab_size=<V> n_classes=<C> split=<name>
//   <label>\t<id> <id> ...

void save_dataset(const Dataset &ds, const std::filesystem::path &path);
Dataset load_dataset(const std::filesystem::path &path);
void write_dataset(const Dataset &ds, std::ostream &out);
Dataset read_dataset(std::istream &in);

// --- batching ----------------------------------------------------------------

struct Batch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;      // [batch * seq_len], padded with kPadId
  std::vector<double> mask;  // 1 for real tokens, 0 for padding
  std::vector<int> labels;   // [batch]
};

Batch make_batch(const Dataset &ds, std::span<const std::size_t> indices);

/// Index chunks covering [0, n) exactly once; shuffled when rng is given.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::mt19937_64 *rng = nullptr);

}  // namespace softlm
