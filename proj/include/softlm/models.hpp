// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "softlm/data.hpp"
#include "softlm/lowrank.hpp"
#include "softlm/tensor.hpp"

namespace softlm {

/// Ordered collection of the replaceable linear slots of a model, keyed by
/// path ("block/<i>/<slot>", "layer/<i>", "head").
class LayerRegistry {
 public:
  void add(std::string path, Linear layer);
  bool contains(const std::string &path) const;
  Linear &at(const std::string &path);
  const Linear &at(const std::string &path) const;
  void replace(const std::string &path, Linear layer);

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> paths() const;
  std::vector<std::pair<std::string, Linear>> &entries() { return entries_; }
  const std::vector<std::pair<std::string, Linear>> &entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Linear>> entries_;
};

/// Scaled dot-product attention per group: q, k, v are [G x L x dk];
/// `key_bias`, when given, is added to the [G x L x L] scores before softmax.
Tensor attention(const Tensor &q, const Tensor &k, const Tensor &v,
                 const Tensor *key_bias = nullptr);

/// A sequence classifier whose linear layers live in a LayerRegistry.
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// Logits [batch x n_classes].
  virtual Tensor forward(const Batch &batch) const = 0;
  virtual std::string kind() const = 0;
  virtual std::size_t n_classes() const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// Sequence length used for MAC accounting.
  virtual std::size_t mac_seq_len() const = 0;
  /// Paths eligible for compression, in registry order.
  virtual std::vector<std::string> compressible_paths() const = 0;
  /// JSON description sufficient to rebuild an untrained instance.
  virtual nlohmann::json topology() const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  LayerRegistry &registry() { return registry_; }
  const LayerRegistry &registry() const { return registry_; }
  /// Non-linear parameters (embeddings, norms) by name, sorted.
  std::map<std::string, Tensor> &tensors() { return tensors_; }
  const std::map<std::string, Tensor> &tensors() const { return tensors_; }

 protected:
  LayerRegistry registry_;
  std::map<std::string, Tensor> tensors_;

  void deep_copy_into(Classifier &dst) const;
  const Tensor &t(const std::string &name) const { return tensors_.at(name); }
};

// --- transformer encoder ---------------------------------------------------

struct EncoderConfig {
  std::size_t n_blocks = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 32;
  std::size_t max_seq_len = 64;
  std::size_t n_classes = 4;
  bool pre_norm = false;

  void validate() const;
};

inline const std::vector<std::string> kEncoderSlots = {"W_Q", "W_K", "W_V",
                                                       "W_proj", "W_fc1", "W_fc2"};

/// Token + learned positional embeddings, n_blocks of multi-head attention and
/// a GELU feed-forward with residual Add & Norm (post-norm by default), masked
/// mean pooling and a dense classifier head.
class Encoder final : public Classifier {
 public:
  Encoder(const EncoderConfig &cfg, std::mt19937_64 &rng);

  Tensor forward(const Batch &batch) const override;
  std::string kind() const override { return "encoder"; }
  std::size_t n_classes() const override { return cfg_.n_classes; }
  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  std::size_t mac_seq_len() const override { return cfg_.max_seq_len; }
  std::vector<std::string> compressible_paths() const override;
  nlohmann::json topology() const override;
  std::unique_ptr<Classifier> clone() const override;

  const EncoderConfig &config() const { return cfg_; }
  static std::string path(std::size_t block, const std::string &slot);

 private:
  EncoderConfig cfg_;
};

// --- MLP -----------------------------------------------------------------------

struct MlpConfig {
  std::size_t vocab_size = 32;
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t n_classes = 4;

  void validate() const;
};

/// tanh MLP over normalised bag-of-words features. Hidden layers are
/// "layer/<i>" and compressible; the output layer is "head".
class Mlp final : public Classifier {
 public:
  Mlp(const MlpConfig &cfg, std::mt19937_64 &rng);

  Tensor forward(const Batch &batch) const override;
  /// Runs the layer stack on precomputed features x [B x vocab_size].
  Tensor forward_features(const Tensor &x) const;
  std::string kind() const override { return "mlp"; }
  std::size_t n_classes() const override { return cfg_.n_classes; }
  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  std::size_t mac_seq_len() const override { return 1; }
  std::vector<std::string> compressible_paths() const override;
  nlohmann::json topology() const override;
  std::unique_ptr<Classifier> clone() const override;

  const MlpConfig &config() const { return cfg_; }

 private:
  MlpConfig cfg_;
};

/// Builds a freshly initialised model from a topology descriptor.
std::unique_ptr<Classifier> build_model(const nlohmann::json &topology, std::uint64_t seed);

// --- decomposition ---------------------------------------------------------

/// Which compressible layers to decompose: "all", "ffn", "attention", or a
/// comma-separated list of paths.
struct LayerFilter {
  std::string spec = "all";
  std::vector<std::string> select(const Classifier &model) const;
};

/// SVD-decomposes every selected dense layer in place (alpha = 0). With
/// `calibrate`, sigma is pre-corrected so outputs match the dense model.
/// Returns the decomposed paths.
std::vector<std::string> replace_linears(Classifier &model, const LayerFilter &filter,
                                         double sharpness, bool calibrate = true);

/// Sum of M*N over compressible layers, whatever their current form.
std::size_t compressible_dense_params(const Classifier &model);
/// Sum of per-layer storage at current ranks (see storage_params).
std::size_t compressible_live_params(const Classifier &model, double eps = kRankEps);
/// Decomposed layers in registry order.
std::vector<DecomposedLinear *> decomposed_layers(Classifier &model);

/// Replaces every decomposed layer by its compact inference form.
void compact_model(Classifier &model, double eps = kRankEps);
/// Replaces every decomposed layer by its two-factor merge, whatever its rank.
void merge_model(Classifier &model, double eps = kRankEps);

}  // namespace softlm
