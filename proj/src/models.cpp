// SPDX-License-Identifier: Apache-2.0
#include "softlm/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "softlm/errors.hpp"
#include "softlm/ops.hpp"

namespace softlm {

// --- registry --------------------------------------------------------------------

void LayerRegistry::add(std::string path, Linear layer) {
  if (contains(path)) throw ContractError("duplicate layer path '" + path + "'");
  entries_.emplace_back(std::move(path), std::move(layer));
}

bool LayerRegistry::contains(const std::string &path) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto &e) { return e.first == path; });
}

Linear &LayerRegistry::at(const std::string &path) {
  for (auto &e : entries_) {
    if (e.first == path) return e.second;
  }
  std::string valid;
  for (const auto &e : entries_) valid += (valid.empty() ? "" : ", ") + e.first;
  throw ConfigError("unknown layer path '" + path + "'; valid paths: " + valid);
}

const Linear &LayerRegistry::at(const std::string &path) const {
  return const_cast<LayerRegistry *>(this)->at(path);
}

void LayerRegistry::replace(const std::string &path, Linear layer) {
  auto &slot = at(path);
  if (slot.out_features() != layer.out_features() || slot.in_features() != layer.in_features()) {
    throw DimensionError("layer " + path + ": replacement is " +
                         std::to_string(layer.out_features()) + "x" +
                         std::to_string(layer.in_features()) + ", slot is " +
                         std::to_string(slot.out_features()) + "x" +
                         std::to_string(slot.in_features()));
  }
  slot = std::move(layer);
}

std::vector<std::string> LayerRegistry::paths() const {
  std::vector<std::string> out;
  for (const auto &e : entries_) out.push_back(e.first);
  return out;
}

void Classifier::deep_copy_into(Classifier &dst) const {
  dst.registry_ = LayerRegistry{};
  for (const auto &[path, layer] : registry_.entries()) dst.registry_.add(path, layer.clone());
  dst.tensors_.clear();
  for (const auto &[name, tensor] : tensors_) dst.tensors_.emplace(name, tensor.clone());
}

// --- attention -------------------------------------------------------------------

Tensor attention(const Tensor &q, const Tensor &k, const Tensor &v, const Tensor *key_bias) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q, k, v must share a [G x L x dk] shape, got " +
                         shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  auto scores = scale(batched_matmul(q, k, true), inv_sqrt_dk);
  if (key_bias) scores = add(scores, *key_bias);
  return batched_matmul(softmax_rows(scores), v);
}

// --- encoder ---------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of model.n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_ff == 0) throw ConfigError("model.d_ff must be positive");
  if (vocab_size < 2) throw ConfigError("vocabulary must hold at least PAD and UNK");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (n_classes < 2) throw ConfigError("need at least 2 classes");
}

std::string Encoder::path(std::size_t block, const std::string &slot) {
  return "block/" + std::to_string(block) + "/" + slot;
}

namespace {

Tensor normal_init(Shape shape, double stddev, std::mt19937_64 &rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto &x : data) x = dist(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

}  // namespace

Encoder::Encoder(const EncoderConfig &cfg, std::mt19937_64 &rng) : cfg_(cfg) {
  cfg_.validate();
  const auto d = cfg_.d_model;
  tensors_.emplace("embed/token", normal_init({cfg_.vocab_size, d}, 0.1, rng));
  tensors_.emplace("embed/position", normal_init({cfg_.max_seq_len, d}, 0.1, rng));
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    for (const char *ln : {"ln1", "ln2"}) {
      const auto base = "block/" + std::to_string(b) + "/" + ln;
      tensors_.emplace(base + "/gain", Tensor::full({d}, 1.0, true));
      tensors_.emplace(base + "/bias", Tensor::zeros({d}, true));
    }
    registry_.add(path(b, "W_Q"), DenseLinear::init(d, d, rng));
    registry_.add(path(b, "W_K"), DenseLinear::init(d, d, rng));
    registry_.add(path(b, "W_V"), DenseLinear::init(d, d, rng));
    registry_.add(path(b, "W_proj"), DenseLinear::init(d, d, rng));
    registry_.add(path(b, "W_fc1"), DenseLinear::init(cfg_.d_ff, d, rng));
    registry_.add(path(b, "W_fc2"), DenseLinear::init(d, cfg_.d_ff, rng));
  }
  if (cfg_.pre_norm) {
    tensors_.emplace("final_ln/gain", Tensor::full({d}, 1.0, true));
    tensors_.emplace("final_ln/bias", Tensor::zeros({d}, true));
  }
  registry_.add("head", DenseLinear::init(cfg_.n_classes, d, rng));
}

Tensor Encoder::forward(const Batch &batch) const {
  const auto B = batch.batch, L = batch.seq_len, H = cfg_.n_heads;
  if (B == 0 || L == 0) throw DimensionError("encoder: empty batch");
  if (L > cfg_.max_seq_len) {
    throw DimensionError("encoder: sequence length " + std::to_string(L) +
                         " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  std::vector<int> positions(B * L);
  for (std::size_t i = 0; i < B * L; ++i) positions[i] = static_cast<int>(i % L);
  auto x = add(embedding(t("embed/token"), batch.ids), embedding(t("embed/position"), positions));

  // Additive -1e9 on padded keys, shared by every head and query.
  std::vector<double> bias(B * H * L * L, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t key = 0; key < L; ++key) {
      if (batch.mask[b * L + key] != 0.0) continue;
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t qi = 0; qi < L; ++qi) bias[((b * H + h) * L + qi) * L + key] = -1e9;
      }
    }
  }
  const Tensor key_bias({B * H, L, L}, std::move(bias));

  auto norm = [&](const Tensor &a, const std::string &name) {
    return layer_norm(a, t(name + "/gain"), t(name + "/bias"));
  };
  for (std::size_t blk = 0; blk < cfg_.n_blocks; ++blk) {
    const auto pre = "block/" + std::to_string(blk) + "/";
    auto lin = [&](const char *slot) -> const Linear & { return registry_.at(pre + slot); };

    auto h = cfg_.pre_norm ? norm(x, pre + "ln1") : x;
    auto q = split_heads(lin("W_Q").forward(h), B, L, H);
    auto k = split_heads(lin("W_K").forward(h), B, L, H);
    auto v = split_heads(lin("W_V").forward(h), B, L, H);
    auto a = lin("W_proj").forward(merge_heads(attention(q, k, v, &key_bias), B, L, H));
    x = cfg_.pre_norm ? add(x, a) : norm(add(x, a), pre + "ln1");

    h = cfg_.pre_norm ? norm(x, pre + "ln2") : x;
    auto f = lin("W_fc2").forward(gelu(lin("W_fc1").forward(h)));
    x = cfg_.pre_norm ? add(x, f) : norm(add(x, f), pre + "ln2");
  }
  if (cfg_.pre_norm) x = norm(x, "final_ln");
  auto pooled = masked_mean_rows(x, B, L, batch.mask);
  return registry_.at("head").forward(pooled);
}

std::vector<std::string> Encoder::compressible_paths() const {
  std::vector<std::string> out;
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    for (const auto &slot : kEncoderSlots) out.push_back(path(b, slot));
  }
  return out;
}

nlohmann::json Encoder::topology() const {
  return {{"kind", "encoder"},
          {"n_blocks", cfg_.n_blocks},
          {"d_model", cfg_.d_model},
          {"n_heads", cfg_.n_heads},
          {"d_ff", cfg_.d_ff},
          {"vocab_size", cfg_.vocab_size},
          {"max_seq_len", cfg_.max_seq_len},
          {"n_classes", cfg_.n_classes},
          {"pre_norm", cfg_.pre_norm}};
}

std::unique_ptr<Classifier> Encoder::clone() const {
  auto out = std::unique_ptr<Encoder>(new Encoder(*this));
  deep_copy_into(*out);
  return out;
}

// --- MLP ---------------------------------------------------------------------------

void MlpConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocabulary must hold at least PAD and UNK");
  if (n_classes < 2) throw ConfigError("need at least 2 classes");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("model.mlp_hidden widths must be positive");
  }
}

Mlp::Mlp(const MlpConfig &cfg, std::mt19937_64 &rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t in = cfg_.vocab_size;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    registry_.add("layer/" + std::to_string(i), DenseLinear::init(cfg_.hidden[i], in, rng));
    in = cfg_.hidden[i];
  }
  registry_.add("head", DenseLinear::init(cfg_.n_classes, in, rng));
}

Tensor Mlp::forward_features(const Tensor &x) const {
  auto h = x;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = tanh(registry_.at("layer/" + std::to_string(i)).forward(h));
  }
  return registry_.at("head").forward(h);
}

Tensor Mlp::forward(const Batch &batch) const {
  const auto B = batch.batch, L = batch.seq_len, V = cfg_.vocab_size;
  std::vector<double> feats(B * V, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double n = 0.0;
    for (std::size_t l = 0; l < L; ++l) n += batch.mask[b * L + l];
    for (std::size_t l = 0; l < L; ++l) {
      const double w = batch.mask[b * L + l];
      if (w == 0.0) continue;
      const int id = batch.ids[b * L + l];
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw ContractError("mlp: token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(V));
      }
      feats[b * V + static_cast<std::size_t>(id)] += w / n;
    }
  }
  return forward_features(Tensor({B, V}, std::move(feats)));
}

std::vector<std::string> Mlp::compressible_paths() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) out.push_back("layer/" + std::to_string(i));
  return out;
}

nlohmann::json Mlp::topology() const {
  return {{"kind", "mlp"},
          {"vocab_size", cfg_.vocab_size},
          {"hidden", cfg_.hidden},
          {"n_classes", cfg_.n_classes}};
}

std::unique_ptr<Classifier> Mlp::clone() const {
  auto out = std::unique_ptr<Mlp>(new Mlp(*this));
  deep_copy_into(*out);
  return out;
}

std::unique_ptr<Classifier> build_model(const nlohmann::json &topology, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  try {
    const auto kind = topology.at("kind").get<std::string>();
    if (kind == "encoder") {
      EncoderConfig c;
      c.n_blocks = topology.at("n_blocks").get<std::size_t>();
      c.d_model = topology.at("d_model").get<std::size_t>();
      c.n_heads = topology.at("n_heads").get<std::size_t>();
      c.d_ff = topology.at("d_ff").get<std::size_t>();
      c.vocab_size = topology.at("vocab_size").get<std::size_t>();
      c.max_seq_len = topology.at("max_seq_len").get<std::size_t>();
      c.n_classes = topology.at("n_classes").get<std::size_t>();
      c.pre_norm = topology.at("pre_norm").get<bool>();
      return std::make_unique<Encoder>(c, rng);
    }
    if (kind == "mlp") {
      MlpConfig c;
      c.vocab_size = topology.at("vocab_size").get<std::size_t>();
      c.hidden = topology.at("hidden").get<std::vector<std::size_t>>();
      c.n_classes = topology.at("n_classes").get<std::size_t>();
      return std::make_unique<Mlp>(c, rng);
    }
    throw ConfigError("unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed model topology: ") + e.what());
  }
}

// --- decomposition -------------------------------------------------------------

std::vector<std::string> LayerFilter::select(const Classifier &model) const {
  const auto candidates = model.compressible_paths();
  auto slot_of = [](const std::string &p) { return p.substr(p.rfind('/') + 1); };
  std::vector<std::string> out;
  if (spec == "all") {
    out = candidates;
  } else if (spec == "ffn" || spec == "attention") {
    for (const auto &p : candidates) {
      const auto slot = slot_of(p);
      const bool ffn = slot == "W_fc1" || slot == "W_fc2";
      const bool attn = slot == "W_Q" || slot == "W_K" || slot == "W_V" || slot == "W_proj";
      if ((spec == "ffn" && ffn) || (spec == "attention" && attn)) out.push_back(p);
    }
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(' '));
      item.erase(item.find_last_not_of(' ') + 1);
      if (item.empty()) continue;
      if (std::find(candidates.begin(), candidates.end(), item) == candidates.end()) {
        std::string valid;
        for (const auto &c : candidates) valid += (valid.empty() ? "" : ", ") + c;
        throw ConfigError("unknown layer path '" + item + "'; valid paths: " + valid);
      }
      if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    }
  }
  if (out.empty()) throw ConfigError("layer filter '" + spec + "' selects no layers");
  return out;
}

std::vector<std::string> replace_linears(Classifier &model, const LayerFilter &filter,
                                         double sharpness, bool calibrate) {
  const auto selected = filter.select(model);
  for (const auto &p : selected) {
    auto &slot = model.registry().at(p);
    if (slot.kind() != LinearKind::dense) {
      throw ContractError("layer " + p + " is already " + to_string(slot.kind()));
    }
    auto &d = slot.dense();
    auto layer = DecomposedLinear::decompose(d.weight(), sharpness, d.bias());
    if (calibrate) layer.calibrate();
    slot = Linear(std::move(layer));
  }
  return selected;
}

std::size_t compressible_dense_params(const Classifier &model) {
  std::size_t total = 0;
  for (const auto &p : model.compressible_paths()) {
    const auto &l = model.registry().at(p);
    total += dense_params(l.out_features(), l.in_features());
  }
  return total;
}

std::size_t compressible_live_params(const Classifier &model, double eps) {
  std::size_t total = 0;
  for (const auto &p : model.compressible_paths()) total += model.registry().at(p).storage_params(eps);
  return total;
}

std::vector<DecomposedLinear *> decomposed_layers(Classifier &model) {
  std::vector<DecomposedLinear *> out;
  for (auto &[path, layer] : model.registry().entries()) {
    if (layer.kind() == LinearKind::decomposed) out.push_back(&layer.decomposed());
  }
  return out;
}

void compact_model(Classifier &model, double eps) {
  for (auto &[path, layer] : model.registry().entries()) {
    if (layer.kind() == LinearKind::decomposed) layer = compact(layer.decomposed(), eps);
  }
}

void merge_model(Classifier &model, double eps) {
  for (auto &[path, layer] : model.registry().entries()) {
    if (layer.kind() == LinearKind::decomposed) layer = Linear(layer.decomposed().merge(eps));
  }
}

}  // namespace softlm
