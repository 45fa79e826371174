// SPDX-License-Identifier: Apache-2.0
#include "softlm/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "softlm/errors.hpp"

namespace softlm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'L', 'M', '1'};
enum Tag : std::uint8_t { kDense = 0, kDecomposed = 1, kMerged = 2, kTensor = 3 };

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void f32(double v) {
    const auto f = static_cast<float>(v);
    raw(&f, 4);
  }
  void str(const std::string &s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void floats(const Tensor &t) {
    for (double v : t.data()) f32(v);
  }
  void raw(const void *p, std::size_t n) { out_.append(static_cast<const char *>(p), n); }
  std::string &bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string &bytes, std::size_t begin, std::size_t end)
      : b_(bytes), pos_(begin), end_(end) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    copy(&v, 4);
    return v;
  }
  double f32() {
    float f;
    copy(&f, 4);
    return static_cast<double>(f);
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    need(n * 4);
    std::vector<double> data(n);
    for (auto &x : data) x = f32();
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint truncated");
    }
  }
  void copy(void *dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }

  const std::string &b_;
  std::size_t pos_, end_;
};

std::uint32_t crc32_of(const std::string &bytes, std::size_t begin, std::size_t end) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef *>(bytes.data() + begin),
              static_cast<uInt>(end - begin));
  return static_cast<std::uint32_t>(crc);
}

void write_bias(Writer &w, const std::optional<Tensor> &bias) {
  if (bias) w.floats(*bias);
}

std::optional<Tensor> read_bias(Reader &r, bool has, std::size_t m) {
  if (!has) return std::nullopt;
  return r.tensor({m}, true);
}

void check_slot(const std::string &name, const Linear &slot, std::size_t m, std::size_t n) {
  if (slot.out_features() != m || slot.in_features() != n) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "record " + name + " is " + std::to_string(m) + "x" + std::to_string(n) +
                              " but the topology expects " +
                              std::to_string(slot.out_features()) + "x" +
                              std::to_string(slot.in_features()));
  }
}

}  // namespace

std::string serialize_checkpoint(const Classifier &model) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(model.topology().dump());
  w.u32(static_cast<std::uint32_t>(model.registry().size() + model.tensors().size()));
  for (const auto &[path, layer] : model.registry().entries()) {
    switch (layer.kind()) {
      case LinearKind::dense: {
        const auto &d = layer.dense();
        w.u8(kDense);
        w.str(path);
        w.u32(static_cast<std::uint32_t>(d.out_features()));
        w.u32(static_cast<std::uint32_t>(d.in_features()));
        w.u8(d.bias() ? 1 : 0);
        w.floats(d.weight());
        write_bias(w, d.bias());
        break;
      }
      case LinearKind::decomposed: {
        const auto &d = layer.decomposed();
        w.u8(kDecomposed);
        w.str(path);
        w.u32(static_cast<std::uint32_t>(d.out_features()));
        w.u32(static_cast<std::uint32_t>(d.in_features()));
        w.u32(static_cast<std::uint32_t>(d.full_rank()));
        w.f32(d.alpha().item());
        w.f32(d.sharpness());
        w.f32(d.below());
        w.u8(d.frozen() ? 1 : 0);
        w.u8(d.bias() ? 1 : 0);
        w.floats(d.u());
        w.floats(d.sigma());
        w.floats(d.v());
        write_bias(w, d.bias());
        break;
      }
      case LinearKind::merged: {
        const auto &d = layer.merged();
        w.u8(kMerged);
        w.str(path);
        w.u32(static_cast<std::uint32_t>(d.out_features()));
        w.u32(static_cast<std::uint32_t>(d.in_features()));
        w.u32(static_cast<std::uint32_t>(d.rank()));
        w.u8(d.bias() ? 1 : 0);
        if (!d.degenerate()) {
          w.floats(d.u_t());
          w.floats(d.vs());
        }
        write_bias(w, d.bias());
        break;
      }
    }
  }
  for (const auto &[name, t] : model.tensors()) {
    w.u8(kTensor);
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.floats(t);
  }
  const auto crc = crc32_of(w.bytes(), 8, w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

std::unique_ptr<Classifier> deserialize_checkpoint(const std::string &bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "not a softlm checkpoint (bad magic)");
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::malformed, "checkpoint truncated");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::bad_version, "unsupported checkpoint version " +
                                                 std::to_string(version) + " (expected " +
                                                 std::to_string(kCheckpointVersion) + ")");
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes, 8, bytes.size() - 4) != stored) {
    throw CheckpointError(Kind::bad_checksum, "checkpoint checksum mismatch");
  }

  Reader r(bytes, 8, bytes.size() - 4);
  std::unique_ptr<Classifier> model;
  try {
    model = build_model(nlohmann::json::parse(r.str()), 0);
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError(Kind::malformed, std::string("bad topology descriptor: ") + e.what());
  } catch (const ConfigError &e) {
    throw CheckpointError(Kind::malformed, e.what());
  }

  std::set<std::string> seen;
  const auto n_records = r.u32();
  for (std::uint32_t i = 0; i < n_records; ++i) {
    const auto tag = r.u8();
    const auto name = r.str();
    if (!seen.insert(name).second) {
      throw CheckpointError(Kind::malformed, "duplicate record " + name);
    }
    if (tag == kTensor) {
      auto it = model->tensors().find(name);
      if (it == model->tensors().end()) {
        throw CheckpointError(Kind::malformed, "unknown tensor record " + name);
      }
      Shape shape(r.u32());
      for (auto &d : shape) d = r.u32();
      if (shape != it->second.shape()) {
        throw CheckpointError(Kind::malformed, "tensor " + name + " has shape " +
                                                   shape_str(shape) + ", topology expects " +
                                                   shape_str(it->second.shape()));
      }
      it->second = r.tensor(shape, true);
      continue;
    }
    if (!model->registry().contains(name)) {
      throw CheckpointError(Kind::malformed, "unknown layer record " + name);
    }
    auto &slot = model->registry().at(name);
    const std::size_t m = r.u32(), n = r.u32();
    check_slot(name, slot, m, n);
    switch (tag) {
      case kDense: {
        const bool has_bias = r.u8() != 0;
        auto weight = r.tensor({m, n}, true);
        slot = Linear(DenseLinear(weight, read_bias(r, has_bias, m)));
        break;
      }
      case kDecomposed: {
        const std::size_t rk = r.u32();
        if (rk != std::min(m, n)) {
          throw CheckpointError(Kind::malformed, "record " + name + " has rank " +
                                                     std::to_string(rk) + ", expected " +
                                                     std::to_string(std::min(m, n)));
        }
        const double alpha = r.f32(), s = r.f32(), c = r.f32();
        const bool frozen = r.u8() != 0;
        const bool has_bias = r.u8() != 0;
        auto u = r.tensor({m, rk}, true);
        auto sigma = r.tensor({rk}, true);
        auto v = r.tensor({n, rk}, true);
        auto bias = read_bias(r, has_bias, m);
        if (!(s > 0.0)) throw CheckpointError(Kind::malformed, "record " + name + ": sharpness <= 0");
        DecomposedLinear layer(u, sigma, v, Tensor::scalar(alpha, true), s, c, bias);
        layer.set_frozen(frozen);
        slot = Linear(std::move(layer));
        break;
      }
      case kMerged: {
        const std::size_t k = r.u32();
        if (k > std::min(m, n)) {
          throw CheckpointError(Kind::malformed, "record " + name + " has rank " +
                                                     std::to_string(k) + " above min(M, N)");
        }
        const bool has_bias = r.u8() != 0;
        Tensor ut, vs;
        if (k > 0) {
          ut = r.tensor({k, m}, true);
          vs = r.tensor({n, k}, true);
        } else {
          ut = Tensor::zeros({0, m});
          vs = Tensor::zeros({n, 0});
        }
        slot = Linear(MergedLinear(ut, vs, m, n, read_bias(r, has_bias, m)));
        break;
      }
      default:
        throw CheckpointError(Kind::malformed, "record " + name + " has unknown tag " +
                                                   std::to_string(tag));
    }
  }
  if (!r.done()) throw CheckpointError(Kind::malformed, "trailing bytes after last record");
  for (const auto &p : model->registry().paths()) {
    if (!seen.count(p)) throw CheckpointError(Kind::malformed, "missing record for layer " + p);
  }
  for (const auto &[name, t] : model->tensors()) {
    if (!seen.count(name)) throw CheckpointError(Kind::malformed, "missing record for tensor " + name);
  }
  return model;
}

void save_checkpoint(const Classifier &model, const std::filesystem::path &path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void round_to_float32(Classifier &model) {
  auto round = [](Tensor t) {
    if (!t.defined()) return;
    for (auto &x : t.mutable_data()) x = static_cast<float>(x);
  };
  for (auto &[path, layer] : model.registry().entries()) {
    switch (layer.kind()) {
      case LinearKind::dense:
        round(layer.dense().weight());
        if (layer.dense().bias()) round(*layer.dense().bias());
        break;
      case LinearKind::decomposed: {
        auto &d = layer.decomposed();
        for (const Tensor &t : {d.u(), d.sigma(), d.v(), d.alpha()}) round(t);
        if (d.bias()) round(*d.bias());
        break;
      }
      case LinearKind::merged:
        round(layer.merged().u_t());
        round(layer.merged().vs());
        if (layer.merged().bias()) round(*layer.merged().bias());
        break;
    }
  }
  for (auto &[name, t] : model.tensors()) round(t);
}

}  // namespace softlm
