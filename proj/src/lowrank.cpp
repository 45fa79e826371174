// SPDX-License-Identifier: Apache-2.0
#include "softlm/lowrank.hpp"

#include <algorithm>
#include <cmath>

#include "softlm/errors.hpp"
#include "softlm/ops.hpp"

namespace softlm {

namespace {

// Flattens [.. x N] to [R x N] and returns the leading shape for restoring.
std::pair<Tensor, Shape> flatten_rows(const Tensor &x, std::size_t in_features,
                                      const char *who) {
  if (x.rank() < 2 || x.shape().back() != in_features) {
    throw DimensionError(std::string(who) + ": input " + shape_str(x.shape()) +
                         " does not end in " + std::to_string(in_features) + " features");
  }
  Shape lead(x.shape().begin(), x.shape().end() - 1);
  if (x.rank() == 2) return {x, lead};
  return {reshape(x, {x.numel() / in_features, in_features}), lead};
}

Tensor restore_rows(const Tensor &y, Shape lead, std::size_t out_features) {
  if (lead.size() == 1) return y;
  lead.push_back(out_features);
  return reshape(y, std::move(lead));
}

std::optional<Tensor> clone_opt(const std::optional<Tensor> &t) {
  if (!t) return std::nullopt;
  return t->clone();
}

Tensor with_bias(Tensor y, const std::optional<Tensor> &bias) {
  return bias ? add_row(y, *bias) : y;
}

void check_bias(const std::optional<Tensor> &bias, std::size_t m, const char *who) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != m)) {
    throw DimensionError(std::string(who) + ": bias " + shape_str(bias->shape()) +
                         " for " + std::to_string(m) + " outputs");
  }
}

}  // namespace

double break_even_rank(std::size_t m, std::size_t n) {
  return static_cast<double>(m) * static_cast<double>(n) / static_cast<double>(m + n);
}

std::size_t dense_params(std::size_t m, std::size_t n) { return m * n; }

std::size_t factored_params(std::size_t m, std::size_t n, std::size_t k) {
  return k * (m + n);
}

std::size_t storage_params(std::size_t m, std::size_t n, std::size_t k) {
  return std::min(factored_params(m, n, k), dense_params(m, n));
}

std::size_t dense_macs(std::size_t seq_len, std::size_t m, std::size_t n) {
  return seq_len * m * n;
}

std::size_t factored_macs(std::size_t seq_len, std::size_t m, std::size_t n,
                          std::size_t k) {
  return seq_len * k * (m + n);
}

std::size_t storage_macs(std::size_t seq_len, std::size_t m, std::size_t n,
                         std::size_t k) {
  return seq_len * storage_params(m, n, k);
}

// --- DenseLinear -----------------------------------------------------------

DenseLinear::DenseLinear(Tensor weight, std::optional<Tensor> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2) {
    throw DimensionError("DenseLinear: weight must be a matrix, got " +
                         shape_str(weight_.shape()));
  }
  check_bias(bias_, weight_.dim(0), "DenseLinear");
}

DenseLinear DenseLinear::init(std::size_t out_features, std::size_t in_features,
                              std::mt19937_64 &rng, bool with_bias) {
  const double a = std::sqrt(6.0 / static_cast<double>(in_features + out_features));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> w(out_features * in_features);
  for (auto &x : w) x = dist(rng);
  std::optional<Tensor> b;
  if (with_bias) b = Tensor::zeros({out_features}, true);
  return DenseLinear(Tensor({out_features, in_features}, std::move(w), true), std::move(b));
}

Tensor DenseLinear::forward(const Tensor &x) const {
  auto [flat, lead] = flatten_rows(x, in_features(), "DenseLinear");
  return restore_rows(with_bias(matmul_nt(flat, weight_), bias_), std::move(lead),
                      out_features());
}

DenseLinear DenseLinear::clone() const { return DenseLinear(weight_.clone(), clone_opt(bias_)); }

// --- DecomposedLinear ------------------------------------------------------

DecomposedLinear::DecomposedLinear(Tensor u, Tensor sigma, Tensor v, Tensor alpha,
                                   double sharpness, double below,
                                   std::optional<Tensor> bias)
    : u_(std::move(u)),
      sigma_(std::move(sigma)),
      v_(std::move(v)),
      alpha_(std::move(alpha)),
      sharpness_(sharpness),
      below_(below),
      bias_(std::move(bias)) {
  SoftThresholdParams{0.0, sharpness_, below_}.validate();
  if (u_.rank() != 2 || v_.rank() != 2 || sigma_.rank() != 1 ||
      u_.dim(1) != sigma_.dim(0) || v_.dim(1) != sigma_.dim(0)) {
    throw DimensionError("DecomposedLinear: inconsistent factors U " + shape_str(u_.shape()) +
                         ", sigma " + shape_str(sigma_.shape()) + ", V " +
                         shape_str(v_.shape()));
  }
  if (alpha_.numel() != 1) {
    throw DimensionError("DecomposedLinear: alpha must be scalar, got " +
                         shape_str(alpha_.shape()));
  }
  check_bias(bias_, u_.dim(0), "DecomposedLinear");
}

DecomposedLinear DecomposedLinear::decompose(const Tensor &w, double sharpness,
                                             std::optional<Tensor> bias) {
  auto res = svd(w);
  const auto r = res.rank();
  Tensor u(res.u.shape(), {res.u.data().begin(), res.u.data().end()}, true);
  Tensor v(res.v.shape(), {res.v.data().begin(), res.v.data().end()}, true);
  Tensor sigma({r}, res.sigma, true);
  if (bias) bias = bias->clone();
  return DecomposedLinear(std::move(u), std::move(sigma), std::move(v),
                          Tensor::scalar(0.0, true), sharpness, 0.0, std::move(bias));
}

void DecomposedLinear::calibrate() {
  for (auto &s : sigma_.mutable_data()) s = invert_soft_gain(s, sharpness_);
}

SoftThresholdParams DecomposedLinear::threshold() const {
  return {alpha_.item(), sharpness_, below_};
}

Tensor DecomposedLinear::forward(const Tensor &x) const {
  auto [flat, lead] = flatten_rows(x, in_features(), "DecomposedLinear");
  auto h = matmul(flat, v_);
  h = scale_columns(h, soft_threshold(sigma_, alpha_, sharpness_, below_));
  return restore_rows(with_bias(matmul_nt(h, u_), bias_), std::move(lead), out_features());
}

std::vector<double> DecomposedLinear::thresholded_sigma() const {
  return soft_threshold_forward(sigma_.data(), threshold());
}

std::size_t DecomposedLinear::effective_rank(double eps) const {
  std::size_t k = 0;
  for (double t : thresholded_sigma()) k += std::abs(t) > eps ? 1 : 0;
  return k;
}

std::size_t DecomposedLinear::param_count(CountMode mode, double eps) const {
  const auto m = out_features(), n = in_features();
  if (mode == CountMode::dense_equivalent) return dense_params(m, n);
  return factored_params(m, n, effective_rank(eps));
}

std::size_t DecomposedLinear::mac_count(CountMode mode, std::size_t seq_len,
                                        double eps) const {
  const auto m = out_features(), n = in_features();
  if (mode == CountMode::dense_equivalent) return dense_macs(seq_len, m, n);
  return factored_macs(seq_len, m, n, effective_rank(eps));
}

MergedLinear DecomposedLinear::merge(double eps) const {
  const auto m = out_features(), n = in_features(), r = full_rank();
  const auto th = thresholded_sigma();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < r; ++i) {
    if (std::abs(th[i]) > eps) keep.push_back(i);
  }
  const auto k = keep.size();
  std::vector<double> ut(k * m), vs(n * k);
  auto ud = u_.data();
  auto vd = v_.data();
  for (std::size_t c = 0; c < k; ++c) {
    const auto i = keep[c];
    for (std::size_t row = 0; row < m; ++row) ut[c * m + row] = ud[row * r + i];
    for (std::size_t row = 0; row < n; ++row) vs[row * k + c] = vd[row * r + i] * th[i];
  }
  return MergedLinear(Tensor({k, m}, std::move(ut)), Tensor({n, k}, std::move(vs)), m, n,
                      clone_opt(bias_));
}

Tensor DecomposedLinear::dense_weight() const {
  SvdResult res;
  res.u = u_;
  res.v = v_;
  res.sigma = thresholded_sigma();
  return reconstruct(res);
}

DecomposedLinear DecomposedLinear::clone() const {
  DecomposedLinear out(u_.clone(), sigma_.clone(), v_.clone(), alpha_.clone(), sharpness_,
                       below_, clone_opt(bias_));
  out.frozen_ = frozen_;
  return out;
}

// --- MergedLinear ----------------------------------------------------------

MergedLinear::MergedLinear(Tensor u_t, Tensor vs, std::size_t out_features,
                           std::size_t in_features, std::optional<Tensor> bias)
    : u_t_(std::move(u_t)),
      vs_(std::move(vs)),
      out_(out_features),
      in_(in_features),
      rank_(0),
      bias_(std::move(bias)) {
  if (u_t_.rank() != 2 || vs_.rank() != 2 || u_t_.dim(1) != out_ || vs_.dim(0) != in_ ||
      u_t_.dim(0) != vs_.dim(1)) {
    throw DimensionError("MergedLinear: inconsistent factors U^T " + shape_str(u_t_.shape()) +
                         ", VS " + shape_str(vs_.shape()) + " for " + std::to_string(out_) +
                         "x" + std::to_string(in_));
  }
  rank_ = u_t_.dim(0);
  check_bias(bias_, out_, "MergedLinear");
}

MergedLinear MergedLinear::from_svd(const SvdResult &res, std::size_t k,
                                    std::optional<Tensor> bias) {
  auto t = truncate(res, k);
  const auto m = t.u.dim(0), n = t.v.dim(0);
  std::vector<double> ut(k * m), vs(n * k);
  auto ud = t.u.data();
  auto vd = t.v.data();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t row = 0; row < m; ++row) ut[c * m + row] = ud[row * k + c];
    for (std::size_t row = 0; row < n; ++row) vs[row * k + c] = vd[row * k + c] * t.sigma[c];
  }
  if (bias) bias = bias->clone();
  return MergedLinear(Tensor({k, m}, std::move(ut), true), Tensor({n, k}, std::move(vs), true),
                      m, n, std::move(bias));
}

Tensor MergedLinear::forward(const Tensor &x) const {
  auto [flat, lead] = flatten_rows(x, in_, "MergedLinear");
  Tensor y;
  if (rank_ == 0) {
    y = Tensor::zeros({flat.dim(0), out_});
  } else {
    y = matmul(matmul(flat, vs_), u_t_);
  }
  return restore_rows(with_bias(y, bias_), std::move(lead), out_);
}

std::size_t MergedLinear::param_count() const { return u_t_.numel() + vs_.numel(); }

MergedLinear MergedLinear::clone() const {
  return MergedLinear(u_t_.clone(), vs_.clone(), out_, in_, clone_opt(bias_));
}

// --- Linear ----------------------------------------------------------------

const char *to_string(LinearKind kind) {
  switch (kind) {
    case LinearKind::dense: return "dense";
    case LinearKind::decomposed: return "decomposed";
    case LinearKind::merged: return "merged";
  }
  return "?";
}

Tensor Linear::forward(const Tensor &x) const {
  return std::visit([&](const auto &l) { return l.forward(x); }, impl_);
}

std::size_t Linear::out_features() const {
  return std::visit([](const auto &l) { return l.out_features(); }, impl_);
}

std::size_t Linear::in_features() const {
  return std::visit([](const auto &l) { return l.in_features(); }, impl_);
}

std::size_t Linear::rank(double eps) const {
  switch (kind()) {
    case LinearKind::dense: return std::min(out_features(), in_features());
    case LinearKind::decomposed: return decomposed().effective_rank(eps);
    case LinearKind::merged: return merged().rank();
  }
  return 0;
}

std::size_t Linear::storage_params(double eps) const {
  const auto m = out_features(), n = in_features();
  switch (kind()) {
    case LinearKind::dense: return dense_params(m, n);
    case LinearKind::decomposed: return softlm::storage_params(m, n, rank(eps));
    case LinearKind::merged: return merged().param_count();
  }
  return 0;
}

std::size_t Linear::bias_params() const {
  const auto &b = std::visit([](const auto &l) -> const std::optional<Tensor> & { return l.bias(); },
                             impl_);
  return b ? b->numel() : 0;
}

Linear Linear::clone() const {
  return std::visit([](const auto &l) { return Linear(l.clone()); }, impl_);
}

Linear compact(const DecomposedLinear &layer, double eps) {
  const auto m = layer.out_features(), n = layer.in_features();
  const auto k = layer.effective_rank(eps);
  if (factored_params(m, n, k) < dense_params(m, n)) return Linear(layer.merge(eps));
  return Linear(DenseLinear(layer.dense_weight(),
                            layer.bias() ? std::optional<Tensor>(layer.bias()->clone())
                                         : std::nullopt));
}

}  // namespace softlm
