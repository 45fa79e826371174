// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "softlm/linalg.hpp"
#include "softlm/soft_threshold.hpp"
#include "softlm/tensor.hpp"

namespace softlm {

/// Magnitude below which a thresholded singular value counts as removed.
inline constexpr double kRankEps = 1e-8;

// --- parameter / MAC accounting -------------------------------------------
//
// A linear layer maps N inputs to M outputs. Dense storage is M*N weights; a
// rank-k factorisation stores k*(M+N). Biases are reported separately.

/// k* = M*N / (M+N): ranks above it make the factored form larger.
double break_even_rank(std::size_t m, std::size_t n);
std::size_t dense_params(std::size_t m, std::size_t n);
std::size_t factored_params(std::size_t m, std::size_t n, std::size_t k);
/// Cheaper of the two forms. A layer whose rank sits above break-even is
/// stored dense after training.
std::size_t storage_params(std::size_t m, std::size_t n, std::size_t k);
std::size_t dense_macs(std::size_t seq_len, std::size_t m, std::size_t n);
std::size_t factored_macs(std::size_t seq_len, std::size_t m, std::size_t n,
                          std::size_t k);
std::size_t storage_macs(std::size_t seq_len, std::size_t m, std::size_t n,
                         std::size_t k);

enum class CountMode { dense_equivalent, decomposed_effective, merged };

class MergedLinear;

/// y = x W^T + b
class DenseLinear {
 public:
  DenseLinear(Tensor weight, std::optional<Tensor> bias = std::nullopt);
  /// Glorot-uniform weight, zero bias.
  static DenseLinear init(std::size_t out_features, std::size_t in_features,
                          std::mt19937_64 &rng, bool with_bias = true);

  Tensor forward(const Tensor &x) const;

  const Tensor &weight() const { return weight_; }
  const std::optional<Tensor> &bias() const { return bias_; }
  std::size_t out_features() const { return weight_.dim(0); }
  std::size_t in_features() const { return weight_.dim(1); }
  DenseLinear clone() const;

 private:
  Tensor weight_;
  std::optional<Tensor> bias_;
};

/// Linear layer held as U, Sigma, V with a learnable soft threshold on Sigma:
///
///   y = x . V . diag(Th_s(sigma)) . U^T + b
///
/// U, sigma, V and alpha are all trainable. Evaluation order is x.V, column
/// scale, then .U^T, so cost is proportional to the rank.
class DecomposedLinear {
 public:
  DecomposedLinear(Tensor u, Tensor sigma, Tensor v, Tensor alpha, double sharpness,
                   double below = 0.0, std::optional<Tensor> bias = std::nullopt);

  /// SVD of w [M x N]; alpha starts at 0.
  static DecomposedLinear decompose(const Tensor &w, double sharpness,
                                    std::optional<Tensor> bias = std::nullopt);

  /// Replaces each sigma_i by the t solving t*tanh(s t) = sigma_i, so that at
  /// alpha = 0 the layer reproduces the weight it was decomposed from.
  void calibrate();

  Tensor forward(const Tensor &x) const;

  SoftThresholdParams threshold() const;
  std::vector<double> thresholded_sigma() const;
  /// Count of |Th_s(sigma_i)| > eps. Does not assume sigma is sorted.
  std::size_t effective_rank(double eps = kRankEps) const;
  std::size_t param_count(CountMode mode, double eps = kRankEps) const;
  std::size_t mac_count(CountMode mode, std::size_t seq_len, double eps = kRankEps) const;

  /// Collapses V and Th_s(sigma) into VS, dropping components with
  /// |Th_s(sigma_i)| <= eps. A rank-0 result is degenerate and outputs bias only.
  MergedLinear merge(double eps = kRankEps) const;
  /// U . diag(Th_s(sigma)) . V^T
  Tensor dense_weight() const;

  const Tensor &u() const { return u_; }
  const Tensor &sigma() const { return sigma_; }
  const Tensor &v() const { return v_; }
  const Tensor &alpha() const { return alpha_; }
  Tensor &alpha() { return alpha_; }
  const std::optional<Tensor> &bias() const { return bias_; }
  double sharpness() const { return sharpness_; }
  double below() const { return below_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool on) { frozen_ = on; }

  std::size_t out_features() const { return u_.dim(0); }
  std::size_t in_features() const { return v_.dim(0); }
  std::size_t full_rank() const { return sigma_.dim(0); }
  DecomposedLinear clone() const;

 private:
  Tensor u_, sigma_, v_, alpha_;
  double sharpness_;
  double below_;
  std::optional<Tensor> bias_;
  bool frozen_ = false;
};

/// Two-factor inference form: y = x . VS . U^T + b, stored as U^T [k x M] and
/// VS [N x k].
class MergedLinear {
 public:
  MergedLinear(Tensor u_t, Tensor vs, std::size_t out_features, std::size_t in_features,
               std::optional<Tensor> bias = std::nullopt);
  /// Hard truncation of an SVD to rank k (static-rank baseline).
  static MergedLinear from_svd(const SvdResult &res, std::size_t k,
                               std::optional<Tensor> bias = std::nullopt);

  Tensor forward(const Tensor &x) const;

  const Tensor &u_t() const { return u_t_; }
  const Tensor &vs() const { return vs_; }
  const std::optional<Tensor> &bias() const { return bias_; }
  std::size_t rank() const { return rank_; }
  bool degenerate() const { return rank_ == 0; }
  std::size_t out_features() const { return out_; }
  std::size_t in_features() const { return in_; }
  /// k*(M+N) from the stored factors.
  std::size_t param_count() const;
  MergedLinear clone() const;

 private:
  Tensor u_t_, vs_;
  std::size_t out_, in_, rank_;
  std::optional<Tensor> bias_;
};

enum class LinearKind { dense, decomposed, merged };
const char *to_string(LinearKind kind);

/// One replaceable linear slot of a model.
class Linear {
 public:
  Linear(DenseLinear l) : impl_(std::move(l)) {}
  Linear(DecomposedLinear l) : impl_(std::move(l)) {}
  Linear(MergedLinear l) : impl_(std::move(l)) {}

  Tensor forward(const Tensor &x) const;
  LinearKind kind() const { return static_cast<LinearKind>(impl_.index()); }
  std::size_t out_features() const;
  std::size_t in_features() const;
  /// Effective rank: min(M,N) for dense, thresholded count for decomposed,
  /// stored k for merged.
  std::size_t rank(double eps = kRankEps) const;
  /// Weights held in the cheaper of dense / factored form at current rank.
  std::size_t storage_params(double eps = kRankEps) const;
  std::size_t bias_params() const;

  DenseLinear &dense() { return std::get<DenseLinear>(impl_); }
  const DenseLinear &dense() const { return std::get<DenseLinear>(impl_); }
  DecomposedLinear &decomposed() { return std::get<DecomposedLinear>(impl_); }
  const DecomposedLinear &decomposed() const { return std::get<DecomposedLinear>(impl_); }
  MergedLinear &merged() { return std::get<MergedLinear>(impl_); }
  const MergedLinear &merged() const { return std::get<MergedLinear>(impl_); }

  Linear clone() const;

 private:
  std::variant<DenseLinear, DecomposedLinear, MergedLinear> impl_;
};

/// End-of-training conversion of a decomposed layer to its cheapest exact
/// inference form: merged factors when k*(M+N) < M*N, otherwise the dense
/// product U . diag(Th_s(sigma)) . V^T.
Linear compact(const DecomposedLinear &layer, double eps = kRankEps);

}  // namespace softlm
