// SPDX-License-Identifier: Apache-2.0
#include "softlm/losses.hpp"

#include <cmath>

#include "softlm/errors.hpp"
#include "softlm/ops.hpp"

namespace softlm {

Tensor cross_entropy(const Tensor &logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [B x C], got " +
                         shape_str(logits.shape()));
  }
  const auto b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  }
  if (b == 0) throw ContractError("cross_entropy: empty batch");
  std::vector<int> y(labels.begin(), labels.end());
  for (int l : y) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(c) + ")");
    }
  }
  auto x = logits.data();
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double *row = x.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
    loss += log_z - row[y[i]];
  }
  loss /= static_cast<double>(b);
  return detail::make_result({}, {loss}, {logits},
                             [b, c, y = std::move(y), probs = std::move(probs)](detail::Node &self) {
                               const auto &p = self.parents[0];
                               if (!p->requires_grad) return;
                               auto &g = p->grad_buffer();
                               const double s = self.grad[0] / static_cast<double>(b);
                               for (std::size_t i = 0; i < b; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double onehot = static_cast<int>(j) == y[i] ? 1.0 : 0.0;
                                   g[i * c + j] += s * (probs[i * c + j] - onehot);
                                 }
                               }
                             });
}

Tensor compression_loss_linear(std::span<const Tensor> alphas) {
  if (alphas.empty()) return Tensor::scalar(0.0);
  return neg(add_n(alphas));
}

Tensor compression_loss_adaptive(std::span<const Tensor> alphas) {
  if (alphas.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> terms;
  terms.reserve(alphas.size());
  for (const auto &a : alphas) terms.push_back(exp(neg(a)));
  return add_n(terms);
}

CompressionVariant parse_variant(const std::string &name) {
  if (name == "adaptive") return CompressionVariant::adaptive;
  if (name == "linear") return CompressionVariant::linear;
  throw ConfigError("unknown compression loss variant '" + name +
                    "' (expected adaptive or linear)");
}

const char *to_string(CompressionVariant v) {
  return v == CompressionVariant::adaptive ? "adaptive" : "linear";
}

LossBreakdown total_loss(const Tensor &l_acc, std::span<const Tensor> alphas, double gamma,
                         CompressionVariant variant) {
  if (!(gamma >= 0.0)) {
    throw ContractError("total_loss: gamma must be non-negative, got " + std::to_string(gamma));
  }
  auto cmp = compression_loss_linear(alphas);
  auto acmp = compression_loss_adaptive(alphas);
  LossBreakdown out;
  out.l_acc = l_acc.item();
  out.l_cmp = cmp.item();
  out.l_acmp = acmp.item();
  out.gamma = gamma;
  out.variant = variant;
  const auto &term = variant == CompressionVariant::adaptive ? acmp : cmp;
  std::vector<Tensor> parts{l_acc, scale(term, gamma)};
  out.total = add_n(parts);
  out.l_tot = out.total.item();
  return out;
}

}  // namespace softlm
