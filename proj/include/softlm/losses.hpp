// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "softlm/tensor.hpp"

namespace softlm {

/// Mean negative log-likelihood of the true class under softmax(logits).
/// logits [B x C]; throws ContractError for labels outside [0, C).
Tensor cross_entropy(const Tensor &logits, std::span<const int> labels);

/// -sum(alpha_i). Pressure is constant regardless of how far compression went.
Tensor compression_loss_linear(std::span<const Tensor> alphas);
/// sum(exp(-alpha_i)). Pressure decays as thresholds grow.
Tensor compression_loss_adaptive(std::span<const Tensor> alphas);

enum class CompressionVariant { linear, adaptive };
CompressionVariant parse_variant(const std::string &name);
const char *to_string(CompressionVariant v);

struct LossBreakdown {
  double l_acc = 0.0;
  double l_cmp = 0.0;   // linear term, always reported
  double l_acmp = 0.0;  // adaptive term, always reported
  double gamma = 0.0;
  CompressionVariant variant = CompressionVariant::adaptive;
  double l_tot = 0.0;
  Tensor total;  // l_acc + gamma * selected term, on the graph

  double selected_term() const {
    return variant == CompressionVariant::adaptive ? l_acmp : l_cmp;
  }
};

/// Assembles l_acc + gamma * compression term. gamma must be >= 0.
LossBreakdown total_loss(const Tensor &l_acc, std::span<const Tensor> alphas, double gamma,
                         CompressionVariant variant);

}  // namespace softlm
