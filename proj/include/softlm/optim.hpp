// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "softlm/tensor.hpp"

namespace softlm {

struct ParamGroup {
  std::string name;
  std::vector<Tensor> params;
  double lr = 1e-3;
  double weight_decay = 0.0;
  /// Values are clamped to at least this after every step (thresholds use 0).
  std::optional<double> clamp_min;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay and bias-corrected moments:
///
///   p <- p - lr * wd * p
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
///
/// A group with lr == 0 is left bit-identical (its moments still advance).
class AdamW {
 public:
  explicit AdamW(std::vector<ParamGroup> groups, AdamWOptions options = {});

  void step();
  void zero_grad();

  ParamGroup &group(const std::string &name);
  const ParamGroup &group(const std::string &name) const;
  void set_lr(const std::string &name, double lr) { group(name).lr = lr; }
  long steps() const { return step_; }
  const std::vector<ParamGroup> &groups() const { return groups_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Moments>> state_;
  AdamWOptions opt_;
  long step_ = 0;
};

}  // namespace softlm
