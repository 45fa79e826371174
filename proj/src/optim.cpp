// SPDX-License-Identifier: Apache-2.0
#include "softlm/optim.hpp"

#include <algorithm>
#include <cmath>

#include "softlm/errors.hpp"

namespace softlm {

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWOptions options)
    : groups_(std::move(groups)), opt_(options) {
  state_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (const auto &p : groups_[g].params) {
      state_[g].push_back({std::vector<double>(p.numel(), 0.0),
                           std::vector<double>(p.numel(), 0.0)});
    }
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    auto &grp = groups_[g];
    for (std::size_t i = 0; i < grp.params.size(); ++i) {
      auto &p = grp.params[i];
      auto &st = state_[g][i];
      auto w = p.mutable_data();
      auto grad = p.grad();
      const bool has = !grad.empty();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = has ? grad[j] : 0.0;
        st.m[j] = opt_.beta1 * st.m[j] + (1.0 - opt_.beta1) * gj;
        st.v[j] = opt_.beta2 * st.v[j] + (1.0 - opt_.beta2) * gj * gj;
      }
      if (grp.lr == 0.0) continue;
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (grp.weight_decay != 0.0) w[j] -= grp.lr * grp.weight_decay * w[j];
        const double mhat = st.m[j] / bc1;
        const double vhat = st.v[j] / bc2;
        w[j] -= grp.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        if (grp.clamp_min) w[j] = std::max(w[j], *grp.clamp_min);
      }
    }
  }
}

void AdamW::zero_grad() {
  for (auto &grp : groups_) {
    for (auto &p : grp.params) p.zero_grad();
  }
}

ParamGroup &AdamW::group(const std::string &name) {
  for (auto &g : groups_) {
    if (g.name == name) return g;
  }
  throw ContractError("no parameter group named '" + name + "'");
}

const ParamGroup &AdamW::group(const std::string &name) const {
  return const_cast<AdamW *>(this)->group(name);
}

}  // namespace softlm
