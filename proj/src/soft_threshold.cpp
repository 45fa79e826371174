// SPDX-License-Identifier: Apache-2.0
#include "softlm/soft_threshold.hpp"

#include <cmath>
#include <string>

#include "softlm/errors.hpp"

namespace softlm {

void SoftThresholdParams::validate() const {
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) {
    throw ContractError("soft threshold sharpness must be positive, got " +
                        std::to_string(sharpness));
  }
}

double soft_threshold(double x, const SoftThresholdParams &p) {
  const double t = std::tanh(p.sharpness * (x - p.alpha));
  return x >= p.alpha ? x * t : p.below * t;
}

std::vector<double> soft_threshold_forward(std::span<const double> x,
                                           const SoftThresholdParams &p) {
  p.validate();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = soft_threshold(x[i], p);
  return out;
}

SoftThresholdGrad soft_threshold_backward(std::span<const double> x,
                                          const SoftThresholdParams &p,
                                          std::span<const double> upstream) {
  p.validate();
  if (upstream.size() != x.size()) {
    throw DimensionError("soft_threshold_backward: " + std::to_string(upstream.size()) +
                         " upstream values for " + std::to_string(x.size()) + " inputs");
  }
  SoftThresholdGrad g;
  g.dx.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = std::tanh(p.sharpness * (x[i] - p.alpha));
    const double sech2 = 1.0 - t * t;
    double dfdx, dfda;
    if (x[i] >= p.alpha) {
      dfdx = t + x[i] * p.sharpness * sech2;
      dfda = -x[i] * p.sharpness * sech2;
    } else {
      dfdx = p.below * p.sharpness * sech2;
      dfda = -p.below * p.sharpness * sech2;
    }
    g.dx[i] = upstream[i] * dfdx;
    g.dalpha += upstream[i] * dfda;
  }
  return g;
}

Tensor soft_threshold(const Tensor &sigma, const Tensor &alpha, double sharpness,
                      double below) {
  if (sigma.rank() != 1) {
    throw DimensionError("soft_threshold: sigma must be a vector, got " +
                         shape_str(sigma.shape()));
  }
  if (alpha.numel() != 1) {
    throw DimensionError("soft_threshold: alpha must be a scalar, got " +
                         shape_str(alpha.shape()));
  }
  const SoftThresholdParams p{alpha.item(), sharpness, below};
  auto out = soft_threshold_forward(sigma.data(), p);
  return detail::make_result(sigma.shape(), std::move(out), {sigma, alpha},
                             [sharpness, below](detail::Node &self) {
                               const auto &ps = self.parents[0];
                               const auto &pa = self.parents[1];
                               const SoftThresholdParams q{pa->data[0], sharpness, below};
                               auto g = soft_threshold_backward(ps->data, q, self.grad);
                               if (ps->requires_grad) {
                                 auto &gs = ps->grad_buffer();
                                 for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g.dx[i];
                               }
                               if (pa->requires_grad) pa->grad_buffer()[0] += g.dalpha;
                             });
}

double invert_soft_gain(double target, double sharpness) {
  if (!(sharpness > 0.0)) throw ContractError("invert_soft_gain: sharpness must be positive");
  if (target <= 0.0) return 0.0;
  auto gain = [sharpness](double t) { return t * std::tanh(sharpness * t); };
  double lo = 0.0, hi = target + 1.0 / sharpness;
  while (gain(hi) < target) hi *= 2.0;
  // Bisect to adjacent doubles; cheap, and keeps the error relative for tiny targets.
  for (int it = 0; it < 2100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (gain(mid) < target ? lo : hi) = mid;
  }
  return std::abs(gain(lo) - target) <= std::abs(gain(hi) - target) ? lo : hi;
}

}  // namespace softlm
