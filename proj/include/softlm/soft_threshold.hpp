// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "softlm/tensor.hpp"

namespace softlm {

/// Parameters of the differentiable cut-off applied to singular values:
///
///   f(x) = x * tanh(s (x - alpha))   for x >= alpha
///   f(x) = c * tanh(s (x - alpha))   for x <  alpha
struct SoftThresholdParams {
  double alpha = 0.0;
  double sharpness = 10.0;  // s, must be positive
  double below = 0.0;       // c

  void validate() const;
};

double soft_threshold(double x, const SoftThresholdParams &p);

std::vector<double> soft_threshold_forward(std::span<const double> x,
                                           const SoftThresholdParams &p);

struct SoftThresholdGrad {
  std::vector<double> dx;
  double dalpha = 0.0;  // summed over elements: alpha is shared
};

/// Analytic vector-Jacobian product. At x == alpha the x >= alpha branch is
/// used.
SoftThresholdGrad soft_threshold_backward(std::span<const double> x,
                                          const SoftThresholdParams &p,
                                          std::span<const double> upstream);

/// Graph op: sigma [r], alpha scalar -> thresholded [r]. Gradients flow to
/// both sigma and alpha.
Tensor soft_threshold(const Tensor &sigma, const Tensor &alpha, double sharpness,
                      double below = 0.0);

/// Solves t * tanh(s t) = target for t >= 0 by bisection (|error| <= 1e-12
/// relative). Used to pre-correct singular values so that the thresholded
/// layer reproduces the dense one at alpha = 0.
double invert_soft_gain(double target, double sharpness);

}  // namespace softlm
