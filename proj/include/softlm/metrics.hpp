// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace softlm {

/// counts[truth][pred]
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t n_classes);

double accuracy(std::span<const int> pred, std::span<const int> truth);

/// F1 of one class treated as positive: 2TP / (2TP + FP + FN); 0 when undefined.
double f1_binary(std::span<const int> pred, std::span<const int> truth, int positive = 1);

/// Unweighted mean of per-class F1.
double f1_macro(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes);

/// Matthews correlation coefficient, multiclass form (equals the usual binary
/// MCC for two classes). 0 when a marginal is degenerate.
double mcc(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes);

struct Metrics {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double mcc = 0.0;
};

Metrics compute_metrics(std::span<const int> pred, std::span<const int> truth,
                        std::size_t n_classes);

}  // namespace softlm
