// SPDX-License-Identifier: Apache-2.0
#include "softlm/metrics.hpp"

#include <cmath>
#include <string>

#include "softlm/errors.hpp"

namespace softlm {

namespace {

void check_sizes(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  }
  if (pred.empty()) throw DataError("metrics: empty evaluation set");
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                 std::size_t n_classes) {
  check_sizes(pred, truth);
  ConfusionMatrix cm(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(pred[i]);
    if (truth[i] < 0 || pred[i] < 0 || t >= n_classes || p >= n_classes) {
      throw ContractError("metrics: class index outside [0, " + std::to_string(n_classes) + ")");
    }
    ++cm[t][p];
  }
  return cm;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  check_sizes(pred, truth);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double f1_binary(std::span<const int> pred, std::span<const int> truth, int positive) {
  check_sizes(pred, truth);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const double denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2 * tp / denom;
}

double f1_macro(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes) {
  check_sizes(pred, truth);
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) total += f1_binary(pred, truth, static_cast<int>(c));
  return total / static_cast<double>(n_classes);
}

double mcc(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes) {
  const auto cm = confusion_matrix(pred, truth, n_classes);
  const auto K = n_classes;
  std::vector<double> t(K, 0.0), p(K, 0.0);
  double c = 0.0, s = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < K; ++i) {
    c += static_cast<double>(cm[i][i]);
    for (std::size_t j = 0; j < K; ++j) {
      t[i] += static_cast<double>(cm[i][j]);
      p[j] += static_cast<double>(cm[i][j]);
    }
  }
  double tp = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    tp += t[k] * p[k];
    pp += p[k] * p[k];
    tt += t[k] * t[k];
  }
  const double denom = std::sqrt(s * s - pp) * std::sqrt(s * s - tt);
  return denom == 0.0 ? 0.0 : (c * s - tp) / denom;
}

Metrics compute_metrics(std::span<const int> pred, std::span<const int> truth,
                        std::size_t n_classes) {
  return {accuracy(pred, truth), f1_macro(pred, truth, n_classes), mcc(pred, truth, n_classes)};
}

}  // namespace softlm
