// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "softlm/errors.hpp"
#include "softlm/ops.hpp"
#include "softlm/soft_threshold.hpp"

using namespace softlm;
using softlm::testing::check_gradients;

TEST_CASE("value at the breakpoint is zero") {
  for (double c : {0.0, 0.7}) {
    const SoftThresholdParams p{0.4, 10.0, c};
    CHECK(soft_threshold(0.4, p) == 0.0);
  }
}

TEST_CASE("below the threshold with c = 0 is exactly zero") {
  const SoftThresholdParams p{1.0, 10.0, 0.0};
  const std::vector<double> x = {0.0, 0.3, 0.999999};
  for (double y : soft_threshold_forward(x, p)) CHECK(y == 0.0);
}

TEST_CASE("x = 2, alpha = 1, s = 10") {
  const SoftThresholdParams p{1.0, 10.0, 0.0};
  const long double want = 2.0L * std::tanh(10.0L);
  CHECK(std::abs(soft_threshold(2.0, p) - static_cast<double>(want)) <= 1e-15);
}

TEST_CASE("derivatives at x = alpha") {
  const SoftThresholdParams p{0.5, 10.0, 0.0};
  const std::vector<double> x = {0.5}, up = {1.0};
  const auto g = soft_threshold_backward(x, p, up);
  CHECK(g.dx[0] == doctest::Approx(0.5 * 10.0).epsilon(1e-15));
  CHECK(g.dalpha == doctest::Approx(-0.5 * 10.0).epsilon(1e-15));
}

TEST_CASE("all inputs below alpha with c = 0 give zero gradients") {
  const SoftThresholdParams p{2.0, 10.0, 0.0};
  const std::vector<double> x = {0.1, 1.0, 1.9}, up = {1.0, -3.0, 2.0};
  const auto g = soft_threshold_backward(x, p, up);
  for (double d : g.dx) CHECK(d == 0.0);
  CHECK(g.dalpha == 0.0);
}

TEST_CASE("analytic gradients match finite differences away from the breakpoint") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> above(0.35, 1.5);
  std::vector<double> xs(12);
  for (auto &x : xs) x = above(rng);
  Tensor sigma({12}, xs, true);
  auto alpha = Tensor::scalar(0.3, true);
  Tensor w({12}, std::vector<double>(12, 0.0));
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  for (auto &c : w.mutable_data()) c = coef(rng);
  auto g = check_gradients([&] { return sum(mul(soft_threshold(sigma, alpha, 10.0), w)); },
                           {sigma, alpha});
  INFO(g.where);
  CHECK(g.ok);
}

TEST_CASE("both branches match finite differences when c is non-zero") {
  // Elements sit on both sides of alpha, none within 0.05 of it.
  Tensor sigma({6}, {0.05, 0.2, 0.45, 0.7, 0.9, 1.3}, true);
  auto alpha = Tensor::scalar(0.6, true);
  auto g = check_gradients([&] { return sum(soft_threshold(sigma, alpha, 4.0, 0.3)); },
                           {sigma, alpha});
  INFO(g.where);
  CHECK(g.ok);
}

TEST_CASE("continuity at the breakpoint") {
  const SoftThresholdParams p{0.8, 10.0, 0.0};
  double prev = 1.0;
  for (double eps : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const double gap = std::abs(soft_threshold(0.8 + eps, p) - soft_threshold(0.8 - eps, p));
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-7);
}

TEST_CASE("non-increasing in alpha") {
  for (double x : {0.0, 0.2, 0.9, 3.0}) {
    double prev = soft_threshold(x, {0.0, 10.0, 0.0});
    for (double a = 0.05; a <= 4.0; a += 0.05) {
      const double y = soft_threshold(x, {a, 10.0, 0.0});
      CHECK(y <= prev);
      prev = y;
    }
  }
}

TEST_CASE("hard-threshold limit at s = 1e4") {
  const double alpha = 0.5;
  for (double x : {0.0, 0.1, 0.49, 0.51, 0.8, 2.0}) {
    const double y = soft_threshold(x, {alpha, 1e4, 0.0});
    const double hard = x > alpha ? x : 0.0;
    CHECK(std::abs(y - hard) <= 1e-3);
  }
}

TEST_CASE("sharpness must be positive") {
  const std::vector<double> x = {1.0};
  CHECK_THROWS_AS(soft_threshold_forward(x, {0.0, 0.0, 0.0}), ContractError);
  CHECK_THROWS_AS(soft_threshold_forward(x, {0.0, -1.0, 0.0}), ContractError);
}

TEST_CASE("gain inversion solves t tanh(s t) = target") {
  for (double s : {1.0, 10.0, 100.0}) {
    for (double target : {1e-6, 1e-3, 0.05, 0.5, 1.0, 7.0, 120.0}) {
      const double t = invert_soft_gain(target, s);
      CHECK(t >= 0.0);
      CHECK(std::abs(t * std::tanh(s * t) - target) <= 1e-12 * target);
    }
  }
  CHECK(invert_soft_gain(0.0, 10.0) == 0.0);
}
