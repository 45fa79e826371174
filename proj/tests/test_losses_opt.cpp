// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "softlm/errors.hpp"
#include "softlm/losses.hpp"
#include "softlm/ops.hpp"
#include "softlm/optim.hpp"

using namespace softlm;
using softlm::testing::check_gradients;
using softlm::testing::random_tensor;

namespace {

std::vector<Tensor> scalars(std::initializer_list<double> values) {
  std::vector<Tensor> out;
  for (double v : values) out.push_back(Tensor::scalar(v, true));
  return out;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("cross entropy closed forms") {
  const std::vector<int> labels = {2};
  CHECK(cross_entropy(Tensor::zeros({1, 4}), labels).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor({1, 4}, {0, 0, 50, 0}), labels).item() < 1e-20);
}

TEST_CASE("cross entropy rejects bad labels and shapes") {
  const std::vector<int> bad = {4}, neg = {-1}, two = {0, 1};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), bad), ContractError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), neg), ContractError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), two), DimensionError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  std::mt19937_64 rng(51);
  auto logits = random_tensor({5, 3}, rng, true, -3.0, 3.0);
  const std::vector<int> labels = {0, 2, 1, 1, 0};
  auto g = check_gradients([&] { return cross_entropy(logits, labels); }, {logits});
  INFO(g.where);
  CHECK(g.ok);
}

TEST_CASE("linear compression term") {
  CHECK(compression_loss_linear(scalars({0, 0, 0})).item() == 0.0);
  CHECK(compression_loss_linear(scalars({1, 2, 3})).item() == -6.0);
}

TEST_CASE("adaptive compression term") {
  CHECK(compression_loss_adaptive(scalars({0, 0, 0})).item() == 3.0);
  CHECK(compression_loss_adaptive(scalars({800, 900})).item() == 0.0);
  CHECK(compression_loss_adaptive(scalars({0.5, 1.0})).item() ==
        doctest::Approx(std::exp(-0.5) + std::exp(-1.0)).epsilon(1e-15));
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> a(0.0, 20.0);
  for (int i = 0; i < 50; ++i) CHECK(compression_loss_adaptive(scalars({a(rng), a(rng)})).item() >= 0.0);
}

TEST_CASE("total loss assembly") {
  const auto alphas = scalars({0, 0, 0});
  auto l0 = total_loss(Tensor::scalar(2.0), alphas, 0.0, CompressionVariant::adaptive);
  CHECK(l0.l_tot == 2.0);
  CHECK(l0.total.item() == 2.0);

  auto l = total_loss(Tensor::scalar(2.0), alphas, 0.01, CompressionVariant::adaptive);
  CHECK(l.l_tot == doctest::Approx(2.03).epsilon(1e-15));
  CHECK(l.l_acmp == 3.0);
  CHECK(l.l_cmp == 0.0);
  CHECK(std::abs(l.l_tot - (l.l_acc + l.gamma * l.selected_term())) <= 1e-15);
  CHECK(std::abs(l.total.item() - l.l_tot) <= 1e-15);

  const auto mixed = scalars({0.3, 1.7});
  auto lin = total_loss(Tensor::scalar(0.9), mixed, 0.1, CompressionVariant::linear);
  CHECK(lin.selected_term() == lin.l_cmp);
  CHECK(std::abs(lin.total.item() - (0.9 + 0.1 * -2.0)) <= 1e-15);

  CHECK_THROWS_AS(total_loss(Tensor::scalar(1.0), alphas, -0.1, CompressionVariant::adaptive),
                  ContractError);
  CHECK(parse_variant("linear") == CompressionVariant::linear);
  CHECK(parse_variant("adaptive") == CompressionVariant::adaptive);
  CHECK_THROWS_AS(parse_variant("quadratic"), ConfigError);
}

TEST_CASE("adaptive term derivative is -exp(-alpha) pointwise") {
  auto alphas = scalars({0.0, 0.25, 1.0, 3.0, 7.5});
  backward(compression_loss_adaptive(alphas));
  for (const auto &a : alphas) CHECK(a.grad()[0] == doctest::Approx(-std::exp(-a.item())).epsilon(1e-15));

  auto lin = scalars({0.0, 2.0});
  backward(compression_loss_linear(lin));
  for (const auto &a : lin) CHECK(a.grad()[0] == -1.0);
}

TEST_CASE("adaptive pressure is weaker than linear and the gap widens") {
  double prev_gap = 0.0;
  for (double a = 0.01; a <= 10.0; a += 0.01) {
    auto x = Tensor::scalar(a, true);
    backward(compression_loss_adaptive(std::vector<Tensor>{x}));
    const double d = std::abs(x.grad()[0]);
    CHECK(d < 1.0);
    const double gap = 1.0 - d;
    CHECK(gap > prev_gap);
    prev_gap = gap;
  }
}

TEST_CASE("AdamW first step on a unit gradient moves by lr") {
  auto p = Tensor::scalar(1.0, true);
  AdamW opt({ParamGroup{"g", {p}, 0.1, 0.0, std::nullopt}});
  backward(p);
  opt.step();
  // m_hat / (sqrt(v_hat) + eps) = 1 / (1 + 1e-8)
  CHECK(p.item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW leaves a zero-gradient parameter alone without decay") {
  auto p = Tensor({3}, {0.5, -2.0, 4.0}, true);
  AdamW opt({ParamGroup{"g", {p}, 0.1, 0.0, std::nullopt}});
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    backward(sum(scale(p, 0.0)));
    opt.step();
  }
  CHECK(p.at(0) == 0.5);
  CHECK(p.at(1) == -2.0);
  CHECK(p.at(2) == 4.0);
}

TEST_CASE("decoupled weight decay on a zero gradient") {
  auto p = Tensor({2}, {1.0, -3.0}, true);
  AdamW opt({ParamGroup{"g", {p}, 0.1, 0.01, std::nullopt}});
  opt.step();
  CHECK(p.at(0) == doctest::Approx(1.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(p.at(1) == doctest::Approx(-3.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("a group with lr 0 stays bit-identical while others move") {
  auto alpha = Tensor::scalar(0.123456789, true);
  auto w = Tensor({2}, {0.3, 0.7}, true);
  AdamW opt({ParamGroup{"decay", {w}, 1e-2, 0.01, std::nullopt},
             ParamGroup{"threshold", {alpha}, 0.0, 0.0, 0.0}});
  const double before = alpha.item();
  for (int i = 0; i < 20; ++i) {
    opt.zero_grad();
    backward(add(sum(mul(w, w)), scale(alpha, 3.0)));
    opt.step();
    CHECK(bit_equal(alpha.item(), before));
  }
  CHECK(w.at(0) < 0.3);
  CHECK(opt.group("threshold").lr == 0.0);
  CHECK_THROWS_AS(opt.group("missing"), ContractError);
}

TEST_CASE("clamp_min holds thresholds at zero") {
  auto alpha = Tensor::scalar(0.001, true);
  AdamW opt({ParamGroup{"threshold", {alpha}, 0.1, 0.0, 0.0}});
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    backward(alpha);  // pushes alpha downward
    opt.step();
    CHECK(alpha.item() >= 0.0);
  }
  CHECK(alpha.item() == 0.0);
}

TEST_CASE("compression-only training raises every alpha on every step") {
  auto alphas = scalars({0.0, 0.0, 0.5, 2.0});
  AdamW opt({ParamGroup{"threshold", alphas, 1e-2, 0.0, 0.0}});
  std::vector<double> prev;
  for (const auto &a : alphas) prev.push_back(a.item());
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    auto l = total_loss(Tensor::scalar(0.0), alphas, 0.01, CompressionVariant::adaptive);
    backward(l.total);
    opt.step();
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      CHECK(alphas[i].item() > prev[i]);
      prev[i] = alphas[i].item();
    }
  }
}
