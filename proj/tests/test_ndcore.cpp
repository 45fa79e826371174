// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "softlm/errors.hpp"
#include "softlm/ops.hpp"
#include "softlm/tensor.hpp"

using namespace softlm;
using softlm::testing::check_gradients;
using softlm::testing::random_tensor;

namespace {

// Contracts an arbitrary-shaped output with fixed random weights so every
// output element receives a distinct upstream gradient.
Tensor probe(const Tensor &y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(y.shape(), rng, false);
  return sum(mul(y, w));
}

void require_ok(const softlm::testing::GradCheck &g) {
  INFO(g.where);
  CHECK(g.ok);
}

}  // namespace

TEST_CASE("matmul identity cases") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  auto y = matmul(a, eye);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});

  std::mt19937_64 rng(1);
  auto b = random_tensor({3, 3}, rng, false);
  Tensor i3({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto z = matmul(i3, b);
  for (std::size_t i = 0; i < 9; ++i) CHECK(z.at(i) == b.at(i));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("matmul gradients of sum(output) match finite differences") {
  std::mt19937_64 rng(2);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({3, 5}, rng);
  require_ok(check_gradients([&] { return sum(matmul(a, b)); }, {a, b}));
}

TEST_CASE("tanh and exp at zero") {
  auto x = Tensor::scalar(0.0, true);
  auto y = tanh(x);
  CHECK(y.item() == 0.0);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));

  auto z = Tensor::scalar(0.0, true);
  auto e = exp(z);
  CHECK(e.item() == 1.0);
  backward(e);
  CHECK(z.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("tanh at 0.7 against finite differences") {
  auto x = Tensor::scalar(0.7, true);
  const double h = 1e-5;
  backward(tanh(x));
  const double numeric = (std::tanh(0.7 + h) - std::tanh(0.7 - h)) / (2 * h);
  CHECK(std::abs(x.grad()[0] - numeric) < 1e-7);
  CHECK(std::abs(tanh(x).item() - std::tanh(0.7)) < 1e-15);
}

TEST_CASE("softmax rows") {
  auto s = softmax_rows(Tensor({1, 4}, {0, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.at(i) == doctest::Approx(0.25).epsilon(1e-15));

  auto big = softmax_rows(Tensor({1, 2}, {1000, 0}));
  CHECK(std::isfinite(big.at(0)));
  CHECK(big.at(0) == doctest::Approx(1.0));
  CHECK(big.at(1) < 1e-300);

  std::mt19937_64 rng(3);
  auto x = random_tensor({50, 7}, rng, false, -30.0, 30.0);
  auto p = softmax_rows(x);
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) total += p.at(r * 7 + c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer norm definition cases") {
  auto gain = Tensor::full({3}, 1.0);
  auto bias = Tensor::zeros({3});
  auto c = layer_norm(Tensor({1, 3}, {5, 5, 5}), gain, bias);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c.at(i) == 0.0);

  auto y = layer_norm(Tensor({1, 3}, {1, 2, 3}), gain, bias);
  const double m = (y.at(0) + y.at(1) + y.at(2)) / 3.0;
  double var = 0.0;
  for (std::size_t i = 0; i < 3; ++i) var += (y.at(i) - m) * (y.at(i) - m);
  var /= 3.0;
  CHECK(std::abs(m) < 1e-12);
  // The 1e-5 epsilon inside the root shifts the variance slightly below 1.
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("backward of sum and sum of squares") {
  std::mt19937_64 rng(4);
  auto w = random_tensor({3, 4}, rng);
  backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  backward(sum(mul(w, w)));
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == doctest::Approx(2 * w.at(i)));
}

TEST_CASE("a tensor feeding two consumers receives both contributions") {
  std::mt19937_64 rng(5);
  auto w = random_tensor({2, 3}, rng);
  backward(add(sum(w), sum(mul(w, w))));
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(w.grad()[i] == doctest::Approx(1.0 + 2.0 * w.at(i)).epsilon(1e-14));
  }
}

TEST_CASE("backward requires a scalar loss") {
  auto w = Tensor::zeros({2, 2}, true);
  CHECK_THROWS_AS(backward(w), ContractError);
}

TEST_CASE("composed graph matmul -> tanh -> sum") {
  std::mt19937_64 rng(6);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  require_ok(check_gradients([&] { return sum(tanh(matmul(a, b))); }, {a, b}));
}

TEST_CASE("every op passes the finite-difference check") {
  std::mt19937_64 rng(7);
  const double h = 1e-5;

  SUBCASE("matmul_nt") {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng);
    require_ok(check_gradients([&] { return probe(matmul_nt(a, b)); }, {a, b}, h));
  }
  SUBCASE("transpose") {
    auto a = random_tensor({3, 4}, rng);
    require_ok(check_gradients([&] { return probe(transpose(a)); }, {a}, h));
  }
  SUBCASE("batched_matmul") {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 2}, rng);
    require_ok(check_gradients([&] { return probe(batched_matmul(a, b)); }, {a, b}, h));
  }
  SUBCASE("batched_matmul transposed") {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 5, 4}, rng);
    require_ok(check_gradients([&] { return probe(batched_matmul(a, b, true)); }, {a, b}, h));
  }
  SUBCASE("add sub mul") {
    auto a = random_tensor({3, 2}, rng), b = random_tensor({3, 2}, rng);
    require_ok(check_gradients([&] { return probe(add(a, b)); }, {a, b}, h));
    require_ok(check_gradients([&] { return probe(sub(a, b)); }, {a, b}, h));
    require_ok(check_gradients([&] { return probe(mul(a, b)); }, {a, b}, h));
  }
  SUBCASE("scale neg") {
    auto a = random_tensor({4}, rng);
    require_ok(check_gradients([&] { return probe(scale(a, -2.5)); }, {a}, h));
    require_ok(check_gradients([&] { return probe(neg(a)); }, {a}, h));
  }
  SUBCASE("tanh exp gelu") {
    auto a = random_tensor({2, 5}, rng);
    require_ok(check_gradients([&] { return probe(tanh(a)); }, {a}, h));
    require_ok(check_gradients([&] { return probe(exp(a)); }, {a}, h));
    require_ok(check_gradients([&] { return probe(gelu(a)); }, {a}, h));
  }
  SUBCASE("add_row scale_columns") {
    auto a = random_tensor({2, 3, 4}, rng), r = random_tensor({4}, rng);
    require_ok(check_gradients([&] { return probe(add_row(a, r)); }, {a, r}, h));
    auto m = random_tensor({5, 3}, rng), d = random_tensor({3}, rng);
    require_ok(check_gradients([&] { return probe(scale_columns(m, d)); }, {m, d}, h));
  }
  SUBCASE("sum mean add_n") {
    auto a = random_tensor({3, 3}, rng);
    require_ok(check_gradients([&] { return mean(mul(a, a)); }, {a}, h));
    auto x = random_tensor({1}, rng), y = random_tensor({1}, rng);
    require_ok(check_gradients(
        [&] {
          std::vector<Tensor> terms = {sum(mul(x, x)), sum(y), sum(mul(x, y))};
          return add_n(terms);
        },
        {x, y}, h));
  }
  SUBCASE("softmax_rows") {
    auto a = random_tensor({3, 5}, rng);
    require_ok(check_gradients([&] { return probe(softmax_rows(a)); }, {a}, h));
  }
  SUBCASE("layer_norm") {
    auto a = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    require_ok(check_gradients([&] { return probe(layer_norm(a, g, b)); }, {a, g, b}, h));
  }
  SUBCASE("reshape embedding") {
    auto a = random_tensor({2, 6}, rng);
    require_ok(check_gradients([&] { return probe(reshape(a, {3, 4})); }, {a}, h));
    auto table = random_tensor({5, 3}, rng);
    const std::vector<int> ids = {4, 0, 4, 2};
    require_ok(check_gradients([&] { return probe(embedding(table, ids)); }, {table}, h));
  }
  SUBCASE("split_heads merge_heads") {
    auto x = random_tensor({2 * 3, 2 * 4}, rng);
    require_ok(check_gradients([&] { return probe(split_heads(x, 2, 3, 2)); }, {x}, h));
    auto y = random_tensor({2 * 2, 3, 4}, rng);
    require_ok(check_gradients([&] { return probe(merge_heads(y, 2, 3, 2)); }, {y}, h));
  }
  SUBCASE("masked_mean_rows") {
    auto x = random_tensor({2 * 3, 4}, rng);
    const std::vector<double> w = {1, 1, 0, 1, 0, 0};
    require_ok(check_gradients([&] { return probe(masked_mean_rows(x, 2, 3, w)); }, {x}, h));
  }
}

TEST_CASE("split_heads and merge_heads are inverse") {
  std::mt19937_64 rng(8);
  auto x = random_tensor({6, 8}, rng, false);
  auto back = merge_heads(split_heads(x, 2, 3, 4), 2, 3, 4);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.at(i) == x.at(i));
}

TEST_CASE("tape is in recording order and visits each node once") {
  std::mt19937_64 rng(9);
  auto a = random_tensor({3, 3}, rng);
  auto b = tanh(a);
  auto c = matmul(b, b);  // b consumed twice
  auto loss = sum(add(c, a));
  Tape tape(loss);
  const auto &nodes = tape.nodes();
  std::vector<detail::Node *> seen;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) CHECK(nodes[j] != nodes[i]);
    for (const auto &p : nodes[i]->parents) {
      if (!p->requires_grad) continue;
      bool earlier = false;
      for (std::size_t j = 0; j < i; ++j) earlier = earlier || nodes[j] == p.get();
      CHECK(earlier);
    }
  }
  // a, b, c, add, sum
  CHECK(tape.size() == 5);
}

TEST_CASE("no-grad mode records no graph") {
  auto a = Tensor::full({2, 2}, 0.5, true);
  {
    NoGradGuard guard;
    auto y = tanh(a);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tanh(a).requires_grad());
}

TEST_CASE("identical inputs give bit-identical outputs") {
  auto run = [] {
    std::mt19937_64 rng(10);
    auto a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
    auto g = random_tensor({3}, rng), bias = random_tensor({3}, rng);
    auto y = softmax_rows(layer_norm(gelu(matmul(a, b)), g, bias));
    backward(probe(y));
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  CHECK(run() == run());
}
