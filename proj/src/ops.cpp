// SPDX-License-Identifier: Apache-2.0
#include "softlm/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "softlm/errors.hpp"

namespace softlm {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// Gradient buffer of a parent, or nullptr when it does not need one.
std::vector<double> *grad_of(const std::shared_ptr<Node> &p) {
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

void require_rank(const Tensor &t, std::size_t rank, const char *op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor finish(Tensor t, const char *op) {
  detail::check_finite(*t.node(), op);
  return t;
}

std::size_t last_dim(const Tensor &a) {
  if (a.rank() == 0) return 1;
  return a.shape().back();
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor &a, const char *name, Fwd fwd, Dfdx dfdx) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return finish(detail::make_result(a.shape(), std::move(out), {a},
                                    [dfdx](Node &self) {
                                      auto *ga = grad_of(self.parents[0]);
                                      if (!ga) return;
                                      const auto &xv = self.parents[0]->data;
                                      for (std::size_t i = 0; i < xv.size(); ++i) {
                                        (*ga)[i] += self.grad[i] * dfdx(xv[i], self.data[i]);
                                      }
                                    }),
                name);
}

}  // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    MMap(out.data(), m, n).noalias() =
        CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  }
  return finish(
      detail::make_result({m, n}, std::move(out), {a, b},
                          [m, k, n](Node &self) {
                            if (!m || !n || !k) return;
                            CMap dy(self.grad.data(), m, n);
                            const auto &pa = self.parents[0];
                            const auto &pb = self.parents[1];
                            if (auto *ga = grad_of(pa)) {
                              MMap(ga->data(), m, k).noalias() +=
                                  dy * CMap(pb->data.data(), k, n).transpose();
                            }
                            if (auto *gb = grad_of(pb)) {
                              MMap(gb->data(), k, n).noalias() +=
                                  CMap(pa->data.data(), m, k).transpose() * dy;
                            }
                          }),
      "matmul");
}

Tensor matmul_nt(const Tensor &a, const Tensor &b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    MMap(out.data(), m, n).noalias() =
        CMap(a.data().data(), m, k) * CMap(b.data().data(), n, k).transpose();
  }
  return finish(
      detail::make_result({m, n}, std::move(out), {a, b},
                          [m, k, n](Node &self) {
                            if (!m || !n || !k) return;
                            CMap dy(self.grad.data(), m, n);
                            const auto &pa = self.parents[0];
                            const auto &pb = self.parents[1];
                            if (auto *ga = grad_of(pa)) {
                              MMap(ga->data(), m, k).noalias() +=
                                  dy * CMap(pb->data.data(), n, k);
                            }
                            if (auto *gb = grad_of(pb)) {
                              MMap(gb->data(), n, k).noalias() +=
                                  dy.transpose() * CMap(pa->data.data(), m, k);
                            }
                          }),
      "matmul_nt");
}

Tensor transpose(const Tensor &a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MMap(out.data(), n, m) = CMap(a.data().data(), m, n).transpose();
  return detail::make_result({n, m}, std::move(out), {a}, [m, n](Node &self) {
    if (auto *ga = grad_of(self.parents[0])) {
      MMap(ga->data(), m, n) += CMap(self.grad.data(), n, m).transpose();
    }
  });
}

Tensor batched_matmul(const Tensor &a, const Tensor &b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const auto g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  const auto bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != g || bk != k) {
    throw DimensionError("batched_matmul: incompatible " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  std::vector<double> out(g * m * n, 0.0);
  const double *pa = a.data().data();
  const double *pb = b.data().data();
  for (std::size_t i = 0; i < g; ++i) {
    MMap y(out.data() + i * m * n, m, n);
    CMap ai(pa + i * m * k, m, k);
    if (transpose_b) {
      y.noalias() = ai * CMap(pb + i * n * k, n, k).transpose();
    } else {
      y.noalias() = ai * CMap(pb + i * k * n, k, n);
    }
  }
  return finish(
      detail::make_result(
          {g, m, n}, std::move(out), {a, b},
          [g, m, k, n, transpose_b](Node &self) {
            const auto &na = self.parents[0];
            const auto &nb = self.parents[1];
            auto *ga = grad_of(na);
            auto *gb = grad_of(nb);
            for (std::size_t i = 0; i < g; ++i) {
              CMap dy(self.grad.data() + i * m * n, m, n);
              CMap ai(na->data.data() + i * m * k, m, k);
              if (transpose_b) {
                CMap bi(nb->data.data() + i * n * k, n, k);
                if (ga) MMap(ga->data() + i * m * k, m, k).noalias() += dy * bi;
                if (gb) MMap(gb->data() + i * n * k, n, k).noalias() += dy.transpose() * ai;
              } else {
                CMap bi(nb->data.data() + i * k * n, k, n);
                if (ga) MMap(ga->data() + i * m * k, m, k).noalias() += dy * bi.transpose();
                if (gb) MMap(gb->data() + i * k * n, k, n).noalias() += ai.transpose() * dy;
              }
            }
          }),
      "batched_matmul");
}

Tensor add(const Tensor &a, const Tensor &b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish(detail::make_result(a.shape(), std::move(out), {a, b},
                                    [](Node &self) {
                                      for (auto &p : self.parents) {
                                        if (auto *g = grad_of(p)) {
                                          for (std::size_t i = 0; i < g->size(); ++i)
                                            (*g)[i] += self.grad[i];
                                        }
                                      }
                                    }),
                "add");
}

Tensor sub(const Tensor &a, const Tensor &b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish(detail::make_result(a.shape(), std::move(out), {a, b},
                                    [](Node &self) {
                                      if (auto *g = grad_of(self.parents[0])) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] += self.grad[i];
                                      }
                                      if (auto *g = grad_of(self.parents[1])) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] -= self.grad[i];
                                      }
                                    }),
                "sub");
}

Tensor mul(const Tensor &a, const Tensor &b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish(detail::make_result(a.shape(), std::move(out), {a, b},
                                    [](Node &self) {
                                      const auto &pa = self.parents[0];
                                      const auto &pb = self.parents[1];
                                      // a and b may be the same node
                                      if (auto *g = grad_of(pa)) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] += self.grad[i] * pb->data[i];
                                      }
                                      if (auto *g = grad_of(pb)) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] += self.grad[i] * pa->data[i];
                                      }
                                    }),
                "mul");
}

Tensor scale(const Tensor &a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor neg(const Tensor &a) { return scale(a, -1.0); }

Tensor tanh(const Tensor &a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor &a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor gelu(const Tensor &a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor add_row(const Tensor &a, const Tensor &row) {
  const auto n = last_dim(a);
  if (row.rank() != 1 || row.dim(0) != n) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) +
                         " does not match trailing dimension of " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto r = row.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += r[i % n];
  return finish(detail::make_result(a.shape(), std::move(out), {a, row},
                                    [n](Node &self) {
                                      if (auto *g = grad_of(self.parents[0])) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] += self.grad[i];
                                      }
                                      if (auto *g = grad_of(self.parents[1])) {
                                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          (*g)[i % n] += self.grad[i];
                                      }
                                    }),
                "add_row");
}

Tensor scale_columns(const Tensor &a, const Tensor &d) {
  const auto n = last_dim(a);
  if (d.rank() != 1 || d.dim(0) != n) {
    throw DimensionError("scale_columns: scale " + shape_str(d.shape()) +
                         " does not match trailing dimension of " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto s = d.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s[i % n];
  return finish(detail::make_result(a.shape(), std::move(out), {a, d},
                                    [n](Node &self) {
                                      const auto &pa = self.parents[0];
                                      const auto &pd = self.parents[1];
                                      if (auto *g = grad_of(pa)) {
                                        for (std::size_t i = 0; i < g->size(); ++i)
                                          (*g)[i] += self.grad[i] * pd->data[i % n];
                                      }
                                      if (auto *g = grad_of(pd)) {
                                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          (*g)[i % n] += self.grad[i] * pa->data[i];
                                      }
                                    }),
                "scale_columns");
}

Tensor sum(const Tensor &a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return finish(detail::make_result({}, {total}, {a},
                                    [](Node &self) {
                                      if (auto *g = grad_of(self.parents[0])) {
                                        for (auto &v : *g) v += self.grad[0];
                                      }
                                    }),
                "sum");
}

Tensor mean(const Tensor &a) {
  const auto n = a.numel();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor add_n(std::span<const Tensor> terms) {
  double total = 0.0;
  std::vector<Tensor> parents;
  parents.reserve(terms.size());
  for (const auto &t : terms) {
    if (t.numel() != 1) {
      throw DimensionError("add_n: expected scalars, got " + shape_str(t.shape()));
    }
    total += t.item();
    parents.push_back(t);
  }
  return finish(detail::make_result({}, {total}, std::move(parents),
                                    [](Node &self) {
                                      for (auto &p : self.parents) {
                                        if (auto *g = grad_of(p)) (*g)[0] += self.grad[0];
                                      }
                                    }),
                "add_n");
}

Tensor softmax_rows(const Tensor &a) {
  const auto n = last_dim(a);
  if (n == 0) throw DimensionError("softmax_rows: empty last dimension");
  const auto rows = a.numel() / n;
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double *xr = x.data() + r * n;
    double *yr = out.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  return finish(detail::make_result(a.shape(), std::move(out), {a},
                                    [n, rows](Node &self) {
                                      auto *g = grad_of(self.parents[0]);
                                      if (!g) return;
                                      for (std::size_t r = 0; r < rows; ++r) {
                                        const double *y = self.data.data() + r * n;
                                        const double *dy = self.grad.data() + r * n;
                                        double dot = 0.0;
                                        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                                        for (std::size_t j = 0; j < n; ++j)
                                          (*g)[r * n + j] += y[j] * (dy[j] - dot);
                                      }
                                    }),
                "softmax_rows");
}

Tensor layer_norm(const Tensor &a, const Tensor &gain, const Tensor &bias) {
  constexpr double eps = 1e-5;
  const auto n = last_dim(a);
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " vs input " + shape_str(a.shape()));
  }
  const auto rows = a.numel() / n;
  std::vector<double> xhat(a.numel()), inv(rows), out(a.numel());
  auto x = a.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double *xr = x.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * inv[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return finish(
      detail::make_result(
          a.shape(), std::move(out), {a, gain, bias},
          [n, rows, xhat = std::move(xhat), inv = std::move(inv)](Node &self) {
            auto *gx = grad_of(self.parents[0]);
            auto *gg = grad_of(self.parents[1]);
            auto *gb = grad_of(self.parents[2]);
            const auto &gv = self.parents[1]->data;
            std::vector<double> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
              const double *dy = self.grad.data() + r * n;
              const double *xh = xhat.data() + r * n;
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                dxhat[j] = dy[j] * gv[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xh[j];
                if (gg) (*gg)[j] += dy[j] * xh[j];
                if (gb) (*gb)[j] += dy[j];
              }
              if (!gx) continue;
              m1 /= static_cast<double>(n);
              m2 /= static_cast<double>(n);
              for (std::size_t j = 0; j < n; ++j) {
                (*gx)[r * n + j] += inv[r] * (dxhat[j] - m1 - xh[j] * m2);
              }
            }
          }),
      "layer_norm");
}

Tensor reshape(const Tensor &a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](Node &self) {
    if (auto *g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor embedding(const Tensor &table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  auto t = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(idx[i]) +
                          " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(t.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  const auto n = idx.size();
  return detail::make_result({n, d}, std::move(out), {table},
                             [d, idx = std::move(idx)](Node &self) {
                               auto *g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 double *row = g->data() + static_cast<std::size_t>(idx[i]) * d;
                                 for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
                               }
                             });
}

Tensor split_heads(const Tensor &x, std::size_t batch, std::size_t seq,
                   std::size_t heads) {
  require_rank(x, 2, "split_heads");
  const auto width = x.dim(1);
  if (x.dim(0) != batch * seq || heads == 0 || width % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                         std::to_string(batch) + " batches, " + std::to_string(seq) +
                         " positions, " + std::to_string(heads) + " heads");
  }
  const auto dk = width / heads;
  // out[(b*H + h)*L + l][j] = x[b*L + l][h*dk + j]
  auto index = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return std::pair{((b * heads + h) * seq + l) * dk + j, (b * seq + l) * width + h * dk + j};
  };
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < seq; ++l)
        for (std::size_t j = 0; j < dk; ++j) {
          auto [o, i] = index(b, h, l, j);
          out[o] = xv[i];
        }
  return detail::make_result({batch * heads, seq, dk}, std::move(out), {x},
                             [=](Node &self) {
                               auto *g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t l = 0; l < seq; ++l)
                                     for (std::size_t j = 0; j < dk; ++j) {
                                       auto [o, i] = index(b, h, l, j);
                                       (*g)[i] += self.grad[o];
                                     }
                             });
}

Tensor merge_heads(const Tensor &x, std::size_t batch, std::size_t seq,
                   std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (x.dim(0) != batch * heads || x.dim(1) != seq) {
    throw DimensionError("merge_heads: unexpected shape " + shape_str(x.shape()));
  }
  const auto dk = x.dim(2);
  const auto width = heads * dk;
  auto index = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t j) {
    return std::pair{(b * seq + l) * width + h * dk + j, ((b * heads + h) * seq + l) * dk + j};
  };
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < seq; ++l)
        for (std::size_t j = 0; j < dk; ++j) {
          auto [o, i] = index(b, h, l, j);
          out[o] = xv[i];
        }
  return detail::make_result({batch * seq, width}, std::move(out), {x},
                             [=](Node &self) {
                               auto *g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t l = 0; l < seq; ++l)
                                     for (std::size_t j = 0; j < dk; ++j) {
                                       auto [o, i] = index(b, h, l, j);
                                       (*g)[i] += self.grad[o];
                                     }
                             });
}

Tensor masked_mean_rows(const Tensor &x, std::size_t batch, std::size_t seq,
                        std::span<const double> weights) {
  require_rank(x, 2, "masked_mean_rows");
  if (x.dim(0) != batch * seq || weights.size() != batch * seq) {
    throw DimensionError("masked_mean_rows: " + shape_str(x.shape()) + " with " +
                         std::to_string(weights.size()) + " weights for batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  const auto d = x.dim(1);
  std::vector<double> w(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    double total = 0.0;
    for (std::size_t l = 0; l < seq; ++l) total += weights[b * seq + l];
    if (total <= 0.0) throw ContractError("masked_mean_rows: sequence with no active positions");
    for (std::size_t l = 0; l < seq; ++l) w[b * seq + l] = weights[b * seq + l] / total;
  }
  std::vector<double> out(batch * d, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < batch * seq; ++r) {
    if (w[r] == 0.0) continue;
    const auto b = r / seq;
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] += w[r] * xv[r * d + j];
  }
  return detail::make_result({batch, d}, std::move(out), {x},
                             [seq, d, w = std::move(w)](Node &self) {
                               auto *g = grad_of(self.parents[0]);
                               if (!g) return;
                               for (std::size_t r = 0; r < w.size(); ++r) {
                                 const auto b = r / seq;
                                 for (std::size_t j = 0; j < d; ++j)
                                   (*g)[r * d + j] += w[r] * self.grad[b * d + j];
                               }
                             });
}

}  // namespace softlm
