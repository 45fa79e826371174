// SPDX-License-Identifier: Apache-2.0
#include "softlm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "softlm/errors.hpp"

namespace softlm {

namespace {

// Column-major scratch matrix; Jacobi rotations touch whole columns.
struct ColMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  ColMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double *col(std::size_t j) { return v.data() + j * rows; }
  const double *col(std::size_t j) const { return v.data() + j * rows; }
};

double dot(const double *a, const double *b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Jacobi on a tall matrix (rows >= cols). On return `a` holds U*Sigma in its
// columns and `v` the accumulated right rotations.
void hestenes(ColMatrix &a, ColMatrix &v, const SvdOptions &opt, int &sweeps,
              double &off) {
  const auto n = a.cols, m = a.rows;
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;
  sweeps = 0;
  off = 0.0;
  // Dot products carry ~m*eps relative rounding; never ask for less.
  const double tol = std::max(opt.tolerance,
                              static_cast<double>(m) * std::numeric_limits<double>::epsilon());
  for (; sweeps < opt.max_sweeps;) {
    ++sweeps;
    off = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double *ap = a.col(p);
        double *aq = a.col(q);
        const double alpha = dot(ap, ap, m);
        const double beta = dot(aq, aq, m);
        const double gamma = dot(ap, aq, m);
        if (alpha == 0.0 || beta == 0.0) continue;
        const double coupling = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, coupling);
        if (coupling <= tol) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = ap[i], y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        double *vp = v.col(p);
        double *vq = v.col(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericalError("jacobi svd did not converge in " +
                           std::to_string(opt.max_sweeps) +
                           " sweeps; off-diagonal residual " + std::to_string(off),
                       off);
}

// Fills column j of q with a unit vector orthogonal to columns [0, j).
void complete_column(ColMatrix &q, std::size_t j) {
  const auto m = q.rows;
  for (std::size_t e = 0; e < m; ++e) {
    std::vector<double> cand(m, 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        const double proj = dot(q.col(k), cand.data(), m);
        for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * q.col(k)[i];
      }
    }
    const double nrm = std::sqrt(dot(cand.data(), cand.data(), m));
    if (nrm > 0.5) {
      for (std::size_t i = 0; i < m; ++i) q.col(j)[i] = cand[i] / nrm;
      return;
    }
  }
}

}  // namespace

SvdResult svd(const Tensor &w, const SvdOptions &options) {
  if (w.rank() != 2 || w.dim(0) == 0 || w.dim(1) == 0) {
    throw DimensionError("svd: expected a non-empty matrix, got " + shape_str(w.shape()));
  }
  for (double x : w.data()) {
    if (!std::isfinite(x)) throw ContractError("svd: non-finite entry in input");
  }
  const auto rows = w.dim(0), cols = w.dim(1);
  const bool wide = rows < cols;
  // Work on the tall orientation: A = W (or W^T when wide).
  const auto m = wide ? cols : rows;
  const auto n = wide ? rows : cols;
  ColMatrix a(m, n), rv(n, n);
  auto src = w.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      if (wide) a.col(i)[j] = src[i * cols + j];
      else a.col(j)[i] = src[i * cols + j];
    }

  SvdResult out;
  hestenes(a, rv, options, out.sweeps, out.off_diagonal);

  std::vector<double> sig(n);
  for (std::size_t j = 0; j < n; ++j) sig[j] = std::sqrt(dot(a.col(j), a.col(j), m));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  const double smax = sig[order[0]];
  const double tiny = static_cast<double>(m) * std::numeric_limits<double>::epsilon() * smax;
  ColMatrix left(m, n), right(n, n);
  std::vector<double> sorted(n);
  std::vector<bool> deficient(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const auto j = order[k];
    sorted[k] = sig[j];
    std::copy_n(rv.col(j), n, right.col(k));
    if (sig[j] > tiny && sig[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) left.col(k)[i] = a.col(j)[i] / sig[j];
    } else {
      deficient[k] = true;
    }
  }
  // Rank-deficient directions: any orthonormal completion reconstructs W.
  for (std::size_t k = 0; k < n; ++k) {
    if (deficient[k]) complete_column(left, k);
  }

  // Map back: W = left . S . right^T (tall) or W = right . S . left^T (wide).
  ColMatrix &uc = wide ? right : left;
  ColMatrix &vc = wide ? left : right;
  const auto r = n;
  for (std::size_t k = 0; k < r; ++k) {
    double *uk = uc.col(k);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < uc.rows; ++i) {
      if (std::abs(uk[i]) > std::abs(uk[arg])) arg = i;
    }
    if (uk[arg] < 0.0) {
      for (std::size_t i = 0; i < uc.rows; ++i) uk[i] = -uk[i];
      double *vk = vc.col(k);
      for (std::size_t i = 0; i < vc.rows; ++i) vk[i] = -vk[i];
    }
  }
  std::vector<double> udata(rows * r), vdata(cols * r);
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t i = 0; i < rows; ++i) udata[i * r + k] = uc.col(k)[i];
    for (std::size_t i = 0; i < cols; ++i) vdata[i * r + k] = vc.col(k)[i];
  }
  out.u = Tensor({rows, r}, std::move(udata));
  out.v = Tensor({cols, r}, std::move(vdata));
  out.sigma = std::move(sorted);
  return out;
}

SvdResult truncate(const SvdResult &res, std::size_t k) {
  const auto r = res.rank();
  if (k < 1 || k > r) {
    throw ContractError("truncate: rank " + std::to_string(k) + " outside [1, " +
                        std::to_string(r) + "]");
  }
  auto take = [&](const Tensor &t) {
    const auto rows = t.dim(0);
    std::vector<double> d(rows * k);
    auto src = t.data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.data() + i * r, k, d.data() + i * k);
    return Tensor({rows, k}, std::move(d));
  };
  SvdResult out;
  out.u = take(res.u);
  out.v = take(res.v);
  out.sigma.assign(res.sigma.begin(), res.sigma.begin() + static_cast<std::ptrdiff_t>(k));
  out.sweeps = res.sweeps;
  out.off_diagonal = res.off_diagonal;
  return out;
}

Tensor reconstruct(const SvdResult &res) {
  const auto m = res.u.dim(0), n = res.v.dim(0), r = res.rank();
  std::vector<double> w(m * n, 0.0);
  auto u = res.u.data();
  auto v = res.v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      const double uk = u[i * r + k] * res.sigma[k];
      if (uk == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) w[i * n + j] += uk * v[j * r + k];
    }
  return Tensor({m, n}, std::move(w));
}

double frobenius_norm(const Tensor &a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace softlm
