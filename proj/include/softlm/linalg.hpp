// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "softlm/tensor.hpp"

namespace softlm {

/// Thin SVD w = u . diag(sigma) . v^T with r = min(M, N) components.
///
/// sigma is non-increasing and non-negative. Each column of u has its
/// largest-magnitude entry non-negative, which fixes the sign ambiguity.
struct SvdResult {
  Tensor u;                   // [M x r]
  std::vector<double> sigma;  // r
  Tensor v;                   // [N x r]
  int sweeps = 0;             // Jacobi sweeps used
  double off_diagonal = 0.0;  // final max relative column coupling

  std::size_t rank() const { return sigma.size(); }
};

struct SvdOptions {
  int max_sweeps = 60;
  double tolerance = 1e-15;  // raised to rows*eps internally
};

/// One-sided (Hestenes) Jacobi SVD. Throws NumericalError carrying the
/// remaining off-diagonal residual if max_sweeps is exhausted.
SvdResult svd(const Tensor &w, const SvdOptions &options = {});

/// Keeps the leading k components. Throws ContractError unless 1 <= k <= r.
SvdResult truncate(const SvdResult &res, std::size_t k);

/// u . diag(sigma) . v^T as a fresh [M x N] tensor.
Tensor reconstruct(const SvdResult &res);

double frobenius_norm(const Tensor &a);

}  // namespace softlm
