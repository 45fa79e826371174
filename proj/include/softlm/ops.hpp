// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "softlm/tensor.hpp"

// Differentiable operations on Tensor. Every function records a backward
// rule when any input requires gradients. Broadcasting is limited to
// scalar-with-tensor (scale) and row-vector addition/multiplication.

namespace softlm {

// --- linear algebra --------------------------------------------------------

/// [M x K] . [K x N] -> [M x N]
Tensor matmul(const Tensor &a, const Tensor &b);
/// a . b^T for a [M x K], b [N x K] -> [M x N]
Tensor matmul_nt(const Tensor &a, const Tensor &b);
Tensor transpose(const Tensor &a);
/// Per-group product of [G x M x K] and [G x K x N] (or [G x N x K] when
/// transpose_b is set).
Tensor batched_matmul(const Tensor &a, const Tensor &b, bool transpose_b = false);

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double factor);
Tensor neg(const Tensor &a);
Tensor tanh(const Tensor &a);
Tensor exp(const Tensor &a);
/// tanh-approximated GELU.
Tensor gelu(const Tensor &a);

/// a [.. x N] + row [N] broadcast over leading dimensions.
Tensor add_row(const Tensor &a, const Tensor &row);
/// Multiplies column j of a [.. x K] by d[j].
Tensor scale_columns(const Tensor &a, const Tensor &d);

// --- reductions and normalisation -----------------------------------------

Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);
/// Sum of scalar tensors.
Tensor add_n(std::span<const Tensor> terms);

/// Softmax over the last dimension, max-subtracted.
Tensor softmax_rows(const Tensor &a);
/// Row-wise layer normalisation over the last dimension (eps 1e-5).
Tensor layer_norm(const Tensor &a, const Tensor &gain, const Tensor &bias);

// --- shape plumbing --------------------------------------------------------

Tensor reshape(const Tensor &a, Shape shape);
/// Gathers rows of table [V x D] -> [ids.size() x D].
Tensor embedding(const Tensor &table, std::span<const int> ids);
/// [B*L x H*dk] -> [B*H x L x dk]
Tensor split_heads(const Tensor &x, std::size_t batch, std::size_t seq,
                   std::size_t heads);
/// [B*H x L x dk] -> [B*L x H*dk]
Tensor merge_heads(const Tensor &x, std::size_t batch, std::size_t seq,
                   std::size_t heads);
/// Weighted mean over the sequence axis: x [B*L x D], weights [B*L] -> [B x D].
Tensor masked_mean_rows(const Tensor &x, std::size_t batch, std::size_t seq,
                        std::span<const double> weights);

}  // namespace softlm
