// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "softlm/models.hpp"

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "SLM1"  u32 version
//   u32 len, topology JSON
//   u32 record count, then per record:
//     u8 tag (0 dense, 1 decomposed, 2 merged, 3 tensor), u32 len, name
//     dense:      u32 M, u32 N, u8 has_bias, W[M*N], bias[M]
//     decomposed: u32 M, u32 N, u32 r, f32 alpha, f32 s, f32 c, u8 frozen,
//                 u8 has_bias, U[M*r], sigma[r], V[N*r], bias[M]
//     merged:     u32 M, u32 N, u32 k, u8 has_bias, U^T[k*M], VS[N*k], bias[M]
//     tensor:     u32 rank, u32 dims[rank], data
//   u32 CRC-32 of every byte after the version field
//
// Payloads are float32; values are widened to float64 on load, so a
// save -> load -> save cycle reproduces the file byte for byte.

namespace softlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Classifier &model);
std::unique_ptr<Classifier> deserialize_checkpoint(const std::string &bytes);

void save_checkpoint(const Classifier &model, const std::filesystem::path &path);
std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path &path);

/// Rounds every parameter to float32 precision in place, so the in-memory
/// model matches what a checkpoint of it will hold.
void round_to_float32(Classifier &model);

}  // namespace softlm
