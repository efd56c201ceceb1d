#pragma once

#include "ccq/trainer.hpp"
#include "ccq/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ccq {

/// Tag marking codes produced by joint (fused multimodal) encoding.
constexpr std::uint8_t kJointModalityTag = 0xFF;

/// Byte-packed database codes: per point, M sub-codes packed little-endian
/// bit order (sub-code m occupies bits [m*log2K, (m+1)*log2K)) followed by one
/// norm byte. Carries the producing model's fingerprint.
struct PackedCodes {
  std::uint8_t modality_tag = 0;
  std::uint32_t num_books = 0;
  std::uint32_t words_per_book = 0;
  std::uint64_t fingerprint = 0;
  std::size_t count = 0;
  std::vector<std::uint8_t> buffer;

  std::size_t bytes_per_point() const;
  std::span<const std::uint8_t> point(std::size_t i) const;
};

/// Bytes per packed point: ceil(M*log2(K)/8) code bytes plus the norm byte.
std::size_t packed_code_bytes(int num_books, int words_per_book);

/// f^v(x) = R^v^T x. Throws on dimension mismatch.
Vector map_to_latent(const Vector& x, const CcqModel& model, int modality);

struct PointCode {
  CodeVec indices;
  std::uint8_t norm_byte = 0;
};

/// Index of the bin center nearest to the value (ascending centers).
std::uint8_t nearest_norm_bin(double sq_norm, std::span<const double> centers);

/// Maps then quantizes one out-of-sample point (single-modality subproblem;
/// greedy pass, refined by ICM sweeps when the model is configured for ICM).
PointCode encode_point(const Vector& x, const CcqModel& model, int modality);

void pack_code(std::span<const std::uint32_t> indices, std::uint8_t norm_byte,
               int words_per_book, std::span<std::uint8_t> out);
PointCode unpack_code(std::span<const std::uint8_t> bytes, int num_books,
                      int words_per_book);

/// Encodes every column of `features` against the model.
PackedCodes encode_database(const Matrix& features, const CcqModel& model,
                            int modality);

/// Fused codes for fully paired data: one code per column position, from the
/// weight-pooled joint subproblem over all modalities.
PackedCodes encode_joint_database(const std::vector<Matrix>& features,
                                  const CcqModel& model);

/// Packs one modality's stored training codes (norm bytes recomputed from the
/// decoded vectors).
PackedCodes pack_training_codes(const CodeMatrix& codes, int modality,
                                const CcqModel& model);

}  // namespace ccq
