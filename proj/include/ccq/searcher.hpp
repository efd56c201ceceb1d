#pragma once

#include "ccq/encoder.hpp"
#include "ccq/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ccq {

/// Query-specific lookup table: dots(k, m) = <mapped query, codeword k of
/// book m>. Carries the query's squared norm (a ranking constant, never added
/// to scores) and a copy of the model's norm bin centers.
struct QueryTable {
  Matrix dots;  // K x M
  double query_sq_norm = 0.0;
  std::uint8_t query_modality = 0;
  std::uint64_t fingerprint = 0;
  std::vector<double> norm_bin_centers;

  int num_books() const { return static_cast<int>(dots.cols()); }
  int words_per_book() const { return static_cast<int>(dots.rows()); }
};

QueryTable build_query_table(const Vector& query, const CcqModel& model,
                             int query_modality);

/// Asymmetric quantizer distance of one packed point, minus the per-query
/// constant: -2 * sum_m dots[code_m, m] + decoded-norm term. Adding the
/// query's squared norm recovers || q - R * decoded ||^2 up to norm-bin
/// quantization error.
double aqd_score(const QueryTable& table, std::span<const std::uint8_t> packed_point);

/// Same score with the exact decoded squared norm instead of the norm byte.
double aqd_score_exact(const QueryTable& table,
                       std::span<const std::uint8_t> packed_point,
                       const Codebook& codebook);

/// Fingerprint-checked convenience overload.
double aqd_score(const QueryTable& table, const PackedCodes& database,
                 std::size_t index);

enum class NormMode : std::uint8_t { QuantizedByte = 0, ExactDecoded = 1 };

/// Optional instrumentation: number of table lookups performed by a scan.
struct ScanStats {
  std::uint64_t table_lookups = 0;
};

struct SearchHit {
  Eigen::Index index = 0;
  double score = 0.0;
};

/// Ranked hits, ascending score; ties ordered by database index. `clamped` is
/// set when the requested count exceeded the database size.
struct SearchResult {
  std::vector<SearchHit> hits;
  bool clamped = false;
};

/// Exact top-k by AQD over a full linear scan. Throws on a model fingerprint
/// mismatch between table and database. ExactDecoded mode needs the codebook.
SearchResult search(const QueryTable& table, const PackedCodes& database,
                    Eigen::Index topk, NormMode mode = NormMode::QuantizedByte,
                    const Codebook* codebook = nullptr, ScanStats* stats = nullptr);

/// Brute-force Euclidean top-k over uncompressed latent columns; scores are
/// plain L2 distances. Reranking/verification oracle.
SearchResult exact_latent_search(const Vector& query_latent, const Matrix& latents,
                                 Eigen::Index topk);

}  // namespace ccq
