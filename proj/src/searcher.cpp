#include "ccq/searcher.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace ccq {

QueryTable build_query_table(const Vector& query, const CcqModel& model,
                             int query_modality) {
  const Vector latent = map_to_latent(query, model, query_modality);
  QueryTable table;
  // words is D x (M*K); column-major reshape of words^T latent lines the MK
  // inner products up as a K x M table.
  const Vector flat = model.codebook.words.transpose() * latent;
  table.dots = Eigen::Map<const Matrix>(flat.data(), model.codebook.words_per_book,
                                        model.codebook.num_books);
  table.query_sq_norm = query.squaredNorm();
  table.query_modality = static_cast<std::uint8_t>(query_modality);
  table.fingerprint = model_fingerprint(model);
  table.norm_bin_centers = model.norm_bin_centers;
  return table;
}

namespace {

inline std::uint32_t subcode_at(std::span<const std::uint8_t> bytes,
                                int bits_per_subcode, int m) {
  std::uint32_t idx = 0;
  const int base = m * bits_per_subcode;
  for (int b = 0; b < bits_per_subcode; ++b) {
    const int bit = base + b;
    idx |= static_cast<std::uint32_t>((bytes[static_cast<std::size_t>(bit >> 3)] >>
                                       (bit & 7)) &
                                      1u)
           << b;
  }
  return idx;
}

// Sum of table lookups for one packed point; no allocation.
inline double dot_sum(const QueryTable& table, std::span<const std::uint8_t> point,
                      int bits_per_subcode) {
  double sum = 0.0;
  for (int m = 0; m < table.num_books(); ++m) {
    sum += table.dots(subcode_at(point, bits_per_subcode, m), m);
  }
  return sum;
}

inline double decoded_sq_norm(const Codebook& codebook,
                              std::span<const std::uint8_t> point,
                              int bits_per_subcode, Vector& scratch) {
  scratch.setZero();
  for (int m = 0; m < codebook.num_books; ++m) {
    scratch += codebook.word(m, subcode_at(point, bits_per_subcode, m));
  }
  return scratch.squaredNorm();
}

int checked_bits(const QueryTable& table, std::span<const std::uint8_t> point) {
  const std::size_t need =
      packed_code_bytes(table.num_books(), table.words_per_book());
  if (point.size() != need) {
    throw std::invalid_argument("packed point has the wrong size for this table");
  }
  return std::countr_zero(static_cast<std::uint32_t>(table.words_per_book()));
}

}  // namespace

double aqd_score(const QueryTable& table, std::span<const std::uint8_t> packed_point) {
  const int bits = checked_bits(table, packed_point);
  return -2.0 * dot_sum(table, packed_point, bits) +
         table.norm_bin_centers.at(packed_point.back());
}

double aqd_score_exact(const QueryTable& table,
                       std::span<const std::uint8_t> packed_point,
                       const Codebook& codebook) {
  const int bits = checked_bits(table, packed_point);
  Vector scratch(codebook.dim());
  return -2.0 * dot_sum(table, packed_point, bits) +
         decoded_sq_norm(codebook, packed_point, bits, scratch);
}

double aqd_score(const QueryTable& table, const PackedCodes& database,
                 std::size_t index) {
  if (table.fingerprint != database.fingerprint) {
    throw std::runtime_error("codes were produced by a different model");
  }
  return aqd_score(table, database.point(index));
}

namespace {

struct HeapEntry {
  double score;
  Eigen::Index index;
  bool operator<(const HeapEntry& o) const {
    return score < o.score || (score == o.score && index < o.index);
  }
};

class BoundedTopK {
 public:
  explicit BoundedTopK(std::size_t capacity) : capacity_(capacity) {}

  void offer(double score, Eigen::Index index) {
    if (capacity_ == 0) return;
    if (heap_.size() < capacity_) {
      heap_.push({score, index});
    } else if (HeapEntry{score, index} < heap_.top()) {
      heap_.pop();
      heap_.push({score, index});
    }
  }

  std::vector<SearchHit> take_sorted() {
    std::vector<SearchHit> hits(heap_.size());
    for (std::size_t i = heap_.size(); i-- > 0;) {
      hits[i] = {heap_.top().index, heap_.top().score};
      heap_.pop();
    }
    return hits;
  }

 private:
  std::size_t capacity_;
  std::priority_queue<HeapEntry> heap_;
};

}  // namespace

SearchResult search(const QueryTable& table, const PackedCodes& database,
                    Eigen::Index topk, NormMode mode, const Codebook* codebook,
                    ScanStats* stats) {
  if (table.fingerprint != database.fingerprint) {
    throw std::runtime_error("codes were produced by a different model");
  }
  if (static_cast<int>(database.num_books) != table.num_books() ||
      static_cast<int>(database.words_per_book) != table.words_per_book()) {
    throw std::runtime_error("code geometry does not match the query table");
  }
  if (mode == NormMode::ExactDecoded && codebook == nullptr) {
    throw std::invalid_argument("exact-norm search needs the codebook");
  }

  SearchResult result;
  const Eigen::Index n = static_cast<Eigen::Index>(database.count);
  if (topk > n) {
    topk = n;
    result.clamped = true;
  }

  const int bits = std::countr_zero(static_cast<std::uint32_t>(table.words_per_book()));
  Vector scratch(mode == NormMode::ExactDecoded ? codebook->dim() : 0);
  BoundedTopK top(static_cast<std::size_t>(std::max<Eigen::Index>(topk, 0)));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto point = database.point(static_cast<std::size_t>(i));
    const double norm_term =
        mode == NormMode::QuantizedByte
            ? table.norm_bin_centers.at(point.back())
            : decoded_sq_norm(*codebook, point, bits, scratch);
    top.offer(-2.0 * dot_sum(table, point, bits) + norm_term, i);
    if (stats) stats->table_lookups += static_cast<std::uint64_t>(table.num_books());
  }
  result.hits = top.take_sorted();
  return result;
}

SearchResult exact_latent_search(const Vector& query_latent, const Matrix& latents,
                                 Eigen::Index topk) {
  if (query_latent.size() != latents.rows()) {
    throw std::invalid_argument("latent dimension mismatch");
  }
  SearchResult result;
  const Eigen::Index n = latents.cols();
  if (topk > n) {
    topk = n;
    result.clamped = true;
  }
  BoundedTopK top(static_cast<std::size_t>(std::max<Eigen::Index>(topk, 0)));
  for (Eigen::Index i = 0; i < n; ++i) {
    top.offer((latents.col(i) - query_latent).norm(), i);
  }
  result.hits = top.take_sorted();
  return result;
}

}  // namespace ccq
