#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ccq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexMatrix = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Number of bins used to quantize decoded squared norms into one byte.
constexpr int kNormBinCount = 256;

enum class EncodeMode : std::uint8_t { Icm = 0, Greedy = 1 };

/// Hyperparameters of a composite correlation quantizer.
///
/// Code length is num_codebooks * log2(codewords_per_book) bits; the latent
/// dimension defaults to min(min_v P_v, code length) when left at 0.
struct CcqConfig {
  int num_modalities = 2;
  int num_codebooks = 4;
  int codewords_per_book = 256;  // must be a power of two
  int latent_dim = 0;            // 0 = derive from data and code length
  std::vector<double> modality_weights;  // empty = all ones
  int max_outer_iters = 30;
  int icm_sweeps = 3;  // per-point coordinate sweeps; greedy mode uses 1 pass
  EncodeMode encode_mode = EncodeMode::Icm;
  double ridge = 1e-6;  // scale of the Gram regularizer in the codebook update
  double convergence_tol = 1e-4;
  std::uint64_t seed = 0;
  Eigen::Index batch_size = 0;  // 0 = single full batch
};

bool is_power_of_two(std::uint64_t x);

/// Bits per packed code: M * log2(K). Throws std::invalid_argument when K is
/// not a power of two.
int code_length_bits(const CcqConfig& config);

/// Sorted set of concept ids attached to one object.
using LabelSet = std::vector<std::int32_t>;

/// Per-modality feature matrices (one column per object). The first
/// paired_count columns of every modality are aligned cross-modal pairs.
struct ModalDataset {
  std::vector<Matrix> features;          // X^v, shape P_v x N_v
  Eigen::Index paired_count = 0;         // N0
  std::vector<std::vector<LabelSet>> labels;  // optional, per modality per object

  int num_modalities() const { return static_cast<int>(features.size()); }
  Eigen::Index count(int v) const { return features[v].cols(); }
  Eigen::Index dim(int v) const { return features[v].rows(); }
  Eigen::Index min_count() const;
  Eigen::Index min_dim() const;
};

/// Per-modality semi-orthogonal maps into the shared latent space.
struct Mappings {
  std::vector<Matrix> per_modality;  // R^v, shape P_v x D, orthonormal columns
};

/// Max-norm of R^T R - I; zero for an exactly semi-orthogonal matrix.
double orthogonality_residual(const Matrix& r);

/// M codebooks of K codewords each, shared across modalities. A point decodes
/// to the sum of one codeword per book.
struct Codebook {
  int num_books = 0;       // M
  int words_per_book = 0;  // K
  Matrix words;            // D x (M*K); book m occupies columns [m*K, (m+1)*K)

  Eigen::Index dim() const { return words.rows(); }
  auto word(int m, std::uint32_t k) const {
    return words.col(static_cast<Eigen::Index>(m) * words_per_book + k);
  }
  auto book(int m) const {
    return words.middleCols(static_cast<Eigen::Index>(m) * words_per_book,
                            words_per_book);
  }
  Vector decode(std::span<const std::uint32_t> code) const;
  /// Allocation-free variant for hot loops.
  void decode_into(std::span<const std::uint32_t> code, Eigen::Ref<Vector> out) const;
};

/// Per-modality M x N_v codeword index matrices. Columns n < paired_count hold
/// one shared code replicated across modalities.
struct CodeMatrix {
  std::vector<IndexMatrix> per_modality;
};

/// The learned model: configuration, mappings, shared codebook, the norm-byte
/// quantizer bin centers, and the per-iteration training objective log.
struct CcqModel {
  CcqConfig config;
  Mappings mappings;
  Codebook codebook;
  std::vector<double> norm_bin_centers;  // kNormBinCount, ascending
  std::vector<double> training_log;
};

/// 64-bit FNV-1a hash of the model's numeric content (config, mappings,
/// codebook, norm bins). Codes carry it so stale model/code pairings are
/// detected at search time.
std::uint64_t model_fingerprint(const CcqModel& model);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Fills defaulted fields: latent_dim = min(min_v P_v, code bits) and unit
/// modality weights.
CcqConfig resolved_config(CcqConfig config, const ModalDataset& data);

/// Report-style validation of a (resolved) config against a dataset.
ValidationReport validate_config(const CcqConfig& config, const ModalDataset& data);

}  // namespace ccq
