#pragma once

#include "ccq/types.hpp"

#include <span>
#include <vector>

namespace ccq {

using CodeVec = std::vector<std::uint32_t>;

/// One per-point quantization subproblem in the latent space:
///
///   minimize  weight * || target - sum_m C_m[code_m] ||^2 + bias
///
/// over the M codeword indices. An unpaired point contributes its single
/// latent; a paired point contributes one latent per modality, which collapses
/// to the weighted mean latent plus a code-independent bias (the cross terms
/// cancel), so every encoder works on one effective target vector.
struct EncodeTarget {
  Vector target;
  double weight = 1.0;
  double bias = 0.0;

  static EncodeTarget single(Vector latent, double weight = 1.0);
  static EncodeTarget joint(std::span<const Vector> latents,
                            std::span<const double> weights);
};

/// Objective value of a code under the subproblem (same arithmetic path for
/// every encoder, so their outputs are directly comparable).
double encode_cost(const EncodeTarget& problem, const Codebook& codebook,
                   std::span<const std::uint32_t> code);

/// Sequential residual encoding: per book, pick the codeword nearest to the
/// running residual. Ties break to the smallest index.
CodeVec encode_greedy(const EncodeTarget& problem, const Codebook& codebook);

/// Coordinate descent over code blocks from init_code: each step re-picks one
/// book's codeword with the others fixed, which never increases the cost.
/// Stops after `sweeps` full sweeps or when a sweep changes nothing.
CodeVec encode_icm(const EncodeTarget& problem, const Codebook& codebook,
                   std::span<const std::uint32_t> init_code, int sweeps);

/// Global minimizer by full enumeration; test oracle only. Ties break to the
/// lexicographically smallest tuple. Throws when K^M exceeds 10^6.
CodeVec exhaustive_encode(const EncodeTarget& problem, const Codebook& codebook);

/// Model + codes mid-training. `objective` tracks the weighted reconstruction
/// error sum_v sum_n lambda_v ||x_n^v - R^v sum_m C_m code||^2 and is refreshed
/// from scratch after every block update.
struct TrainState {
  CcqModel model;
  CodeMatrix codes;
  int iteration = 0;
  double objective = 0.0;
};

/// Accumulated mini-batch statistics for the mapping and codebook updates:
/// per-modality cross products (unweighted), and the weight-pooled Gram and
/// target of the codebook normal equations. Additive over any partition of
/// the dataset columns.
struct SufficientStats {
  std::vector<Matrix> cross;  // per modality: sum_n x_n (C code_n)^T, P_v x D
  Matrix gram;                // sum_v lambda_v sum_n code_n code_n^T, MK x MK
  Matrix target;              // sum_v lambda_v sum_n (R^v^T x_n) code_n^T, D x MK
};

/// Alternating-optimization learner. Holds a reference to the dataset; one
/// outer iteration runs the mapping, codebook, and code updates in that order.
class Trainer {
 public:
  /// Resolves config defaults against the data and validates; throws
  /// std::invalid_argument listing the violations if invalid.
  Trainer(const ModalDataset& data, const CcqConfig& config);

  const CcqConfig& config() const { return cfg_; }

  /// Identity-slab mappings, Gaussian codebook scaled to the data standard
  /// deviation (seeded), and codes from one greedy pass. Deterministic per
  /// seed.
  TrainState initialize() const;

  /// Orthogonal-Procrustes mapping update: per modality, the thin SVD of the
  /// cross statistic gives R = U V^T. Never increases the objective.
  void update_mappings(TrainState& state) const;

  /// Regularized least-squares codebook update from the pooled normal
  /// equations; the ridge keeps unused codewords finite (pinned to zero).
  void update_codebook(TrainState& state) const;

  /// Re-encodes every point per the configured mode. Paired-prefix points get
  /// one shared code from the weight-pooled joint subproblem; a new code is
  /// kept only if it does not cost more than the current one.
  void update_codes(TrainState& state) const;

  /// Reconstruction objective recomputed from scratch.
  double objective(const TrainState& state) const;

  SufficientStats zero_stats() const;

  /// Adds columns [col_begin, col_end) of every modality (clipped to each
  /// modality's count) to the statistics. Summing over any partition matches
  /// the full-batch products up to floating-point accumulation order.
  void accumulate_stats(Eigen::Index col_begin, Eigen::Index col_end,
                        const TrainState& state, SufficientStats& stats) const;

  /// Full training loop: initialize, iterate until the relative objective
  /// decrease falls below convergence_tol or max_outer_iters is reached, then
  /// fit the norm-byte quantizer on the decoded training norms.
  TrainState train() const;

  /// Squared norms of all decoded code columns (all modalities).
  std::vector<double> decoded_sq_norms(const TrainState& state) const;

 private:
  void encode_all(TrainState& state, bool force_greedy) const;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> batch_ranges() const;

  const ModalDataset* data_;
  CcqConfig cfg_;
};

/// Uniform norm-byte quantizer: kNormBinCount bin centers spread over
/// [min, max] of the given squared norms.
std::vector<double> fit_norm_bins(std::span<const double> sq_norms);

}  // namespace ccq
