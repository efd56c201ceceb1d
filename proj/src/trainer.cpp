#include "ccq/trainer.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ccq {

EncodeTarget EncodeTarget::single(Vector latent, double weight) {
  EncodeTarget p;
  p.target = std::move(latent);
  p.weight = weight;
  p.bias = 0.0;
  return p;
}

EncodeTarget EncodeTarget::joint(std::span<const Vector> latents,
                                 std::span<const double> weights) {
  if (latents.empty() || latents.size() != weights.size()) {
    throw std::invalid_argument("joint target needs one weight per latent");
  }
  double total = 0.0;
  Vector mean = Vector::Zero(latents[0].size());
  double sq = 0.0;
  for (std::size_t v = 0; v < latents.size(); ++v) {
    total += weights[v];
    mean += weights[v] * latents[v];
    sq += weights[v] * latents[v].squaredNorm();
  }
  mean /= total;
  EncodeTarget p;
  p.weight = total;
  p.bias = std::max(0.0, sq - total * mean.squaredNorm());
  p.target = std::move(mean);
  return p;
}

double encode_cost(const EncodeTarget& problem, const Codebook& codebook,
                   std::span<const std::uint32_t> code) {
  const Vector decoded = codebook.decode(code);
  return problem.weight * (problem.target - decoded).squaredNorm() + problem.bias;
}

CodeVec encode_greedy(const EncodeTarget& problem, const Codebook& codebook) {
  const int num_books = codebook.num_books;
  const int book_size = codebook.words_per_book;
  CodeVec code(static_cast<std::size_t>(num_books), 0);
  Vector residual = problem.target;
  for (int m = 0; m < num_books; ++m) {
    std::uint32_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int k = 0; k < book_size; ++k) {
      const double cost = (residual - codebook.word(m, static_cast<std::uint32_t>(k)))
                              .squaredNorm();
      if (cost < best_cost) {
        best_cost = cost;
        best = static_cast<std::uint32_t>(k);
      }
    }
    code[static_cast<std::size_t>(m)] = best;
    residual -= codebook.word(m, best);
  }
  return code;
}

CodeVec encode_icm(const EncodeTarget& problem, const Codebook& codebook,
                   std::span<const std::uint32_t> init_code, int sweeps) {
  const int num_books = codebook.num_books;
  const int book_size = codebook.words_per_book;
  if (static_cast<int>(init_code.size()) != num_books) {
    throw std::invalid_argument("init code length must equal num_books");
  }
  CodeVec code(init_code.begin(), init_code.end());
  Vector residual = problem.target - codebook.decode(code);
  Vector free_residual(residual.size());
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    bool changed = false;
    for (int m = 0; m < num_books; ++m) {
      // Residual with book m's current word added back: the free target for
      // this coordinate.
      free_residual = residual + codebook.word(m, code[static_cast<std::size_t>(m)]);
      std::uint32_t best = 0;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int k = 0; k < book_size; ++k) {
        const double cost =
            (free_residual - codebook.word(m, static_cast<std::uint32_t>(k))).squaredNorm();
        if (cost < best_cost) {
          best_cost = cost;
          best = static_cast<std::uint32_t>(k);
        }
      }
      if (best != code[static_cast<std::size_t>(m)]) {
        code[static_cast<std::size_t>(m)] = best;
        changed = true;
      }
      residual = free_residual - codebook.word(m, best);
    }
    if (!changed) break;
  }
  return code;
}

CodeVec exhaustive_encode(const EncodeTarget& problem, const Codebook& codebook) {
  const int num_books = codebook.num_books;
  const int book_size = codebook.words_per_book;
  double combos = 1.0;
  for (int m = 0; m < num_books; ++m) combos *= book_size;
  if (combos > 1e6) {
    throw std::invalid_argument("exhaustive_encode: K^M exceeds the 10^6 guard");
  }

  CodeVec current(static_cast<std::size_t>(num_books), 0);
  CodeVec best = current;
  double best_cost = std::numeric_limits<double>::infinity();
  // Odometer enumeration with book 0 as the most significant digit visits
  // tuples in lexicographic order; strict improvement keeps the first (and
  // therefore smallest) minimizer.
  while (true) {
    const double cost = problem.weight *
                            (problem.target - codebook.decode(current)).squaredNorm() +
                        problem.bias;
    if (cost < best_cost) {
      best_cost = cost;
      best = current;
    }
    int m = num_books - 1;
    while (m >= 0) {
      if (++current[static_cast<std::size_t>(m)] <
          static_cast<std::uint32_t>(book_size)) {
        break;
      }
      current[static_cast<std::size_t>(m)] = 0;
      --m;
    }
    if (m < 0) break;
  }
  return best;
}

Trainer::Trainer(const ModalDataset& data, const CcqConfig& config)
    : data_(&data), cfg_(resolved_config(config, data)) {
  const ValidationReport report = validate_config(cfg_, data);
  if (!report.ok()) {
    std::ostringstream msg;
    msg << "invalid training config:";
    for (const auto& v : report.violations) msg << " [" << v << "]";
    throw std::invalid_argument(msg.str());
  }
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> Trainer::batch_ranges() const {
  Eigen::Index max_count = 0;
  for (const auto& x : data_->features) max_count = std::max(max_count, x.cols());
  const Eigen::Index step = cfg_.batch_size > 0 ? cfg_.batch_size : max_count;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
  for (Eigen::Index b = 0; b < max_count; b += step) {
    ranges.emplace_back(b, std::min(max_count, b + step));
  }
  if (ranges.empty()) ranges.emplace_back(0, 0);
  return ranges;
}

TrainState Trainer::initialize() const {
  const int num_modalities = cfg_.num_modalities;
  const int latent_dim = cfg_.latent_dim;

  TrainState state;
  state.model.config = cfg_;

  state.model.mappings.per_modality.resize(static_cast<std::size_t>(num_modalities));
  for (int v = 0; v < num_modalities; ++v) {
    state.model.mappings.per_modality[static_cast<std::size_t>(v)] =
        Matrix::Identity(data_->dim(v), latent_dim);
  }

  // Pooled standard deviation of all feature entries sets the codeword scale.
  double sum = 0.0, sum_sq = 0.0, count = 0.0;
  for (const auto& x : data_->features) {
    sum += x.sum();
    sum_sq += x.squaredNorm();
    count += static_cast<double>(x.size());
  }
  const double mean = count > 0 ? sum / count : 0.0;
  const double var = count > 0 ? std::max(0.0, sum_sq / count - mean * mean) : 0.0;
  const double scale = var > 0 ? std::sqrt(var) : 1.0;

  Codebook& codebook = state.model.codebook;
  codebook.num_books = cfg_.num_codebooks;
  codebook.words_per_book = cfg_.codewords_per_book;
  codebook.words.resize(latent_dim,
                        static_cast<Eigen::Index>(cfg_.num_codebooks) *
                            cfg_.codewords_per_book);
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> gauss(0.0, scale);
  for (Eigen::Index j = 0; j < codebook.words.cols(); ++j) {
    for (Eigen::Index i = 0; i < codebook.words.rows(); ++i) {
      codebook.words(i, j) = gauss(rng);
    }
  }

  state.codes.per_modality.resize(static_cast<std::size_t>(num_modalities));
  for (int v = 0; v < num_modalities; ++v) {
    state.codes.per_modality[static_cast<std::size_t>(v)] =
        IndexMatrix::Zero(cfg_.num_codebooks, data_->count(v));
  }
  encode_all(state, /*force_greedy=*/true);

  const auto norms = decoded_sq_norms(state);
  state.model.norm_bin_centers = fit_norm_bins(norms);

  state.iteration = 0;
  state.objective = objective(state);
  state.model.training_log = {state.objective};
  return state;
}

double Trainer::objective(const TrainState& state) const {
  double total = 0.0;
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    const Matrix& x = data_->features[static_cast<std::size_t>(v)];
    const Matrix& rot = state.model.mappings.per_modality[static_cast<std::size_t>(v)];
    const IndexMatrix& codes = state.codes.per_modality[static_cast<std::size_t>(v)];
    Matrix decoded(cfg_.latent_dim, x.cols());
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
      state.model.codebook.decode_into(
          std::span<const std::uint32_t>(codes.col(n).data(),
                                         static_cast<std::size_t>(codes.rows())),
          decoded.col(n));
    }
    total += cfg_.modality_weights[static_cast<std::size_t>(v)] *
             (x - rot * decoded).squaredNorm();
  }
  return total;
}

SufficientStats Trainer::zero_stats() const {
  SufficientStats stats;
  const Eigen::Index table = static_cast<Eigen::Index>(cfg_.num_codebooks) *
                             cfg_.codewords_per_book;
  stats.cross.resize(static_cast<std::size_t>(cfg_.num_modalities));
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    stats.cross[static_cast<std::size_t>(v)] = Matrix::Zero(data_->dim(v), cfg_.latent_dim);
  }
  stats.gram = Matrix::Zero(table, table);
  stats.target = Matrix::Zero(cfg_.latent_dim, table);
  return stats;
}

void Trainer::accumulate_stats(Eigen::Index col_begin, Eigen::Index col_end,
                               const TrainState& state, SufficientStats& stats) const {
  const int num_books = cfg_.num_codebooks;
  const int book_size = cfg_.codewords_per_book;
  const Eigen::Index table = static_cast<Eigen::Index>(num_books) * book_size;
  if (stats.gram.rows() != table || stats.target.rows() != cfg_.latent_dim ||
      static_cast<int>(stats.cross.size()) != cfg_.num_modalities) {
    throw std::invalid_argument("stats shape does not match the model");
  }
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    if (stats.cross[static_cast<std::size_t>(v)].rows() != data_->dim(v)) {
      throw std::invalid_argument("stats shape does not match the data");
    }
    const Eigen::Index begin = std::min(col_begin, data_->count(v));
    const Eigen::Index end = std::min(col_end, data_->count(v));
    if (begin >= end) continue;
    const Eigen::Index width = end - begin;
    const double weight = cfg_.modality_weights[static_cast<std::size_t>(v)];
    const Matrix& x = data_->features[static_cast<std::size_t>(v)];
    const Matrix& rot = state.model.mappings.per_modality[static_cast<std::size_t>(v)];
    const IndexMatrix& codes = state.codes.per_modality[static_cast<std::size_t>(v)];

    Matrix decoded(cfg_.latent_dim, width);
    for (Eigen::Index j = 0; j < width; ++j) {
      state.model.codebook.decode_into(
          std::span<const std::uint32_t>(codes.col(begin + j).data(),
                                         static_cast<std::size_t>(num_books)),
          decoded.col(j));
    }
    stats.cross[static_cast<std::size_t>(v)] +=
        x.middleCols(begin, width) * decoded.transpose();

    const Matrix latents = rot.transpose() * x.middleCols(begin, width);
    for (Eigen::Index j = 0; j < width; ++j) {
      const auto code = codes.col(begin + j);
      for (int m = 0; m < num_books; ++m) {
        const Eigen::Index col_m =
            static_cast<Eigen::Index>(m) * book_size + code(m);
        stats.target.col(col_m) += weight * latents.col(j);
        for (int m2 = 0; m2 < num_books; ++m2) {
          const Eigen::Index col_m2 =
              static_cast<Eigen::Index>(m2) * book_size + code(m2);
          stats.gram(col_m, col_m2) += weight;
        }
      }
    }
  }
}

void Trainer::update_mappings(TrainState& state) const {
  SufficientStats stats = zero_stats();
  for (const auto& [begin, end] : batch_ranges()) {
    accumulate_stats(begin, end, state, stats);
  }
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    const Matrix& cross = stats.cross[static_cast<std::size_t>(v)];
    if (!cross.allFinite()) {
      throw std::runtime_error("mapping update: non-finite cross statistics");
    }
    Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
    state.model.mappings.per_modality[static_cast<std::size_t>(v)] =
        svd.matrixU() * svd.matrixV().transpose();
  }
  state.objective = objective(state);
}

void Trainer::update_codebook(TrainState& state) const {
  SufficientStats stats = zero_stats();
  for (const auto& [begin, end] : batch_ranges()) {
    accumulate_stats(begin, end, state, stats);
  }
  if (!stats.gram.allFinite() || !stats.target.allFinite()) {
    throw std::runtime_error("codebook update: non-finite statistics");
  }
  const Eigen::Index table = stats.gram.rows();
  const double ridge = cfg_.ridge * stats.gram.trace() / static_cast<double>(table);
  Matrix gram = stats.gram;
  gram.diagonal().array() += ridge;
  // Normal equations C (G + ridge I) = T, solved through the symmetric factor.
  state.model.codebook.words =
      gram.ldlt().solve(stats.target.transpose()).transpose();
  state.objective = objective(state);
}

void Trainer::encode_all(TrainState& state, bool force_greedy) const {
  const bool greedy = force_greedy || cfg_.encode_mode == EncodeMode::Greedy;
  const Codebook& codebook = state.model.codebook;
  const Eigen::Index paired = data_->paired_count;

  std::vector<Matrix> latents(static_cast<std::size_t>(cfg_.num_modalities));
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    latents[static_cast<std::size_t>(v)] =
        state.model.mappings.per_modality[static_cast<std::size_t>(v)].transpose() *
        data_->features[static_cast<std::size_t>(v)];
  }

  auto encode_one = [&](const EncodeTarget& problem,
                        std::span<const std::uint32_t> current) -> CodeVec {
    CodeVec fresh = greedy ? encode_greedy(problem, codebook)
                           : encode_icm(problem, codebook, current, cfg_.icm_sweeps);
    // Keep the better of old and new so a re-encode never costs more.
    if (encode_cost(problem, codebook, fresh) <=
        encode_cost(problem, codebook, current)) {
      return fresh;
    }
    return CodeVec(current.begin(), current.end());
  };

  std::vector<Vector> point_latents(static_cast<std::size_t>(cfg_.num_modalities));
  for (Eigen::Index n = 0; n < paired; ++n) {
    for (int v = 0; v < cfg_.num_modalities; ++v) {
      point_latents[static_cast<std::size_t>(v)] =
          latents[static_cast<std::size_t>(v)].col(n);
    }
    const EncodeTarget problem =
        EncodeTarget::joint(point_latents, cfg_.modality_weights);
    auto current_col = state.codes.per_modality[0].col(n);
    const CodeVec code = encode_one(
        problem, std::span<const std::uint32_t>(current_col.data(),
                                                static_cast<std::size_t>(cfg_.num_codebooks)));
    for (int v = 0; v < cfg_.num_modalities; ++v) {
      for (int m = 0; m < cfg_.num_codebooks; ++m) {
        state.codes.per_modality[static_cast<std::size_t>(v)](m, n) =
            code[static_cast<std::size_t>(m)];
      }
    }
  }

  for (int v = 0; v < cfg_.num_modalities; ++v) {
    const double weight = cfg_.modality_weights[static_cast<std::size_t>(v)];
    IndexMatrix& codes = state.codes.per_modality[static_cast<std::size_t>(v)];
    for (Eigen::Index n = paired; n < data_->count(v); ++n) {
      const EncodeTarget problem =
          EncodeTarget::single(latents[static_cast<std::size_t>(v)].col(n), weight);
      auto current_col = codes.col(n);
      const CodeVec code = encode_one(
          problem, std::span<const std::uint32_t>(current_col.data(),
                                                  static_cast<std::size_t>(cfg_.num_codebooks)));
      for (int m = 0; m < cfg_.num_codebooks; ++m) {
        codes(m, n) = code[static_cast<std::size_t>(m)];
      }
    }
  }
}

void Trainer::update_codes(TrainState& state) const {
  encode_all(state, /*force_greedy=*/false);
  state.objective = objective(state);
}

TrainState Trainer::train() const {
  TrainState state = initialize();
  std::vector<double> log = {state.objective};
  for (int iter = 1; iter <= cfg_.max_outer_iters; ++iter) {
    update_mappings(state);
    update_codebook(state);
    update_codes(state);
    state.iteration = iter;
    log.push_back(state.objective);
    const double prev = log[static_cast<std::size_t>(iter - 1)];
    const double drop = prev - state.objective;
    if (drop <= cfg_.convergence_tol * std::max(prev, 1e-300)) break;
  }
  state.model.training_log = log;
  const auto norms = decoded_sq_norms(state);
  state.model.norm_bin_centers = fit_norm_bins(norms);
  return state;
}

std::vector<double> Trainer::decoded_sq_norms(const TrainState& state) const {
  std::vector<double> norms;
  Vector decoded(cfg_.latent_dim);
  for (int v = 0; v < cfg_.num_modalities; ++v) {
    const IndexMatrix& codes = state.codes.per_modality[static_cast<std::size_t>(v)];
    for (Eigen::Index n = 0; n < codes.cols(); ++n) {
      state.model.codebook.decode_into(
          std::span<const std::uint32_t>(codes.col(n).data(),
                                         static_cast<std::size_t>(codes.rows())),
          decoded);
      norms.push_back(decoded.squaredNorm());
    }
  }
  return norms;
}

std::vector<double> fit_norm_bins(std::span<const double> sq_norms) {
  double lo = 0.0, hi = 0.0;
  if (!sq_norms.empty()) {
    lo = *std::min_element(sq_norms.begin(), sq_norms.end());
    hi = *std::max_element(sq_norms.begin(), sq_norms.end());
  }
  std::vector<double> centers(kNormBinCount);
  const double width = (hi - lo) / kNormBinCount;
  for (int i = 0; i < kNormBinCount; ++i) {
    centers[static_cast<std::size_t>(i)] = lo + (i + 0.5) * width;
  }
  return centers;
}

}  // namespace ccq
