#include "ccq/types.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ccq {

bool is_power_of_two(std::uint64_t x) {
  return x != 0 && (x & (x - 1)) == 0;
}

int code_length_bits(const CcqConfig& config) {
  if (config.num_codebooks < 1) {
    throw std::invalid_argument("num_codebooks must be positive");
  }
  if (config.codewords_per_book < 2 ||
      !is_power_of_two(static_cast<std::uint64_t>(config.codewords_per_book))) {
    throw std::invalid_argument("codewords_per_book must be a power of two >= 2");
  }
  const int bits_per_subcode =
      std::countr_zero(static_cast<std::uint32_t>(config.codewords_per_book));
  return config.num_codebooks * bits_per_subcode;
}

Eigen::Index ModalDataset::min_count() const {
  Eigen::Index n = features.empty() ? 0 : features[0].cols();
  for (const auto& x : features) n = std::min(n, x.cols());
  return n;
}

Eigen::Index ModalDataset::min_dim() const {
  Eigen::Index p = features.empty() ? 0 : features[0].rows();
  for (const auto& x : features) p = std::min(p, x.rows());
  return p;
}

double orthogonality_residual(const Matrix& r) {
  Matrix gram = r.transpose() * r;
  gram.diagonal().array() -= 1.0;
  return gram.cwiseAbs().maxCoeff();
}

Vector Codebook::decode(std::span<const std::uint32_t> code) const {
  Vector out(dim());
  decode_into(code, out);
  return out;
}

void Codebook::decode_into(std::span<const std::uint32_t> code,
                           Eigen::Ref<Vector> out) const {
  out.setZero();
  for (int m = 0; m < num_books; ++m) {
    out += word(m, code[static_cast<std::size_t>(m)]);
  }
}

namespace {

class Fnv1a {
 public:
  void add_bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void add_u64(std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    add_bytes(bytes, 8);
  }
  void add_i64(std::int64_t v) { add_u64(static_cast<std::uint64_t>(v)); }
  void add_double(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    add_u64(bits);
  }
  void add_matrix(const Matrix& m) {
    add_i64(m.rows());
    add_i64(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) add_double(m(i, j));
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

std::uint64_t model_fingerprint(const CcqModel& model) {
  Fnv1a h;
  const CcqConfig& c = model.config;
  h.add_i64(c.num_modalities);
  h.add_i64(c.num_codebooks);
  h.add_i64(c.codewords_per_book);
  h.add_i64(c.latent_dim);
  h.add_i64(static_cast<std::int64_t>(c.modality_weights.size()));
  for (double w : c.modality_weights) h.add_double(w);
  h.add_i64(c.max_outer_iters);
  h.add_i64(c.icm_sweeps);
  h.add_u64(static_cast<std::uint64_t>(c.encode_mode));
  h.add_double(c.ridge);
  h.add_double(c.convergence_tol);
  h.add_u64(c.seed);
  h.add_i64(c.batch_size);
  h.add_i64(static_cast<std::int64_t>(model.mappings.per_modality.size()));
  for (const auto& r : model.mappings.per_modality) h.add_matrix(r);
  h.add_i64(model.codebook.num_books);
  h.add_i64(model.codebook.words_per_book);
  h.add_matrix(model.codebook.words);
  h.add_i64(static_cast<std::int64_t>(model.norm_bin_centers.size()));
  for (double v : model.norm_bin_centers) h.add_double(v);
  return h.value();
}

CcqConfig resolved_config(CcqConfig config, const ModalDataset& data) {
  if (config.modality_weights.empty() && config.num_modalities > 0) {
    config.modality_weights.assign(static_cast<std::size_t>(config.num_modalities), 1.0);
  }
  // Leave latent_dim at 0 when the code geometry is itself invalid, so
  // validation can report every violation instead of throwing here.
  if (config.latent_dim == 0 && data.num_modalities() > 0 &&
      config.num_codebooks >= 1 && config.codewords_per_book >= 2 &&
      is_power_of_two(static_cast<std::uint64_t>(config.codewords_per_book))) {
    const Eigen::Index bits = code_length_bits(config);
    config.latent_dim = static_cast<int>(std::min<Eigen::Index>(data.min_dim(), bits));
  }
  return config;
}

ValidationReport validate_config(const CcqConfig& config, const ModalDataset& data) {
  ValidationReport report;
  auto fail = [&report](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (config.num_modalities < 1) fail("num_modalities must be positive");
  if (data.num_modalities() != config.num_modalities) {
    fail("dataset modality count does not match config");
  }
  if (config.num_codebooks < 1) fail("num_codebooks must be positive");
  if (config.codewords_per_book < 2 ||
      !is_power_of_two(static_cast<std::uint64_t>(config.codewords_per_book))) {
    fail("K not a power of two");
  }
  if (config.latent_dim < 1) fail("latent dim must be positive");
  if (data.num_modalities() > 0 && config.latent_dim > data.min_dim()) {
    fail("latent dim exceeds feature dim");
  }
  if (static_cast<int>(config.modality_weights.size()) != config.num_modalities) {
    fail("modality_weights length must equal num_modalities");
  }
  for (double w : config.modality_weights) {
    if (!(w > 0.0)) {
      fail("modality weights must be positive");
      break;
    }
  }
  if (config.max_outer_iters < 1) fail("max_outer_iters must be positive");
  if (config.icm_sweeps < 1) fail("icm_sweeps must be positive");
  if (!(config.ridge >= 0.0)) fail("ridge must be nonnegative");
  if (!(config.convergence_tol >= 0.0)) fail("convergence_tol must be nonnegative");
  if (config.batch_size < 0) fail("batch_size must be nonnegative");

  if (data.paired_count < 0 || data.paired_count > data.min_count()) {
    fail("paired_count exceeds a modality's object count");
  }
  for (int v = 0; v < data.num_modalities(); ++v) {
    if (!data.features[static_cast<std::size_t>(v)].allFinite()) {
      fail("features contain non-finite values (modality " + std::to_string(v) + ")");
    }
  }
  return report;
}

}  // namespace ccq
