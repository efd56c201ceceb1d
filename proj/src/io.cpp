#include "ccq/io.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace ccq {

Matrix apply_zca(const ZcaTransform& zca, const Matrix& features) {
  if (features.rows() != zca.mean.size()) {
    throw std::invalid_argument("feature dimension does not match the transform");
  }
  return zca.transform * (features.colwise() - zca.mean);
}

std::pair<Matrix, ZcaTransform> zca_whiten(const Matrix& features, double eigen_ridge) {
  if (!features.allFinite()) {
    throw std::invalid_argument("zca_whiten: non-finite input");
  }
  const Eigen::Index count = features.cols();
  if (count < 1) throw std::invalid_argument("zca_whiten: empty input");

  ZcaTransform zca;
  zca.mean = features.rowwise().mean();
  const Matrix centered = features.colwise() - zca.mean;
  const Matrix cov = centered * centered.transpose() / static_cast<double>(count);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector values = eig.eigenvalues();
  const double top = std::max(values.maxCoeff(), 0.0);
  const double ridge = std::max(eigen_ridge * top, 1e-12);
  const Vector inv_sqrt = (values.array().max(0.0) + ridge).rsqrt();
  zca.transform =
      eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  return {zca.transform * centered, std::move(zca)};
}

namespace {

constexpr char kFeatureMagic[4] = {'C', 'C', 'Q', 'F'};
constexpr char kModelMagic[4] = {'C', 'C', 'Q', '1'};
constexpr char kCodesMagic[4] = {'C', 'C', 'Q', 'B'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void matrix(const Matrix& m) {
    i64(m.rows());
    i64(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) f64(m(i, j));
    }
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in, std::string path)
      : in_(in), path_(std::move(path)) {}

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (!in_) throw std::runtime_error("truncated or unreadable file: " + path_);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  Matrix matrix() {
    const Eigen::Index rows = checked_dim(i64());
    const Eigen::Index cols = checked_dim(i64());
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = f64();
    }
    return m;
  }
  void expect_magic(const char magic[4], const char* kind) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw std::runtime_error(std::string("not a ") + kind + " file: " + path_);
    }
  }
  Eigen::Index checked_dim(std::int64_t v) const {
    if (v < 0 || v > (1LL << 40)) {
      throw std::runtime_error("corrupt dimension field in " + path_);
    }
    return static_cast<Eigen::Index>(v);
  }

 private:
  std::istream& in_;
  std::string path_;
};

// Write-temp-then-rename so partially written files never shadow good ones.
template <typename Fn>
void atomic_write(const std::string& path, Fn&& fn) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    Writer w(out);
    fn(w);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return in;
}

void write_labels(Writer& w, const std::vector<LabelSet>& labels) {
  for (const LabelSet& set : labels) {
    w.u32(static_cast<std::uint32_t>(set.size()));
    for (std::int32_t id : set) w.u32(static_cast<std::uint32_t>(id));
  }
}

std::vector<LabelSet> read_labels(Reader& r, Eigen::Index count) {
  std::vector<LabelSet> labels(static_cast<std::size_t>(count));
  for (auto& set : labels) {
    const std::uint32_t n = r.u32();
    if (n > (1u << 24)) throw std::runtime_error("corrupt label block");
    set.resize(n);
    for (auto& id : set) id = static_cast<std::int32_t>(r.u32());
  }
  return labels;
}

}  // namespace

void save_features(const std::string& path, const FeatureFile& file, bool as_float32) {
  if (!file.labels.empty() &&
      static_cast<Eigen::Index>(file.labels.size()) != file.features.cols()) {
    throw std::invalid_argument("label count must match object count");
  }
  atomic_write(path, [&](Writer& w) {
    w.bytes(kFeatureMagic, 4);
    w.u8(as_float32 ? 0 : 1);  // dtype: 0 = float32, 1 = float64
    w.i64(file.features.rows());
    w.i64(file.features.cols());
    w.i64(file.paired_count);
    w.u8(file.labels.empty() ? 0 : 1);
    for (Eigen::Index j = 0; j < file.features.cols(); ++j) {
      for (Eigen::Index i = 0; i < file.features.rows(); ++i) {
        if (as_float32) {
          w.f32(static_cast<float>(file.features(i, j)));
        } else {
          w.f64(file.features(i, j));
        }
      }
    }
    if (!file.labels.empty()) write_labels(w, file.labels);
  });
}

FeatureFile load_features(const std::string& path) {
  auto in = open_input(path);
  Reader r(in, path);
  r.expect_magic(kFeatureMagic, "feature");
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) throw std::runtime_error("unknown feature dtype in " + path);
  FeatureFile file;
  const Eigen::Index rows = r.checked_dim(r.i64());
  const Eigen::Index cols = r.checked_dim(r.i64());
  file.paired_count = r.checked_dim(r.i64());
  const bool has_labels = r.u8() != 0;
  file.features.resize(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      file.features(i, j) = dtype == 0 ? static_cast<double>(r.f32()) : r.f64();
    }
  }
  if (has_labels) file.labels = read_labels(r, cols);
  if (file.paired_count > cols) {
    throw std::runtime_error("paired_count exceeds object count in " + path);
  }
  return file;
}

void save_model(const std::string& path, const ModelFile& file) {
  const CcqModel& model = file.model;
  const CcqConfig& cfg = model.config;
  if (!file.preprocessing.empty() &&
      file.preprocessing.size() != model.mappings.per_modality.size()) {
    throw std::invalid_argument("preprocessing slots must match modality count");
  }
  atomic_write(path, [&](Writer& w) {
    w.bytes(kModelMagic, 4);
    w.i64(cfg.num_modalities);
    w.i64(cfg.num_codebooks);
    w.i64(cfg.codewords_per_book);
    w.i64(cfg.latent_dim);
    w.i64(static_cast<std::int64_t>(cfg.modality_weights.size()));
    for (double v : cfg.modality_weights) w.f64(v);
    w.i64(cfg.max_outer_iters);
    w.i64(cfg.icm_sweeps);
    w.u8(static_cast<std::uint8_t>(cfg.encode_mode));
    w.f64(cfg.ridge);
    w.f64(cfg.convergence_tol);
    w.u64(cfg.seed);
    w.i64(cfg.batch_size);

    w.i64(static_cast<std::int64_t>(model.mappings.per_modality.size()));
    for (const auto& m : model.mappings.per_modality) w.matrix(m);
    w.i64(model.codebook.num_books);
    w.i64(model.codebook.words_per_book);
    w.matrix(model.codebook.words);
    w.i64(static_cast<std::int64_t>(model.norm_bin_centers.size()));
    for (double v : model.norm_bin_centers) w.f64(v);
    w.i64(static_cast<std::int64_t>(model.training_log.size()));
    for (double v : model.training_log) w.f64(v);

    w.u8(file.preprocessing.empty() ? 0 : 1);
    if (!file.preprocessing.empty()) {
      for (const auto& zca : file.preprocessing) {
        w.u8(zca.has_value() ? 1 : 0);
        if (zca.has_value()) {
          w.i64(zca->mean.size());
          for (Eigen::Index i = 0; i < zca->mean.size(); ++i) w.f64(zca->mean(i));
          w.matrix(zca->transform);
        }
      }
    }
    w.u64(model_fingerprint(model));
  });
}

ModelFile load_model(const std::string& path) {
  auto in = open_input(path);
  Reader r(in, path);
  r.expect_magic(kModelMagic, "model");
  ModelFile file;
  CcqConfig& cfg = file.model.config;
  cfg.num_modalities = static_cast<int>(r.i64());
  cfg.num_codebooks = static_cast<int>(r.i64());
  cfg.codewords_per_book = static_cast<int>(r.i64());
  cfg.latent_dim = static_cast<int>(r.i64());
  cfg.modality_weights.resize(static_cast<std::size_t>(r.checked_dim(r.i64())));
  for (double& v : cfg.modality_weights) v = r.f64();
  cfg.max_outer_iters = static_cast<int>(r.i64());
  cfg.icm_sweeps = static_cast<int>(r.i64());
  cfg.encode_mode = static_cast<EncodeMode>(r.u8());
  cfg.ridge = r.f64();
  cfg.convergence_tol = r.f64();
  cfg.seed = r.u64();
  cfg.batch_size = static_cast<Eigen::Index>(r.i64());

  file.model.mappings.per_modality.resize(
      static_cast<std::size_t>(r.checked_dim(r.i64())));
  for (auto& m : file.model.mappings.per_modality) m = r.matrix();
  file.model.codebook.num_books = static_cast<int>(r.i64());
  file.model.codebook.words_per_book = static_cast<int>(r.i64());
  file.model.codebook.words = r.matrix();
  file.model.norm_bin_centers.resize(static_cast<std::size_t>(r.checked_dim(r.i64())));
  for (double& v : file.model.norm_bin_centers) v = r.f64();
  file.model.training_log.resize(static_cast<std::size_t>(r.checked_dim(r.i64())));
  for (double& v : file.model.training_log) v = r.f64();

  if (r.u8() != 0) {
    file.preprocessing.resize(file.model.mappings.per_modality.size());
    for (auto& zca : file.preprocessing) {
      if (r.u8() != 0) {
        ZcaTransform t;
        t.mean.resize(r.checked_dim(r.i64()));
        for (Eigen::Index i = 0; i < t.mean.size(); ++i) t.mean(i) = r.f64();
        t.transform = r.matrix();
        zca = std::move(t);
      }
    }
  }
  const std::uint64_t stored = r.u64();
  if (stored != model_fingerprint(file.model)) {
    throw std::runtime_error("model fingerprint mismatch (corrupt file): " + path);
  }
  return file;
}

void save_codes(const std::string& path, const PackedCodes& codes) {
  atomic_write(path, [&](Writer& w) {
    w.bytes(kCodesMagic, 4);
    w.u8(codes.modality_tag);
    w.u64(codes.count);
    w.u32(codes.num_books);
    w.u32(codes.words_per_book);
    w.u64(codes.fingerprint);
    w.u64(codes.buffer.size());
    if (!codes.buffer.empty()) w.bytes(codes.buffer.data(), codes.buffer.size());
  });
}

PackedCodes load_codes(const std::string& path) {
  auto in = open_input(path);
  Reader r(in, path);
  r.expect_magic(kCodesMagic, "codes");
  PackedCodes codes;
  codes.modality_tag = r.u8();
  codes.count = r.u64();
  codes.num_books = r.u32();
  codes.words_per_book = r.u32();
  codes.fingerprint = r.u64();
  const std::uint64_t size = r.u64();
  if (size != codes.count * codes.bytes_per_point()) {
    throw std::runtime_error("codes buffer size does not match header: " + path);
  }
  codes.buffer.resize(size);
  if (size > 0) r.bytes(codes.buffer.data(), size);
  return codes;
}

ModalDataset generate_synthetic(const SynthParams& params) {
  if (params.clusters < 1 || params.per_cluster < 1) {
    throw std::invalid_argument("clusters and per_cluster must be positive");
  }
  if (params.paired_fraction < 0.0 || params.paired_fraction > 1.0) {
    throw std::invalid_argument("paired_fraction must lie in [0, 1]");
  }
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Cluster geometry first, in an order independent of the point counts, so
  // different sizes drawn from one seed share it. Each cluster has one
  // concept vector; each modality observes concept-space points through its
  // own orthogonal lift, so the two modalities carry congruent (not
  // independent) constellations, the way features of shared concepts do.
  const Eigen::Index concept_dim = std::min(params.dims[0], params.dims[1]);
  Matrix concepts(concept_dim, params.clusters);
  for (Eigen::Index j = 0; j < params.clusters; ++j) {
    for (Eigen::Index i = 0; i < concept_dim; ++i) concepts(i, j) = gauss(rng);
  }
  std::array<Matrix, 2> lifts;
  for (int v = 0; v < 2; ++v) {
    const Eigen::Index dim = params.dims[static_cast<std::size_t>(v)];
    Matrix raw(dim, concept_dim);
    for (Eigen::Index j = 0; j < concept_dim; ++j) {
      for (Eigen::Index i = 0; i < dim; ++i) raw(i, j) = gauss(rng);
    }
    Eigen::HouseholderQR<Matrix> qr(raw);
    lifts[static_cast<std::size_t>(v)] =
        qr.householderQ() * Matrix::Identity(dim, concept_dim);
  }

  const Eigen::Index total =
      static_cast<Eigen::Index>(params.clusters) * params.per_cluster;
  const Eigen::Index paired =
      static_cast<Eigen::Index>(std::llround(params.paired_fraction * total));

  // An object is a concept-space point: cluster concept + within-cluster
  // offset of scale `noise`. A paired object is one such point observed in
  // both modalities (same offset, lifted through each modality's map), plus a
  // small per-modality observation noise; unpaired objects draw their own
  // offsets. Pairs therefore carry object-level correspondence, not just a
  // shared cluster id.
  const double observation_noise = params.noise / 4.0;

  ModalDataset data;
  data.paired_count = paired;
  data.features.resize(2);
  data.labels.resize(2);
  for (int v = 0; v < 2; ++v) {
    data.features[static_cast<std::size_t>(v)].resize(
        params.dims[static_cast<std::size_t>(v)], total);
    data.labels[static_cast<std::size_t>(v)].resize(static_cast<std::size_t>(total));
  }
  Vector offset(concept_dim);
  for (Eigen::Index n = 0; n < total; ++n) {
    const int cluster = static_cast<int>(n % params.clusters);
    for (Eigen::Index i = 0; i < concept_dim; ++i) {
      offset(i) = params.noise * gauss(rng);
    }
    for (int v = 0; v < 2; ++v) {
      if (n >= paired && v > 0) {
        // Unpaired objects exist in one modality each; the tail of the other
        // modality holds its own objects with independent offsets.
        for (Eigen::Index i = 0; i < concept_dim; ++i) {
          offset(i) = params.noise * gauss(rng);
        }
      }
      Matrix& x = data.features[static_cast<std::size_t>(v)];
      x.col(n) = lifts[static_cast<std::size_t>(v)] *
                 (concepts.col(cluster) + offset);
      if (observation_noise > 0.0) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          x(i, n) += observation_noise * gauss(rng);
        }
      }
      data.labels[static_cast<std::size_t>(v)][static_cast<std::size_t>(n)] = {cluster};
    }
  }
  return data;
}

}  // namespace ccq
