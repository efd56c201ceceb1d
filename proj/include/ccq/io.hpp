#pragma once

#include "ccq/encoder.hpp"
#include "ccq/types.hpp"

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ccq {

/// Affine whitening transform: x -> transform * (x - mean).
struct ZcaTransform {
  Vector mean;
  Matrix transform;
};

Matrix apply_zca(const ZcaTransform& zca, const Matrix& features);

/// ZCA whitening: zero mean per dimension, identity covariance. The ridge is
/// relative to the largest covariance eigenvalue and keeps rank-deficient
/// inputs finite. Throws on non-finite input.
std::pair<Matrix, ZcaTransform> zca_whiten(const Matrix& features,
                                           double eigen_ridge = 1e-10);

/// On-disk feature matrix: column per object, optional concept labels, and
/// the aligned-pair prefix size.
struct FeatureFile {
  Matrix features;
  Eigen::Index paired_count = 0;
  std::vector<LabelSet> labels;  // empty = no label block
};

void save_features(const std::string& path, const FeatureFile& file,
                   bool as_float32 = false);
FeatureFile load_features(const std::string& path);

/// Model plus optional per-modality feature preprocessing, as persisted.
struct ModelFile {
  CcqModel model;
  std::vector<std::optional<ZcaTransform>> preprocessing;  // one slot per modality
};

void save_model(const std::string& path, const ModelFile& file);
ModelFile load_model(const std::string& path);

void save_codes(const std::string& path, const PackedCodes& codes);
PackedCodes load_codes(const std::string& path);

struct SynthParams {
  int clusters = 10;
  int per_cluster = 100;
  std::array<int, 2> dims = {64, 64};
  double noise = 0.3;
  double paired_fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Bimodal Gaussian-cluster dataset. An object is a concept-space point
/// (cluster concept + Gaussian offset of scale `noise`) observed in each
/// modality through a modality-specific orthogonal lift plus small
/// observation noise; paired objects are one point seen in both modalities,
/// unpaired tails hold each modality's own objects. Cluster identities are
/// round-robin, so any column prefix stays label-balanced. Cluster geometry
/// depends only on (seed, clusters, dims), so datasets generated with
/// different sizes or noise share it.
ModalDataset generate_synthetic(const SynthParams& params);

}  // namespace ccq
