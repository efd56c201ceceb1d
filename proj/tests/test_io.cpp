#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccq/io.hpp"
#include "ccq/searcher.hpp"
#include "ccq/trainer.hpp"

#include <Eigen/Eigenvalues>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using ccq::Matrix;
using ccq::Vector;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                double sigma = 1.0) {
  std::normal_distribution<double> gauss(0.0, sigma);
  return Matrix::NullaryExpr(rows, cols, [&] { return gauss(rng); });
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ccq_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ccq::TrainState quick_model(std::uint64_t seed = 5) {
  ccq::SynthParams params;
  params.clusters = 3;
  params.per_cluster = 25;
  params.dims = {10, 8};
  params.noise = 0.3;
  params.seed = seed;
  const auto data = ccq::generate_synthetic(params);
  ccq::CcqConfig cfg;
  cfg.num_codebooks = 2;
  cfg.codewords_per_book = 8;
  cfg.max_outer_iters = 4;
  cfg.seed = seed;
  ccq::Trainer trainer(data, cfg);
  return trainer.train();
}

}  // namespace

TEST_CASE("zca whitening: moments, idempotence, rank deficiency") {
  std::mt19937_64 rng(3);

  SUBCASE("output has zero mean and unit covariance eigenvalues") {
    Matrix x = gaussian(6, 500, rng);
    x.row(2) *= 5.0;            // anisotropic
    x.array().row(4) += 3.0;    // shifted
    const auto [white, zca] = ccq::zca_whiten(x);
    CHECK(white.rowwise().mean().cwiseAbs().maxCoeff() <= 1e-10);
    const Matrix cov = white * white.transpose() / 500.0;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    CHECK(eig.eigenvalues().minCoeff() >= 1.0 - 1e-6);
    CHECK(eig.eigenvalues().maxCoeff() <= 1.0 + 1e-6);
  }

  SUBCASE("already-whitened data gets a near-identity transform") {
    const Matrix x = gaussian(4, 2000, rng);
    const auto [white, zca] = ccq::zca_whiten(x);
    const auto [again, zca2] = ccq::zca_whiten(white);
    CHECK((zca2.transform - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 0.15);
  }

  SUBCASE("rank-deficient input stays finite") {
    Matrix x = gaussian(5, 100, rng);
    x.row(4) = x.row(0);  // duplicated dimension
    const auto [white, zca] = ccq::zca_whiten(x);
    CHECK(white.allFinite());
    CHECK(zca.transform.allFinite());
  }

  SUBCASE("non-finite input throws") {
    Matrix x = gaussian(3, 10, rng);
    x(1, 2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(ccq::zca_whiten(x), std::invalid_argument);
  }

  SUBCASE("the stored transform reproduces the training output on queries") {
    const Matrix x = gaussian(5, 300, rng);
    const auto [white, zca] = ccq::zca_whiten(x);
    CHECK((ccq::apply_zca(zca, x) - white).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("synthetic generator: determinism, balance, noise, shared centers") {
  ccq::SynthParams params;
  params.clusters = 5;
  params.per_cluster = 20;
  params.dims = {7, 6};
  params.noise = 0.0;
  params.paired_fraction = 0.4;
  params.seed = 9;

  const auto a = ccq::generate_synthetic(params);
  const auto b = ccq::generate_synthetic(params);
  CHECK(a.features[0] == b.features[0]);
  CHECK(a.features[1] == b.features[1]);
  CHECK(a.paired_count == 40);

  SUBCASE("noise=0 collapses clusters to their centers") {
    for (Eigen::Index n = 0; n < 100; ++n) {
      const Eigen::Index twin = n % 5;  // first object of the same cluster
      CHECK((a.features[0].col(n) - a.features[0].col(twin)).cwiseAbs().maxCoeff() ==
            0.0);
    }
  }

  SUBCASE("labels are balanced across clusters, even on prefixes") {
    std::vector<int> counts(5, 0);
    for (Eigen::Index n = 0; n < 40; ++n) {
      counts[static_cast<std::size_t>(a.labels[0][static_cast<std::size_t>(n)][0])]++;
    }
    for (int c : counts) CHECK(c == 8);
  }

  SUBCASE("different sizes share cluster centers for the same seed") {
    ccq::SynthParams bigger = params;
    bigger.per_cluster = 3;
    const auto small = ccq::generate_synthetic(bigger);
    // noise = 0: points are the centers themselves.
    for (int c = 0; c < 5; ++c) {
      CHECK((small.features[0].col(c) - a.features[0].col(c)).cwiseAbs().maxCoeff() ==
            0.0);
    }
  }

  SUBCASE("unpaired tails differ across modalities") {
    ccq::SynthParams noisy = params;
    noisy.noise = 0.5;
    const auto d = ccq::generate_synthetic(noisy);
    REQUIRE(d.features[0].cols() == d.features[1].cols());
    // Independent draws: same cluster centers but different noise.
    CHECK(d.features[0].topRows(6) != d.features[1].topRows(6));
  }
}

TEST_CASE("feature files round trip with labels and paired marker") {
  TempDir dir;
  std::mt19937_64 rng(7);
  ccq::FeatureFile file;
  file.features = gaussian(6, 30, rng);
  file.paired_count = 12;
  file.labels.resize(30);
  for (std::size_t i = 0; i < 30; ++i) {
    file.labels[i] = {static_cast<std::int32_t>(i % 4), 100};
  }

  const std::string path = dir.file("x.feat");
  ccq::save_features(path, file);
  const auto loaded = ccq::load_features(path);
  CHECK(loaded.features == file.features);  // bit-exact for float64
  CHECK(loaded.paired_count == 12);
  CHECK(loaded.labels == file.labels);

  SUBCASE("float32 round trip keeps single precision") {
    const std::string path32 = dir.file("x32.feat");
    ccq::save_features(path32, file, /*as_float32=*/true);
    const auto loaded32 = ccq::load_features(path32);
    CHECK((loaded32.features.cast<float>().cast<double>() - loaded32.features)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((loaded32.features - file.features).cwiseAbs().maxCoeff() <= 1e-6);
  }

  SUBCASE("truncated files are rejected") {
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(ccq::load_features(path), std::runtime_error);
  }

  SUBCASE("wrong magic is rejected") {
    const std::string bad = dir.file("bad.feat");
    std::ofstream out(bad, std::ios::binary);
    out << "NOPEnope";
    out.close();
    CHECK_THROWS_AS(ccq::load_features(bad), std::runtime_error);
  }
}

TEST_CASE("model files round trip bit-exactly") {
  TempDir dir;
  const auto state = quick_model();
  ccq::ModelFile file;
  file.model = state.model;

  const std::string path = dir.file("m.ccq");
  ccq::save_model(path, file);
  const auto loaded = ccq::load_model(path);

  CHECK(loaded.model.codebook.words == file.model.codebook.words);
  for (std::size_t v = 0; v < 2; ++v) {
    CHECK(loaded.model.mappings.per_modality[v] == file.model.mappings.per_modality[v]);
  }
  CHECK(loaded.model.norm_bin_centers == file.model.norm_bin_centers);
  CHECK(loaded.model.training_log == file.model.training_log);
  CHECK(loaded.model.config.seed == file.model.config.seed);
  CHECK(loaded.model.config.modality_weights == file.model.config.modality_weights);
  CHECK(ccq::model_fingerprint(loaded.model) == ccq::model_fingerprint(file.model));

  SUBCASE("zca blocks persist") {
    std::mt19937_64 rng(9);
    ccq::ModelFile with_zca = file;
    with_zca.preprocessing.resize(2);
    const auto [white, zca] = ccq::zca_whiten(gaussian(10, 50, rng));
    with_zca.preprocessing[0] = zca;
    const std::string path2 = dir.file("m2.ccq");
    ccq::save_model(path2, with_zca);
    const auto loaded2 = ccq::load_model(path2);
    REQUIRE(loaded2.preprocessing.size() == 2);
    REQUIRE(loaded2.preprocessing[0].has_value());
    CHECK_FALSE(loaded2.preprocessing[1].has_value());
    CHECK(loaded2.preprocessing[0]->transform == zca.transform);
    CHECK(loaded2.preprocessing[0]->mean == zca.mean);
  }

  SUBCASE("a flipped byte in the payload is caught by the fingerprint") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(200);
    char byte;
    f.seekg(200);
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(200);
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_AS(ccq::load_model(path), std::runtime_error);
  }
}

TEST_CASE("codes round trip and stale pairings are rejected at search time") {
  TempDir dir;
  const auto state = quick_model();
  std::mt19937_64 rng(11);
  const Matrix queries = gaussian(10, 3, rng);
  const auto codes = ccq::encode_database(gaussian(10, 40, rng), state.model, 0);

  const std::string path = dir.file("db.pcq");
  ccq::save_codes(path, codes);
  const auto loaded = ccq::load_codes(path);
  CHECK(loaded.buffer == codes.buffer);
  CHECK(loaded.count == codes.count);
  CHECK(loaded.fingerprint == codes.fingerprint);
  CHECK(loaded.modality_tag == codes.modality_tag);

  // Retrain with a different seed: different model, same geometry.
  const auto other = quick_model(99);
  const auto table = ccq::build_query_table(queries.col(0), other.model, 0);
  CHECK_THROWS_AS(ccq::search(table, loaded, 5), std::runtime_error);

  const auto good_table = ccq::build_query_table(queries.col(0), state.model, 0);
  CHECK_NOTHROW(ccq::search(good_table, loaded, 5));
}
