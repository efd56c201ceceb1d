#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccq/evaluator.hpp"
#include "ccq/io.hpp"
#include "ccq/trainer.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace {

// Straight-line oracle: recount precision at every cutoff from scratch.
double naive_average_precision(const std::vector<char>& rel) {
  int relevant = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (!rel[r]) continue;
    ++relevant;
    int hits = 0;
    for (std::size_t i = 0; i <= r; ++i) hits += rel[i] ? 1 : 0;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return relevant == 0 ? 0.0 : sum / relevant;
}

ccq::SearchResult result_from_order(const std::vector<Eigen::Index>& order) {
  ccq::SearchResult r;
  for (std::size_t i = 0; i < order.size(); ++i) {
    r.hits.push_back({order[i], static_cast<double>(i)});
  }
  return r;
}

// Binary-label judge: query label {0}; item labels {0} (relevant) or {1}.
ccq::RelevanceJudge binary_judge(std::size_t queries, const std::vector<char>& db_relevant) {
  ccq::RelevanceJudge judge;
  judge.query_labels.assign(queries, {0});
  for (char r : db_relevant) judge.database_labels.push_back(r ? ccq::LabelSet{0}
                                                               : ccq::LabelSet{1});
  return judge;
}

}  // namespace

TEST_CASE("average precision base cases") {
  CHECK(ccq::average_precision({1, 0, 1}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(ccq::average_precision({1, 1, 1, 1}) == 1.0);
  CHECK(ccq::average_precision({0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(ccq::average_precision({}), std::invalid_argument);

  // Invariance to items below the cutoff: the metric only sees the list it is
  // given, so extending with irrelevant entries past rank R must not matter
  // when truncated at R.
  const std::vector<char> top = {1, 0, 1, 1};
  std::vector<char> extended = top;
  extended.insert(extended.end(), {1, 0, 1});
  const std::vector<char> truncated(extended.begin(), extended.begin() + 4);
  CHECK(ccq::average_precision(top) == ccq::average_precision(truncated));
}

TEST_CASE("average precision agrees with the naive oracle on random lists") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<char> rel(50);
    for (auto& r : rel) r = coin(rng) ? 1 : 0;
    CHECK(ccq::average_precision(rel) ==
          doctest::Approx(naive_average_precision(rel)).epsilon(1e-12));
  }
}

TEST_CASE("map_at_r: perfect retrieval and chance level") {
  std::mt19937_64 rng(7);

  SUBCASE("perfect retrieval gives MAP 1") {
    const auto judge = binary_judge(3, {1, 1, 1, 0, 0, 0});
    std::vector<ccq::SearchResult> results(3, result_from_order({0, 1, 2, 3, 4, 5}));
    CHECK(ccq::map_at_r(results, judge, 3) == 1.0);
  }

  SUBCASE("random rankings of balanced labels approach the class prior") {
    const std::size_t db = 400, queries = 1000;
    std::vector<char> relevant(db);
    for (std::size_t i = 0; i < db; ++i) relevant[i] = i % 2 == 0;
    const auto judge = binary_judge(queries, relevant);

    std::vector<Eigen::Index> order(db);
    for (std::size_t i = 0; i < db; ++i) order[i] = static_cast<Eigen::Index>(i);
    std::vector<ccq::SearchResult> results;
    for (std::size_t q = 0; q < queries; ++q) {
      std::shuffle(order.begin(), order.end(), rng);
      results.push_back(result_from_order(order));
    }
    const double map = ccq::map_at_r(results, judge, 50);
    CHECK(map == doctest::Approx(0.5).epsilon(0.1));  // +-0.05 absolute
    CHECK(std::abs(map - 0.5) <= 0.05);
  }

  SUBCASE("improving one query's AP increases MAP") {
    const auto judge = binary_judge(2, {1, 0, 0});
    std::vector<ccq::SearchResult> worse = {result_from_order({1, 2, 0}),
                                            result_from_order({1, 0, 2})};
    std::vector<ccq::SearchResult> better = {result_from_order({1, 0, 2}),
                                             result_from_order({1, 0, 2})};
    CHECK(ccq::map_at_r(better, judge, 3) > ccq::map_at_r(worse, judge, 3));
  }
}

TEST_CASE("precision and recall curves against a per-query recomputation") {
  std::mt19937_64 rng(11);
  const std::size_t db = 60, queries = 25;
  std::bernoulli_distribution coin(0.35);
  std::vector<char> relevant(db);
  for (auto& r : relevant) r = coin(rng) ? 1 : 0;
  const auto judge = binary_judge(queries, relevant);

  std::vector<Eigen::Index> order(db);
  for (std::size_t i = 0; i < db; ++i) order[i] = static_cast<Eigen::Index>(i);
  std::vector<ccq::SearchResult> results;
  for (std::size_t q = 0; q < queries; ++q) {
    std::shuffle(order.begin(), order.end(), rng);
    results.push_back(result_from_order(order));
  }

  const auto precision = ccq::precision_at_r_curve(results, judge, 40);
  const auto recall = ccq::recall_at_r_curve(results, judge, 40);
  REQUIRE(precision.size() == 40);
  REQUIRE(recall.size() == 40);

  std::size_t total_relevant = 0;
  for (char r : relevant) total_relevant += r ? 1 : 0;
  for (std::size_t r = 0; r < 40; ++r) {
    double psum = 0.0, rsum = 0.0;
    for (const auto& res : results) {
      int hits = 0;
      for (std::size_t i = 0; i <= r; ++i) {
        hits += relevant[static_cast<std::size_t>(res.hits[i].index)] ? 1 : 0;
      }
      psum += static_cast<double>(hits) / static_cast<double>(r + 1);
      rsum += static_cast<double>(hits) / static_cast<double>(total_relevant);
    }
    CHECK(precision[r] == doctest::Approx(psum / queries).epsilon(1e-12));
    CHECK(recall[r] == doctest::Approx(rsum / queries).epsilon(1e-12));
    if (r > 0) CHECK(recall[r] >= recall[r - 1] - 1e-15);
  }

  // precision@1 equals the fraction of queries whose top hit is relevant.
  double top_hits = 0;
  for (const auto& res : results) {
    top_hits += relevant[static_cast<std::size_t>(res.hits[0].index)] ? 1 : 0;
  }
  CHECK(precision[0] == doctest::Approx(top_hits / queries));
}

TEST_CASE("pr curve: perfect ranking pins precision at 1 until exhaustion") {
  const auto judge = binary_judge(1, {1, 1, 1, 0, 0});
  std::vector<ccq::SearchResult> results = {result_from_order({0, 1, 2, 3, 4})};
  const auto pr = ccq::precision_recall_curve(results, judge);
  REQUIRE(pr.size() == 11);
  for (const auto& p : pr) {
    CHECK(p.precision == 1.0);  // all relevant items come first
  }
  CHECK(pr.front().recall == 0.0);
  CHECK(pr.back().recall == 1.0);

  const auto prec = ccq::precision_at_r_curve(results, judge, 5);
  CHECK(prec[0] == 1.0);
  CHECK(prec[1] == 1.0);
  CHECK(prec[2] == 1.0);
  CHECK(prec[3] == doctest::Approx(0.75));
  CHECK(prec[4] == doctest::Approx(0.6));
  const auto rec = ccq::recall_at_r_curve(results, judge, 5);
  CHECK(rec[2] == 1.0);  // all relevant retrieved by rank 3
}

TEST_CASE("11-point interpolation matches a direct per-query computation") {
  std::mt19937_64 rng(13);
  const std::size_t db = 30;
  std::bernoulli_distribution coin(0.4);
  std::vector<char> relevant(db);
  for (auto& r : relevant) r = coin(rng) ? 1 : 0;
  const auto judge = binary_judge(1, relevant);

  std::vector<Eigen::Index> order(db);
  for (std::size_t i = 0; i < db; ++i) order[i] = static_cast<Eigen::Index>(i);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ccq::SearchResult> results = {result_from_order(order)};

  const auto pr = ccq::precision_recall_curve(results, judge);
  std::size_t total = 0;
  for (char r : relevant) total += r ? 1 : 0;
  for (std::size_t level = 0; level <= 10; ++level) {
    const double target = static_cast<double>(level) / 10.0;
    double best = 0.0;
    int hits = 0;
    for (std::size_t r = 0; r < db; ++r) {
      hits += relevant[static_cast<std::size_t>(order[r])] ? 1 : 0;
      const double rec = static_cast<double>(hits) / static_cast<double>(total);
      const double prec = static_cast<double>(hits) / static_cast<double>(r + 1);
      if (rec >= target - 1e-12) best = std::max(best, prec);
    }
    CHECK(pr[level].precision == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("run_protocol covers the six schemes and skips missing databases") {
  ccq::SynthParams params;
  params.clusters = 4;
  params.per_cluster = 50;
  params.dims = {12, 10};
  params.noise = 0.25;
  params.seed = 3;
  const auto data = ccq::generate_synthetic(params);

  ccq::CcqConfig cfg;
  cfg.num_codebooks = 2;
  cfg.codewords_per_book = 16;
  cfg.max_outer_iters = 10;
  cfg.seed = 4;
  ccq::Trainer trainer(data, cfg);
  const auto state = trainer.train();

  // Database = a fresh draw from the same cluster geometry; queries = another.
  ccq::SynthParams db_params = params;
  db_params.per_cluster = 40;
  db_params.seed = params.seed;  // same centers
  const auto db_data = ccq::generate_synthetic(db_params);
  ccq::SynthParams q_params = params;
  q_params.per_cluster = 10;
  const auto q_data_full = ccq::generate_synthetic(q_params);

  ccq::ProtocolDatabases dbs;
  dbs.image = ccq::CodeDatabase{ccq::encode_database(db_data.features[0], state.model, 0),
                                db_data.labels[0]};
  dbs.text = ccq::CodeDatabase{ccq::encode_database(db_data.features[1], state.model, 1),
                               db_data.labels[1]};
  dbs.joint = ccq::CodeDatabase{
      ccq::encode_joint_database({db_data.features[0], db_data.features[1]}, state.model),
      db_data.labels[0]};

  ccq::ProtocolOptions options;
  options.map_r = 10;
  options.topr_max = 30;

  SUBCASE("all six tasks run and beat chance decisively") {
    const auto report = ccq::run_protocol(state.model, dbs, q_data_full, options);
    REQUIRE(report.tasks.size() == 6);
    const char* expected[] = {"I2I", "T2T", "I2T", "T2I", "I2IT", "T2IT"};
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::string(ccq::task_name(report.tasks[i].task)) == expected[i]);
      CHECK_FALSE(report.tasks[i].skipped);
      CHECK(report.tasks[i].map >= 0.0);
      CHECK(report.tasks[i].map <= 1.0);
      CHECK(report.tasks[i].map > 2.0 * 0.25);  // chance level = 1/4
      for (double p : report.tasks[i].precision_at_r) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }

  SUBCASE("missing databases skip the dependent tasks") {
    ccq::ProtocolDatabases partial;
    partial.image = dbs.image;
    const auto report = ccq::run_protocol(state.model, partial, q_data_full, options);
    REQUIRE(report.tasks.size() == 6);
    CHECK_FALSE(report.tasks[0].skipped);  // I2I
    CHECK(report.tasks[1].skipped);        // T2T
    CHECK(report.tasks[2].skipped);        // I2T
    CHECK_FALSE(report.tasks[3].skipped);  // T2I
    CHECK(report.tasks[4].skipped);
    CHECK(report.tasks[5].skipped);
  }

  SUBCASE("report serialization carries the schema") {
    const auto report = ccq::run_protocol(state.model, dbs, q_data_full, options);
    const std::string json = ccq::report_to_json(report);
    CHECK(json.find("\"task\": \"I2T\"") != std::string::npos);
    CHECK(json.find("\"map\"") != std::string::npos);
    std::ostringstream csv;
    ccq::write_curves_csv(csv, report);
    CHECK(csv.str().rfind("task,r,precision,recall\n", 0) == 0);
    CHECK(csv.str().find("I2IT,1,") != std::string::npos);
  }
}

TEST_CASE("self-exclusion drops the query's own database entry") {
  const auto judge = binary_judge(2, {0, 1, 0});
  // Query 0's own id (0) sits at the top; once excluded, AP is driven by item 1.
  std::vector<ccq::SearchResult> results = {result_from_order({0, 1, 2}),
                                            result_from_order({1, 0, 2})};
  ccq::ProtocolOptions options;
  options.map_r = 2;
  options.topr_max = 2;
  // evaluate_task itself does not exclude; exclusion is a protocol step. Apply
  // it manually the way run_protocol does.
  for (std::size_t q = 0; q < results.size(); ++q) {
    std::erase_if(results[q].hits, [q](const ccq::SearchHit& h) {
      return h.index == static_cast<Eigen::Index>(q);
    });
  }
  CHECK(results[0].hits.size() == 2);
  CHECK(results[0].hits[0].index == 1);
  const auto report =
      ccq::evaluate_task(ccq::RetrievalTask::ImageToImage, results, judge, options);
  // Query 0: item 1 now ranks first, AP=1. Query 1: its only relevant item was
  // itself, so AP=0 after exclusion.
  CHECK(report.map == 0.5);
}
