#include "ccq/evaluator.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace ccq {

bool RelevanceJudge::relevant(Eigen::Index query, Eigen::Index item) const {
  const LabelSet& a = query_labels.at(static_cast<std::size_t>(query));
  const LabelSet& b = database_labels.at(static_cast<std::size_t>(item));
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j]) ++i; else ++j;
  }
  return false;
}

double average_precision(const std::vector<char>& ranked_relevance) {
  if (ranked_relevance.empty()) {
    throw std::invalid_argument("average_precision needs a nonempty list");
  }
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (ranked_relevance[r]) {
      hits += 1.0;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  return hits > 0 ? sum / hits : 0.0;
}

namespace {

std::vector<char> relevance_list(const SearchResult& result, const RelevanceJudge& judge,
                                 Eigen::Index query, std::size_t limit) {
  const std::size_t n = std::min(limit, result.hits.size());
  std::vector<char> rel(n);
  for (std::size_t r = 0; r < n; ++r) {
    rel[r] = judge.relevant(query, result.hits[r].index) ? 1 : 0;
  }
  return rel;
}

std::size_t shortest_result(std::span<const SearchResult> results) {
  std::size_t n = results.empty() ? 0 : results[0].hits.size();
  for (const auto& r : results) n = std::min(n, r.hits.size());
  return n;
}

}  // namespace

double map_at_r(std::span<const SearchResult> results, const RelevanceJudge& judge,
                int r) {
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    sum += average_precision(relevance_list(results[q], judge,
                                            static_cast<Eigen::Index>(q),
                                            static_cast<std::size_t>(r)));
  }
  return sum / static_cast<double>(results.size());
}

std::vector<double> precision_at_r_curve(std::span<const SearchResult> results,
                                         const RelevanceJudge& judge, int r_max) {
  const std::size_t depth =
      std::min<std::size_t>(static_cast<std::size_t>(r_max), shortest_result(results));
  std::vector<double> curve(depth, 0.0);
  if (results.empty() || depth == 0) return curve;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto rel = relevance_list(results[q], judge, static_cast<Eigen::Index>(q), depth);
    double hits = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (rel[r]) hits += 1.0;
      curve[r] += hits / static_cast<double>(r + 1);
    }
  }
  for (double& p : curve) p /= static_cast<double>(results.size());
  return curve;
}

std::vector<double> recall_at_r_curve(std::span<const SearchResult> results,
                                      const RelevanceJudge& judge, int r_max) {
  const std::size_t depth =
      std::min<std::size_t>(static_cast<std::size_t>(r_max), shortest_result(results));
  std::vector<double> curve(depth, 0.0);
  if (results.empty() || depth == 0) return curve;
  std::size_t counted = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < judge.database_labels.size(); ++i) {
      if (judge.relevant(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i))) {
        ++total;
      }
    }
    if (total == 0) continue;
    ++counted;
    const auto rel = relevance_list(results[q], judge, static_cast<Eigen::Index>(q), depth);
    double hits = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (rel[r]) hits += 1.0;
      curve[r] += hits / static_cast<double>(total);
    }
  }
  if (counted > 0) {
    for (double& v : curve) v /= static_cast<double>(counted);
  }
  return curve;
}

std::vector<PrPoint> precision_recall_curve(std::span<const SearchResult> results,
                                            const RelevanceJudge& judge) {
  std::vector<PrPoint> curve(11);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    curve[i].recall = static_cast<double>(i) / 10.0;
  }
  std::size_t counted = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < judge.database_labels.size(); ++i) {
      if (judge.relevant(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i))) {
        ++total;
      }
    }
    if (total == 0) continue;
    ++counted;
    const auto rel = relevance_list(results[q], judge, static_cast<Eigen::Index>(q),
                                    results[q].hits.size());
    // Precision/recall at every rank, then interpolate: the precision at a
    // recall level is the best precision achieved at or beyond it.
    std::vector<double> precision(rel.size()), recall(rel.size());
    double hits = 0.0;
    for (std::size_t r = 0; r < rel.size(); ++r) {
      if (rel[r]) hits += 1.0;
      precision[r] = hits / static_cast<double>(r + 1);
      recall[r] = hits / static_cast<double>(total);
    }
    for (std::size_t i = 0; i < curve.size(); ++i) {
      const double level = curve[i].recall;
      double best = 0.0;
      for (std::size_t r = 0; r < rel.size(); ++r) {
        if (recall[r] >= level - 1e-12) best = std::max(best, precision[r]);
      }
      curve[i].precision += best;
    }
  }
  if (counted > 0) {
    for (auto& p : curve) p.precision /= static_cast<double>(counted);
  }
  return curve;
}

const char* task_name(RetrievalTask task) {
  switch (task) {
    case RetrievalTask::ImageToImage: return "I2I";
    case RetrievalTask::TextToText: return "T2T";
    case RetrievalTask::ImageToText: return "I2T";
    case RetrievalTask::TextToImage: return "T2I";
    case RetrievalTask::ImageToPair: return "I2IT";
    case RetrievalTask::TextToPair: return "T2IT";
  }
  return "?";
}

std::optional<RetrievalTask> parse_task(const std::string& name) {
  for (RetrievalTask t :
       {RetrievalTask::ImageToImage, RetrievalTask::TextToText,
        RetrievalTask::ImageToText, RetrievalTask::TextToImage,
        RetrievalTask::ImageToPair, RetrievalTask::TextToPair}) {
    if (name == task_name(t)) return t;
  }
  return std::nullopt;
}

TaskReport evaluate_task(RetrievalTask task, std::span<const SearchResult> results,
                         const RelevanceJudge& judge, const ProtocolOptions& options) {
  TaskReport report;
  report.task = task;
  report.query_count = results.size();
  report.map_r = options.map_r;
  report.map = map_at_r(results, judge, options.map_r);
  report.precision_at_r = precision_at_r_curve(results, judge, options.topr_max);
  report.recall_at_r = recall_at_r_curve(results, judge, options.topr_max);
  report.pr_curve = precision_recall_curve(results, judge);
  return report;
}

namespace {

TaskReport skipped_task(RetrievalTask task) {
  TaskReport report;
  report.task = task;
  report.skipped = true;
  return report;
}

}  // namespace

EvalReport run_protocol(const CcqModel& model, const ProtocolDatabases& databases,
                        const ModalDataset& queries, const ProtocolOptions& options) {
  struct Scheme {
    RetrievalTask task;
    int query_modality;
    const std::optional<CodeDatabase>* database;
  };
  const Scheme schemes[] = {
      {RetrievalTask::ImageToImage, 0, &databases.image},
      {RetrievalTask::TextToText, 1, &databases.text},
      {RetrievalTask::ImageToText, 0, &databases.text},
      {RetrievalTask::TextToImage, 1, &databases.image},
      {RetrievalTask::ImageToPair, 0, &databases.joint},
      {RetrievalTask::TextToPair, 1, &databases.joint},
  };

  EvalReport report;
  for (const Scheme& scheme : schemes) {
    const bool have_queries =
        scheme.query_modality < queries.num_modalities() &&
        static_cast<std::size_t>(scheme.query_modality) < queries.labels.size() &&
        queries.count(scheme.query_modality) > 0;
    if (!scheme.database->has_value() || !have_queries) {
      report.tasks.push_back(skipped_task(scheme.task));
      continue;
    }
    const CodeDatabase& db = scheme.database->value();
    const Matrix& q_features =
        queries.features[static_cast<std::size_t>(scheme.query_modality)];
    const Eigen::Index query_count = q_features.cols();
    const Eigen::Index db_count = static_cast<Eigen::Index>(db.codes.count);

    // Full rankings: the PR curve needs them, and MAP/precision@r truncate.
    std::vector<SearchResult> results(static_cast<std::size_t>(query_count));
    for (Eigen::Index q = 0; q < query_count; ++q) {
      const QueryTable table =
          build_query_table(q_features.col(q), model, scheme.query_modality);
      SearchResult res =
          search(table, db.codes, db_count, options.norm_mode,
                 options.norm_mode == NormMode::ExactDecoded ? &model.codebook : nullptr);
      if (options.exclude_self) {
        std::erase_if(res.hits, [q](const SearchHit& h) { return h.index == q; });
      }
      results[static_cast<std::size_t>(q)] = std::move(res);
    }

    RelevanceJudge judge;
    judge.query_labels = queries.labels[static_cast<std::size_t>(scheme.query_modality)];
    judge.database_labels = db.labels;
    report.tasks.push_back(evaluate_task(scheme.task, results, judge, options));
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json root;
  root["tasks"] = nlohmann::json::array();
  for (const TaskReport& t : report.tasks) {
    nlohmann::json task;
    task["task"] = task_name(t.task);
    task["skipped"] = t.skipped;
    if (!t.skipped) {
      task["query_count"] = t.query_count;
      task["map_r"] = t.map_r;
      task["map"] = t.map;
      task["precision_at_r"] = t.precision_at_r;
      task["recall_at_r"] = t.recall_at_r;
      nlohmann::json pr = nlohmann::json::array();
      for (const PrPoint& p : t.pr_curve) {
        pr.push_back({{"recall", p.recall}, {"precision", p.precision}});
      }
      task["pr_curve"] = pr;
    }
    root["tasks"].push_back(task);
  }
  return root.dump(2);
}

void write_curves_csv(std::ostream& out, const EvalReport& report) {
  out << "task,r,precision,recall\n";
  for (const TaskReport& t : report.tasks) {
    if (t.skipped) continue;
    const std::size_t depth = std::min(t.precision_at_r.size(), t.recall_at_r.size());
    for (std::size_t r = 0; r < depth; ++r) {
      out << task_name(t.task) << ',' << (r + 1) << ',' << t.precision_at_r[r] << ','
          << t.recall_at_r[r] << '\n';
    }
  }
}

}  // namespace ccq
