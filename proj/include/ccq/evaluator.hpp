#pragma once

#include "ccq/searcher.hpp"
#include "ccq/types.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ccq {

/// Ground-truth relevance: a result is relevant to a query iff their concept
/// label sets intersect. Label sets must be sorted.
struct RelevanceJudge {
  std::vector<LabelSet> query_labels;
  std::vector<LabelSet> database_labels;

  bool relevant(Eigen::Index query, Eigen::Index item) const;
};

/// AP@R over a ranked relevance list: mean of the precision values at the
/// relevant ranks; 0 when nothing in the list is relevant. Throws on an empty
/// list.
double average_precision(const std::vector<char>& ranked_relevance);

/// Mean AP@R over all queries.
double map_at_r(std::span<const SearchResult> results, const RelevanceJudge& judge,
                int r);

/// Macro-averaged precision@r for r = 1..r_max (clamped to the shortest
/// result list).
std::vector<double> precision_at_r_curve(std::span<const SearchResult> results,
                                         const RelevanceJudge& judge, int r_max);

/// Macro-averaged recall@r on the same grid; queries with no relevant item in
/// the database are skipped.
std::vector<double> recall_at_r_curve(std::span<const SearchResult> results,
                                      const RelevanceJudge& judge, int r_max);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// 11-point interpolated precision-recall curve over the full rankings,
/// averaged across queries that have at least one relevant database item.
std::vector<PrPoint> precision_recall_curve(std::span<const SearchResult> results,
                                            const RelevanceJudge& judge);

enum class RetrievalTask : std::uint8_t {
  ImageToImage,
  TextToText,
  ImageToText,
  TextToImage,
  ImageToPair,
  TextToPair,
};

/// Short protocol name: I2I, T2T, I2T, T2I, I2IT, T2IT.
const char* task_name(RetrievalTask task);
std::optional<RetrievalTask> parse_task(const std::string& name);

struct TaskReport {
  RetrievalTask task = RetrievalTask::ImageToImage;
  bool skipped = false;
  std::size_t query_count = 0;
  int map_r = 0;
  double map = 0.0;
  std::vector<double> precision_at_r;
  std::vector<double> recall_at_r;
  std::vector<PrPoint> pr_curve;
};

struct EvalReport {
  std::vector<TaskReport> tasks;
};

/// One searchable code set plus its objects' concept labels.
struct CodeDatabase {
  PackedCodes codes;
  std::vector<LabelSet> labels;
};

/// Databases for the six-task protocol; absent entries make the dependent
/// tasks come back skipped. Modality 0 plays the image role, 1 the text role.
struct ProtocolDatabases {
  std::optional<CodeDatabase> image;
  std::optional<CodeDatabase> text;
  std::optional<CodeDatabase> joint;
};

struct ProtocolOptions {
  int map_r = 50;
  int topr_max = 1000;
  NormMode norm_mode = NormMode::QuantizedByte;
  // Drop database item i from query i's ranking (query set embedded in the
  // database).
  bool exclude_self = false;
};

/// Metrics for one task given precomputed rankings.
TaskReport evaluate_task(RetrievalTask task, std::span<const SearchResult> results,
                         const RelevanceJudge& judge, const ProtocolOptions& options);

/// Runs all six retrieval schemes: intra-modal, cross-modal, and fused-pair
/// databases. Queries come from the dataset's feature columns; relevance from
/// its labels.
EvalReport run_protocol(const CcqModel& model, const ProtocolDatabases& databases,
                        const ModalDataset& queries, const ProtocolOptions& options);

/// JSON text of the full report.
std::string report_to_json(const EvalReport& report);

/// Plot-ready rows: task,r,precision,recall.
void write_curves_csv(std::ostream& out, const EvalReport& report);

}  // namespace ccq
