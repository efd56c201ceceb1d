// Command-line front end: train / encode / search / eval / synth.

#include "ccq/evaluator.hpp"
#include "ccq/io.hpp"
#include "ccq/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
  json err;
  err["error"] = message;
  std::cerr << err.dump() << std::endl;
  std::exit(1);
}

ccq::ModalDataset dataset_from_files(const std::vector<ccq::FeatureFile>& files,
                                     std::optional<Eigen::Index> paired_override) {
  ccq::ModalDataset data;
  Eigen::Index paired = paired_override.value_or(
      files.empty() ? 0 : files.front().paired_count);
  if (!paired_override) {
    for (const auto& f : files) paired = std::min(paired, f.paired_count);
  }
  data.paired_count = paired;
  for (const auto& f : files) {
    data.features.push_back(f.features);
    data.labels.push_back(f.labels);
  }
  return data;
}

ccq::EncodeMode parse_mode(const std::string& name) {
  if (name == "icm") return ccq::EncodeMode::Icm;
  if (name == "greedy") return ccq::EncodeMode::Greedy;
  fail("unknown encode mode: " + name + " (expected icm or greedy)");
}

ccq::NormMode parse_norm_mode(const std::string& name) {
  if (name == "byte") return ccq::NormMode::QuantizedByte;
  if (name == "exact") return ccq::NormMode::ExactDecoded;
  fail("unknown norm mode: " + name + " (expected byte or exact)");
}

std::vector<double> parse_weights(const std::string& spec, int modalities) {
  std::vector<double> weights;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) weights.push_back(std::stod(item));
  if (weights.size() == 1) weights.assign(static_cast<std::size_t>(modalities), weights[0]);
  if (static_cast<int>(weights.size()) != modalities) {
    fail("--lambda needs one value or one per modality");
  }
  return weights;
}

int run_train(const std::vector<std::string>& data_paths, std::optional<long long> paired,
              int num_books, int book_size, std::optional<int> bits,
              std::optional<int> latent_dim, const std::string& lambda_spec,
              const std::string& mode, int icm_sweeps, int max_iters, double tol,
              double ridge, long long batch_size, unsigned long long seed, bool zca,
              const std::string& out_path) {
  std::vector<ccq::FeatureFile> files;
  for (const auto& p : data_paths) files.push_back(ccq::load_features(p));

  if (bits) {
    const int per_book = std::countr_zero(static_cast<std::uint32_t>(book_size));
    if (per_book == 0 || *bits % per_book != 0) {
      fail("--bits must be a multiple of log2(K)");
    }
    const int derived = *bits / per_book;
    if (num_books != 0 && num_books != derived) {
      fail("--bits disagrees with --M for the given --K");
    }
    num_books = derived;
  }
  if (num_books == 0) num_books = 4;

  ccq::ModalDataset data = dataset_from_files(
      files, paired ? std::optional<Eigen::Index>(*paired) : std::nullopt);

  std::vector<std::optional<ccq::ZcaTransform>> preprocessing;
  if (zca) {
    preprocessing.resize(data.features.size());
    for (std::size_t v = 0; v < data.features.size(); ++v) {
      auto [whitened, transform] = ccq::zca_whiten(data.features[v]);
      data.features[v] = std::move(whitened);
      preprocessing[v] = std::move(transform);
    }
  }

  ccq::CcqConfig config;
  config.num_modalities = static_cast<int>(data.features.size());
  config.num_codebooks = num_books;
  config.codewords_per_book = book_size;
  config.latent_dim = latent_dim.value_or(0);
  config.modality_weights = lambda_spec.empty()
                                ? std::vector<double>()
                                : parse_weights(lambda_spec, config.num_modalities);
  config.max_outer_iters = max_iters;
  config.icm_sweeps = icm_sweeps;
  config.encode_mode = parse_mode(mode);
  config.ridge = ridge;
  config.convergence_tol = tol;
  config.seed = seed;
  config.batch_size = static_cast<Eigen::Index>(batch_size);

  config = ccq::resolved_config(config, data);
  const auto report = ccq::validate_config(config, data);
  if (!report.ok()) {
    std::string msg = "invalid configuration:";
    for (const auto& v : report.violations) msg += " [" + v + "]";
    fail(msg);
  }

  ccq::Trainer trainer(data, config);
  ccq::TrainState state = trainer.train();

  ccq::ModelFile file;
  file.model = std::move(state.model);
  file.preprocessing = std::move(preprocessing);
  ccq::save_model(out_path, file);

  json summary;
  summary["iterations"] = state.iteration;
  summary["initial_objective"] = file.model.training_log.front();
  summary["final_objective"] = file.model.training_log.back();
  summary["code_bits"] = ccq::code_length_bits(config);
  summary["latent_dim"] = config.latent_dim;
  summary["model"] = out_path;
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int run_encode(const std::string& model_path, const std::vector<std::string>& data_paths,
               int modality, bool joint, const std::string& out_path) {
  const ccq::ModelFile file = ccq::load_model(model_path);
  auto preprocess = [&](const ccq::Matrix& x, int v) -> ccq::Matrix {
    if (static_cast<std::size_t>(v) < file.preprocessing.size() &&
        file.preprocessing[static_cast<std::size_t>(v)].has_value()) {
      return ccq::apply_zca(*file.preprocessing[static_cast<std::size_t>(v)], x);
    }
    return x;
  };

  ccq::PackedCodes codes;
  if (joint) {
    if (static_cast<int>(data_paths.size()) != file.model.config.num_modalities) {
      fail("--joint needs one feature file per modality");
    }
    std::vector<ccq::Matrix> features;
    for (std::size_t v = 0; v < data_paths.size(); ++v) {
      features.push_back(
          preprocess(ccq::load_features(data_paths[v]).features, static_cast<int>(v)));
    }
    codes = ccq::encode_joint_database(features, file.model);
  } else {
    if (data_paths.size() != 1) fail("encode needs exactly one feature file");
    const ccq::Matrix features =
        preprocess(ccq::load_features(data_paths[0]).features, modality);
    codes = ccq::encode_database(features, file.model, modality);
  }
  ccq::save_codes(out_path, codes);

  json summary;
  summary["count"] = codes.count;
  summary["bytes_per_point"] = codes.bytes_per_point();
  summary["codes"] = out_path;
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

int run_search(const std::string& model_path, const std::string& codes_path,
               const std::string& queries_path, int query_modality, long long topk,
               const std::string& norm_mode, const std::string& out_path) {
  const ccq::ModelFile file = ccq::load_model(model_path);
  const ccq::PackedCodes codes = ccq::load_codes(codes_path);
  ccq::Matrix queries = ccq::load_features(queries_path).features;
  if (static_cast<std::size_t>(query_modality) < file.preprocessing.size() &&
      file.preprocessing[static_cast<std::size_t>(query_modality)].has_value()) {
    queries = ccq::apply_zca(
        *file.preprocessing[static_cast<std::size_t>(query_modality)], queries);
  }
  const ccq::NormMode mode = parse_norm_mode(norm_mode);

  json results = json::array();
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    const ccq::QueryTable table =
        ccq::build_query_table(queries.col(q), file.model, query_modality);
    const ccq::SearchResult res =
        ccq::search(table, codes, static_cast<Eigen::Index>(topk), mode,
                    mode == ccq::NormMode::ExactDecoded ? &file.model.codebook : nullptr);
    json entry;
    entry["query_id"] = q;
    entry["neighbors"] = json::array();
    for (const auto& hit : res.hits) {
      entry["neighbors"].push_back({{"id", hit.index}, {"score", hit.score}});
    }
    if (res.clamped) entry["clamped"] = true;
    results.push_back(std::move(entry));
  }

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) fail("cannot open for writing: " + out_path);
  out << results.dump(2) << std::endl;

  json summary;
  summary["queries"] = queries.cols();
  summary["results"] = out_path;
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

std::vector<ccq::SearchResult> load_results_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open: " + path);
  json root = json::parse(in, nullptr, false);
  if (root.is_discarded() || !root.is_array()) fail("malformed results file: " + path);
  std::vector<ccq::SearchResult> results(root.size());
  for (const auto& entry : root) {
    const std::size_t q = entry.at("query_id").get<std::size_t>();
    if (q >= results.size()) fail("query_id out of range in " + path);
    for (const auto& n : entry.at("neighbors")) {
      results[q].hits.push_back({n.at("id").get<Eigen::Index>(),
                                 n.at("score").get<double>()});
    }
  }
  return results;
}

int run_eval(const std::vector<std::string>& tasks,
             const std::vector<std::string>& results_paths,
             const std::vector<std::string>& query_label_paths,
             const std::vector<std::string>& db_label_paths, int map_r, int topr_max,
             bool exclude_self, const std::string& out_path,
             const std::string& curves_path) {
  if (tasks.size() != results_paths.size() || tasks.size() != query_label_paths.size() ||
      tasks.size() != db_label_paths.size()) {
    fail("--tasks, --results, --query-labels and --db-labels need matching lengths");
  }
  ccq::ProtocolOptions options;
  options.map_r = map_r;
  options.topr_max = topr_max;
  options.exclude_self = exclude_self;

  ccq::EvalReport report;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto task = ccq::parse_task(tasks[i]);
    if (!task) fail("unknown task: " + tasks[i]);
    std::vector<ccq::SearchResult> results = load_results_json(results_paths[i]);
    if (exclude_self) {
      for (std::size_t q = 0; q < results.size(); ++q) {
        std::erase_if(results[q].hits, [q](const ccq::SearchHit& h) {
          return h.index == static_cast<Eigen::Index>(q);
        });
      }
    }
    ccq::RelevanceJudge judge;
    judge.query_labels = ccq::load_features(query_label_paths[i]).labels;
    judge.database_labels = ccq::load_features(db_label_paths[i]).labels;
    if (judge.query_labels.empty() || judge.database_labels.empty()) {
      fail("label blocks are required for evaluation");
    }
    report.tasks.push_back(ccq::evaluate_task(*task, results, judge, options));
  }

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) fail("cannot open for writing: " + out_path);
  out << ccq::report_to_json(report) << std::endl;
  if (!curves_path.empty()) {
    std::ofstream curves(curves_path, std::ios::trunc);
    if (!curves) fail("cannot open for writing: " + curves_path);
    ccq::write_curves_csv(curves, report);
  }

  for (const auto& t : report.tasks) {
    std::cout << ccq::task_name(t.task) << " MAP@" << t.map_r << " = " << t.map
              << std::endl;
  }
  return 0;
}

int run_synth(int clusters, int per_cluster, const std::string& dims_spec, double noise,
              double paired_fraction, unsigned long long seed,
              const std::string& out_prefix) {
  ccq::SynthParams params;
  params.clusters = clusters;
  params.per_cluster = per_cluster;
  params.noise = noise;
  params.paired_fraction = paired_fraction;
  params.seed = seed;
  {
    std::stringstream ss(dims_spec);
    std::string item;
    std::vector<int> dims;
    while (std::getline(ss, item, ',')) dims.push_back(std::stoi(item));
    if (dims.size() != 2) fail("--dims needs two comma-separated values");
    params.dims = {dims[0], dims[1]};
  }

  const ccq::ModalDataset data = ccq::generate_synthetic(params);
  for (int v = 0; v < 2; ++v) {
    ccq::FeatureFile file;
    file.features = data.features[static_cast<std::size_t>(v)];
    file.paired_count = data.paired_count;
    file.labels = data.labels[static_cast<std::size_t>(v)];
    ccq::save_features(out_prefix + ".m" + std::to_string(v) + ".feat", file);
  }

  json summary;
  summary["objects_per_modality"] = data.features[0].cols();
  summary["paired_count"] = data.paired_count;
  summary["files"] = {out_prefix + ".m0.feat", out_prefix + ".m1.feat"};
  std::cout << summary.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composite correlation quantization toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Learn mappings, codebook and codes");
  std::vector<std::string> train_data;
  std::optional<long long> train_paired;
  int train_m = 0, train_k = 256, train_sweeps = 3, train_iters = 30;
  std::optional<int> train_bits, train_dim;
  std::string train_lambda, train_mode = "icm", train_out;
  double train_tol = 1e-4, train_ridge = 1e-6;
  long long train_batch = 0;
  unsigned long long train_seed = 0;
  bool train_zca = false;
  train->add_option("--data", train_data, "Feature files, one per modality")
      ->required()
      ->expected(1, -1);
  train->add_option("--paired", train_paired, "Aligned-pair prefix size override");
  train->add_option("--M", train_m, "Number of codebooks");
  train->add_option("--K", train_k, "Codewords per book (power of two)");
  train->add_option("--bits", train_bits, "Total code bits (alternative to --M)");
  train->add_option("--dim", train_dim, "Latent dimension override");
  train->add_option("--lambda", train_lambda, "Modality weights (single or comma list)");
  train->add_option("--encode-mode", train_mode, "icm or greedy");
  train->add_option("--icm-sweeps", train_sweeps, "Coordinate sweeps per point");
  train->add_option("--iters", train_iters, "Max outer iterations");
  train->add_option("--tol", train_tol, "Relative objective convergence tolerance");
  train->add_option("--ridge", train_ridge, "Codebook update regularizer scale");
  train->add_option("--batch-size", train_batch, "Mini-batch columns (0 = full batch)");
  train->add_option("--seed", train_seed, "RNG seed");
  train->add_flag("--zca", train_zca, "ZCA-whiten features (transform saved)");
  train->add_option("--out", train_out, "Output model path")->required();

  // encode
  auto* encode = app.add_subcommand("encode", "Quantize a feature file");
  std::string encode_model, encode_out;
  std::vector<std::string> encode_data;
  int encode_modality = 0;
  bool encode_joint = false;
  encode->add_option("--model", encode_model, "Model file")->required();
  encode->add_option("--data", encode_data, "Feature file(s)")->required()->expected(1, -1);
  encode->add_option("--modality", encode_modality, "Modality of the data");
  encode->add_flag("--joint", encode_joint, "Fuse paired modalities into one code");
  encode->add_option("--out", encode_out, "Output codes path")->required();

  // search
  auto* search = app.add_subcommand("search", "Linear-scan top-k retrieval");
  std::string search_model, search_codes, search_queries, search_out;
  std::string search_norm = "byte";
  int search_modality = 0;
  long long search_topk = 50;
  search->add_option("--model", search_model, "Model file")->required();
  search->add_option("--codes", search_codes, "Database codes")->required();
  search->add_option("--queries", search_queries, "Query feature file")->required();
  search->add_option("--query-modality", search_modality, "Modality of the queries");
  search->add_option("--topk", search_topk, "Results per query");
  search->add_option("--norm-mode", search_norm, "byte or exact");
  search->add_option("--out", search_out, "Output results JSON")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Retrieval metrics from results files");
  std::vector<std::string> eval_tasks, eval_results, eval_qlabels, eval_dblabels;
  int eval_map_r = 50, eval_topr = 1000;
  bool eval_exclude_self = false;
  std::string eval_out, eval_curves;
  eval->add_option("--tasks", eval_tasks, "Task names (I2I,T2T,I2T,T2I,I2IT,T2IT)")
      ->required()
      ->delimiter(',');
  eval->add_option("--results", eval_results, "Results JSON per task")
      ->required()
      ->delimiter(',');
  eval->add_option("--query-labels", eval_qlabels, "Feature file with query labels, per task")
      ->required()
      ->delimiter(',');
  eval->add_option("--db-labels", eval_dblabels, "Feature file with database labels, per task")
      ->required()
      ->delimiter(',');
  eval->add_option("--map-r", eval_map_r, "Ranking depth for MAP");
  eval->add_option("--topr-max", eval_topr, "Maximum rank for precision@r curves");
  eval->add_flag("--exclude-self", eval_exclude_self, "Drop database item i from query i");
  eval->add_option("--out", eval_out, "Output report JSON")->required();
  eval->add_option("--curves", eval_curves, "Output curves CSV");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a clustered bimodal dataset");
  int synth_clusters = 10, synth_per = 100;
  std::string synth_dims = "64,64", synth_out;
  double synth_noise = 0.3, synth_fraction = 1.0;
  unsigned long long synth_seed = 0;
  synth->add_option("--clusters", synth_clusters, "Cluster count");
  synth->add_option("--per-cluster", synth_per, "Objects per cluster");
  synth->add_option("--dims", synth_dims, "Feature dims, e.g. 64,64");
  synth->add_option("--noise", synth_noise, "Within-cluster noise sigma");
  synth->add_option("--paired-fraction", synth_fraction, "Fraction of aligned pairs");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--out", synth_out, "Output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    json err;
    err["error"] = e.what();
    std::cerr << err.dump() << std::endl;
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  try {
    if (train->parsed()) {
      return run_train(train_data, train_paired, train_m, train_k, train_bits, train_dim,
                       train_lambda, train_mode, train_sweeps, train_iters, train_tol,
                       train_ridge, train_batch, train_seed, train_zca, train_out);
    }
    if (encode->parsed()) {
      return run_encode(encode_model, encode_data, encode_modality, encode_joint,
                        encode_out);
    }
    if (search->parsed()) {
      return run_search(search_model, search_codes, search_queries, search_modality,
                        search_topk, search_norm, search_out);
    }
    if (eval->parsed()) {
      return run_eval(eval_tasks, eval_results, eval_qlabels, eval_dblabels, eval_map_r,
                      eval_topr, eval_exclude_self, eval_out, eval_curves);
    }
    if (synth->parsed()) {
      return run_synth(synth_clusters, synth_per, synth_dims, synth_noise, synth_fraction,
                       synth_seed, synth_out);
    }
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return 0;
}
