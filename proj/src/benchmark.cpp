#include "riskbench/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "riskbench/digest.hpp"
#include "riskbench/error.hpp"
#include "riskbench/synth_harness.hpp"
#include "riskbench/task.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return sha256_hex(buffer.str());
}

std::string dataset_digest(const TabularDataset& dataset) {
  FieldHasher hasher;
  const auto ids = dataset.row_ids();
  hasher.add(std::string_view(reinterpret_cast<const char*>(ids.data()), ids.size_bytes()));
  for (std::size_t c = 0; c < dataset.num_columns(); ++c) {
    const auto column = dataset.column(c);
    hasher.add(dataset.schema()[c].name);
    hasher.add(std::string_view(reinterpret_cast<const char*>(column.data()), column.size_bytes()));
  }
  return hasher.hex();
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create results directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".riskbench-write-check";
  {
    std::ofstream out(probe, std::ios::trunc);
    if (!out || !(out << "ok")) throw IoError("results directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

/// Groups by descending record count, ties by name, "other" last.
std::vector<std::string> group_order(const std::vector<const ScoredRecord*>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto* r : records) ++counts[r->group];
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    const bool a_other = a.first == "other";
    const bool b_other = b.first == "other";
    if (a_other != b_other) return b_other;
    return a.second > b.second;
  });
  std::vector<std::string> out;
  for (const auto& [name, count] : sorted) out.push_back(name);
  return out;
}

std::string code_text(double code) {
  std::ostringstream out;
  out << code;
  return out.str();
}

std::shared_ptr<CompletionModel> make_inner_model(const BenchmarkConfig& config,
                                                  const std::vector<double>& oracle_p,
                                                  const TaskDefinition& task) {
  switch (config.source) {
    case ModelSource::oracle:
      return std::make_shared<OracleModel>(
          [&oracle_p](RowId id) {
            if (id >= oracle_p.size()) throw OracleError("row id outside the synthetic population");
            return oracle_p[id];
          },
          config.oracle_leakage, task.choice_texts.positive);
    case ModelSource::mock:
      return std::make_shared<ScriptedModel>(ScriptedModel::from_fixture(config.mock_fixture));
    case ModelSource::endpoint:
      break;
  }
  return std::make_shared<HttpCompletionModel>(config.endpoint);
}

}  // namespace

std::string_view to_string(ModelSource source) {
  switch (source) {
    case ModelSource::endpoint:
      return "endpoint";
    case ModelSource::mock:
      return "mock";
    case ModelSource::oracle:
      return "oracle";
  }
  return "endpoint";
}

void BenchmarkConfig::validate() const {
  if (task_id.empty()) throw ConfigError("task id is empty");
  if (results_dir.empty()) throw ConfigError("results directory is required");
  if (bins < 1) throw ConfigError("bin count must be at least 1");
  ThresholdPolicy{tau}.validate();
  if (top_k_logprobs < 2) throw ConfigError("top_logprobs must be at least 2");
  if (split) split->validate();
  if (subsample && *subsample == 0) throw ConfigError("subsample size must be positive");
  switch (source) {
    case ModelSource::endpoint:
      endpoint.validate();
      if (model_id.empty()) throw ConfigError("a model id is required with an endpoint");
      if (data_dir.empty()) throw ConfigError("a data directory is required");
      break;
    case ModelSource::mock:
      if (mock_fixture.empty()) throw ConfigError("mock mode needs a fixture file");
      if (data_dir.empty()) throw ConfigError("a data directory is required");
      break;
    case ModelSource::oracle:
      if (oracle_spec.empty()) throw ConfigError("oracle mode needs a synthetic spec");
      if (!(oracle_leakage > 0.0 && oracle_leakage <= 1.0)) throw ConfigError("oracle leakage must lie in (0, 1]");
      break;
  }
}

BenchmarkConfig benchmark_config_from_json(const json& doc, BenchmarkConfig c) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  for (const auto& key : {"api_key", "apikey", "key", "token"}) {
    if (doc.contains(key)) {
      throw ConfigError(std::string("config field \"") + key +
                        "\" is not accepted; keys are read from the environment variable named by api_key_env");
    }
  }
  try {
    if (doc.contains("task")) c.task_id = doc.at("task").get<std::string>();
    if (doc.contains("data_dir")) c.data_dir = doc.at("data_dir").get<std::string>();
    if (doc.contains("tasks_dir")) c.tasks_dir = doc.at("tasks_dir").get<std::string>();
    if (doc.contains("codebook_dir")) c.codebook_dir = doc.at("codebook_dir").get<std::string>();
    if (doc.contains("model")) c.model_id = doc.at("model").get<std::string>();
    if (doc.contains("endpoint")) {
      c.endpoint.base_url = doc.at("endpoint").get<std::string>();
      c.source = ModelSource::endpoint;
    }
    if (doc.contains("api_key_env")) c.endpoint.api_key_env = doc.at("api_key_env").get<std::string>();
    if (doc.contains("max_in_flight")) c.endpoint.max_in_flight = doc.at("max_in_flight").get<std::size_t>();
    if (doc.contains("max_attempts")) c.endpoint.retry.max_attempts = doc.at("max_attempts").get<int>();
    if (doc.contains("timeout")) c.endpoint.timeout_seconds = doc.at("timeout").get<double>();
    if (doc.contains("mock")) {
      c.mock_fixture = doc.at("mock").get<std::string>();
      c.source = ModelSource::mock;
    }
    if (doc.contains("oracle")) {
      c.oracle_spec = doc.at("oracle").get<std::string>();
      c.source = ModelSource::oracle;
    }
    if (doc.contains("oracle_leakage")) c.oracle_leakage = doc.at("oracle_leakage").get<double>();
    if (doc.contains("top_logprobs")) c.top_k_logprobs = doc.at("top_logprobs").get<int>();
    if (doc.contains("scheme")) c.scheme = parse_scheme(doc.at("scheme").get<std::string>());
    if (doc.contains("bins")) c.bins = doc.at("bins").get<std::size_t>();
    if (doc.contains("tau")) c.tau = doc.at("tau").get<double>();
    if (doc.contains("fit_threshold")) c.fit_threshold = doc.at("fit_threshold").get<bool>();
    if (doc.contains("subsample")) {
      c.subsample = doc.at("subsample").is_null() ? std::nullopt
                                                  : std::optional(doc.at("subsample").get<std::size_t>());
    }
    if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("split")) {
      const json& s = doc.at("split");
      if (s.is_null() || (s.is_string() && s.get<std::string>() == "none")) {
        c.split.reset();
      } else {
        const auto parts = s.get<std::vector<double>>();
        if (parts.size() != 3) throw ConfigError("split needs three fractions");
        SplitSpec spec = c.split.value_or(SplitSpec{});
        spec.train = parts[0];
        spec.validation = parts[1];
        spec.test = parts[2];
        c.split = spec;
      }
    }
    if (doc.contains("split_assignment") && c.split) {
      const auto mode = doc.at("split_assignment").get<std::string>();
      if (mode == "ranked") {
        c.split->assignment = SplitAssignment::ranked;
      } else if (mode == "keyed") {
        c.split->assignment = SplitAssignment::keyed;
      } else {
        throw ConfigError("unknown split assignment: " + mode);
      }
    }
    if (doc.contains("group_col")) {
      c.group_column = doc.at("group_col").is_null() ? std::string() : doc.at("group_col").get<std::string>();
      if (c.group_column == "none") c.group_column = std::string();
    }
    if (doc.contains("top_k_groups")) c.top_k_groups = doc.at("top_k_groups").get<std::size_t>();
    if (doc.contains("features")) c.feature_subset = doc.at("features").get<std::vector<std::string>>();
    if (doc.contains("results_dir")) c.results_dir = doc.at("results_dir").get<std::string>();
    if (doc.contains("cache_dir")) c.cache_dir = doc.at("cache_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

json semantic_config(const BenchmarkConfig& c) {
  json out = {{"task", c.task_id},
              {"model", c.model_id},
              {"source", to_string(c.source)},
              {"scheme", to_string(c.scheme)},
              {"top_logprobs", c.top_k_logprobs},
              {"bins", c.bins},
              {"fit_threshold", c.fit_threshold},
              {"tau", c.fit_threshold ? json(nullptr) : json(c.tau)},
              {"subsample", c.subsample ? json(*c.subsample) : json(nullptr)},
              {"seed", c.seed},
              {"group_col", c.group_column ? json(*c.group_column) : json(nullptr)},
              {"top_k_groups", c.top_k_groups},
              {"features", c.feature_subset}};
  out["split"] = c.split ? json{{"train", c.split->train},
                                {"validation", c.split->validation},
                                {"test", c.split->test},
                                {"assignment", c.split->assignment == SplitAssignment::ranked ? "ranked" : "keyed"}}
                         : json("none");
  switch (c.source) {
    case ModelSource::endpoint:
      out["endpoint"] = c.endpoint.base_url;
      break;
    case ModelSource::mock:
      out["mock_digest"] = file_digest(c.mock_fixture);
      break;
    case ModelSource::oracle:
      out["oracle_spec_digest"] = file_digest(c.oracle_spec);
      out["oracle_leakage"] = c.oracle_leakage;
      break;
  }
  return out;
}

std::string config_digest(const BenchmarkConfig& config) { return sha256_hex(semantic_config(config).dump()); }

Evaluation evaluate_records(const RecordTable& records, const EvaluationSettings& settings) {
  Evaluation ev;
  ev.policy.tau = settings.tau;
  if (settings.fit_threshold) {
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& r : records.scored) {
      if (r.split != "validation") continue;
      s.push_back(r.score);
      y.push_back(r.label);
    }
    ev.policy.tau = fit_threshold(s, y);
    ev.tau_fitted = true;
  }
  ev.policy.validate();

  std::vector<const ScoredRecord*> evaluated;
  for (const auto& r : records.scored) {
    if (r.split == "validation") continue;
    evaluated.push_back(&r);
    for (const auto& f : r.flags) ++ev.flag_counts[f];
  }
  for (const auto& r : records.excluded) {
    if (r.split == "validation") continue;
    ++ev.excluded;
    ++ev.excluded_by_reason[r.reason];
  }
  ev.scored = evaluated.size();
  if (evaluated.empty()) return ev;

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (const auto* r : evaluated) {
    scores.push_back(r->score);
    labels.push_back(r->label);
    groups.push_back(r->group);
  }
  ev.metrics = metric_report(scores, labels, settings.bins, ev.policy, ev.excluded);
  ev.curve_equal_width = calibration_curve(scores, labels, {settings.bins, BinningKind::equal_width});
  ev.curve_quantile = calibration_curve(scores, labels, {settings.bins, BinningKind::quantile});
  ev.histogram = score_distribution_stats(scores);
  if (settings.grouping) {
    const auto order = group_order(evaluated);
    ev.groups = group_metrics(scores, labels, groups, order, settings.bins, ev.policy);
  }
  return ev;
}

json to_json(const Evaluation& ev) {
  json out;
  out["scored"] = ev.scored;
  out["excluded"] = ev.excluded;
  const std::size_t total = ev.scored + ev.excluded;
  out["excluded_rate"] = total == 0 ? 0.0 : static_cast<double>(ev.excluded) / static_cast<double>(total);
  out["excluded_by_reason"] = ev.excluded_by_reason;
  out["flags"] = ev.flag_counts;
  out["threshold"] = {{"tau", ev.policy.tau}, {"fitted_on_validation", ev.tau_fitted}};
  out["metrics"] = ev.metrics ? to_json(*ev.metrics) : json(nullptr);
  out["calibration_curves"] = {
      {"equal_width", ev.curve_equal_width ? to_json(*ev.curve_equal_width) : json(nullptr)},
      {"quantile", ev.curve_quantile ? to_json(*ev.curve_quantile) : json(nullptr)}};
  out["score_distribution"] = ev.histogram ? to_json(*ev.histogram) : json(nullptr);
  out["groups"] = ev.groups ? to_json(*ev.groups) : json(nullptr);
  return out;
}

void write_metric_files(const std::filesystem::path& dir, const Evaluation& ev) {
  const auto group_file = dir / "group_metrics.csv";
  std::error_code ec;
  std::filesystem::remove(group_file, ec);
  if (!ev.metrics) {
    // Nothing scored: header-only tables keep the file set complete.
    write_metrics_csv(dir / "metrics.csv", MetricReport{});
    std::ofstream(dir / "calibration_curve_equal_width.csv", std::ios::trunc)
        << "bin,count,mean_score,positive_rate,ci_half_width,ci_lower,ci_upper\n";
    std::ofstream(dir / "calibration_curve_quantile.csv", std::ios::trunc)
        << "bin,count,mean_score,positive_rate,ci_half_width,ci_lower,ci_upper\n";
    std::ofstream(dir / "score_histogram.csv", std::ios::trunc) << "cell,lower,upper,count\n";
    return;
  }
  write_metrics_csv(dir / "metrics.csv", *ev.metrics);
  write_curve_csv(dir / "calibration_curve_equal_width.csv", *ev.curve_equal_width);
  write_curve_csv(dir / "calibration_curve_quantile.csv", *ev.curve_quantile);
  write_histogram_csv(dir / "score_histogram.csv", *ev.histogram);
  if (ev.groups) write_group_csv(group_file, *ev.groups);
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  ensure_writable(config.results_dir);

  const CodebookConfig codebook = load_codebook(config.codebook_dir);
  TaskDefinition task;
  TabularDataset population;
  std::optional<SyntheticSpec> synthetic;
  if (config.source == ModelSource::oracle) {
    synthetic = load_synthetic_spec(config.oracle_spec);
    task = make_oracle_task(resolve_task(config.task_id, config.tasks_dir), *synthetic);
    population = generate_population(*synthetic).dataset;
  } else {
    task = resolve_task(config.task_id, config.tasks_dir);
  }
  if (!config.feature_subset.empty()) task = task.with_features(config.feature_subset);
  const std::string group_column = config.group_column.value_or(task.group_column.value_or(""));
  if (group_column.empty()) {
    task.group_column.reset();
  } else {
    task.group_column = group_column;
  }
  task.validate();
  codebook.require(task.feature_columns);

  if (!synthetic) {
    const auto columns = task.referenced_columns();
    const auto schema = codebook.schema_for(columns);
    population = apply_population_filter(load_person_csv(config.data_dir, schema), task);
  }
  task.validate_against(population.schema());
  const std::string data_digest = dataset_digest(population);

  TabularDataset evaluated = population;
  std::optional<TabularDataset> validation;
  if (config.split) {
    SplitSpec split = *config.split;
    split.seed = config.seed;
    evaluated = partition(population, split, Partition::test);
    if (config.fit_threshold) validation = partition(population, split, Partition::validation);
  } else if (config.fit_threshold) {
    throw ConfigError("threshold fitting needs a validation split");
  }
  if (config.subsample) {
    evaluated = subsample(evaluated, *config.subsample, config.seed);
    if (validation && *config.subsample < validation->num_rows()) {
      validation = subsample(*validation, *config.subsample, config.seed);
    }
  }
  const auto eval_labels = binarize_target(evaluated, task);
  const auto validation_labels = validation ? binarize_target(*validation, task) : std::vector<int>{};

  std::vector<std::string> groups(evaluated.num_rows(), "other");
  std::vector<double> categories;
  if (task.group_column) {
    const auto assignment = group_values(evaluated, *task.group_column, config.top_k_groups);
    categories = assignment.categories;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (assignment.group_of_row[i] >= 0) groups[i] = code_text(categories[assignment.group_of_row[i]]);
    }
  }

  std::vector<double> oracle_p;
  if (synthetic) oracle_p = marginal_probabilities(*synthetic, population, task.feature_columns);
  auto instrumented = std::make_shared<InstrumentedModel>(make_inner_model(config, oracle_p, task));
  std::shared_ptr<CachedModel> cached;
  std::shared_ptr<CompletionModel> model = instrumented;
  if (!config.cache_dir.empty()) {
    cached = std::make_shared<CachedModel>(instrumented, config.cache_dir);
    model = cached;
  }

  ScoringOptions scoring;
  scoring.model_id = config.model_id.empty() ? std::string(to_string(config.source)) : config.model_id;
  scoring.scheme = config.scheme;
  scoring.top_k_logprobs = config.top_k_logprobs;
  scoring.max_in_flight = config.endpoint.max_in_flight;

  RecordTable records;
  const std::string eval_split = config.split ? "test" : "all";
  const auto collect = [&](const TabularDataset& rows, const std::vector<int>& labels,
                           const std::vector<std::string>* row_groups, const std::string& split) {
    const auto results = score_rows(rows, task, codebook, *model, scoring);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const RowId id = rows.row_ids()[i];
      const std::string group = row_groups ? (*row_groups)[i] : "other";
      if (results[i].result) {
        records.scored.push_back({id, results[i].result->score, labels[i], group, config.scheme,
                                  results[i].result->flags, split});
      } else {
        spdlog::debug("row {} excluded ({}): {}", id, results[i].failure, results[i].detail);
        records.excluded.push_back({id, labels[i], group, config.scheme, results[i].failure, split});
      }
    }
  };
  if (validation) {
    spdlog::info("scoring {} validation rows", validation->num_rows());
    collect(*validation, validation_labels, nullptr, "validation");
  }
  spdlog::info("scoring {} {} rows", evaluated.num_rows(), eval_split);
  collect(evaluated, eval_labels, &groups, eval_split);

  write_records_csv(config.results_dir / "scored_records.csv", records);

  BenchmarkResult result;
  EvaluationSettings settings{config.bins, config.fit_threshold, config.tau, task.group_column.has_value()};
  result.evaluation = evaluate_records(records, settings);
  const std::size_t total = result.evaluation.scored + result.evaluation.excluded;
  result.excluded_rate = total == 0 ? 0.0 : static_cast<double>(result.evaluation.excluded) / static_cast<double>(total);

  json group_labels = json::object();
  if (task.group_column && codebook.contains(*task.group_column)) {
    const auto& mapping = codebook.at(*task.group_column);
    for (double code : categories) group_labels[code_text(code)] = mapping.value_text(code);
  }
  json lineage = json::array();
  for (const auto& step : evaluated.lineage()) lineage.push_back(lineage::describe(step));

  json& report = result.report;
  report["format"] = "riskbench-report";
  report["version"] = 1;
  report["config"] = semantic_config(config);
  report["config_digest"] = config_digest(config);
  report["task"] = task_to_json(task);
  report["data"] = {{"digest", data_digest},
                    {"population_rows", population.num_rows()},
                    {"evaluated_rows", evaluated.num_rows()},
                    {"validation_rows", validation ? validation->num_rows() : 0},
                    {"lineage", lineage}};
  report["records_digest"] = file_digest(config.results_dir / "scored_records.csv");
  report["evaluation"] = to_json(result.evaluation);
  report["group_column"] = task.group_column ? json(*task.group_column) : json(nullptr);
  report["group_labels"] = group_labels;
  if (!task.group_column) report["group_note"] = "grouping disabled; group_metrics.csv not written";

  result.stats.model_calls = instrumented->calls();
  if (cached) {
    result.stats.cache_hits = cached->hits();
    result.stats.cache_misses = cached->misses();
  }
  result.stats.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  emit_report(result, config.results_dir);
  return result;
}

void emit_report(const BenchmarkResult& result, const std::filesystem::path& results_dir) {
  write_metric_files(results_dir, result.evaluation);
  write_json(results_dir / "report.json", result.report);
  write_json(results_dir / "run_stats.json", {{"wall_clock_seconds", result.stats.wall_clock_seconds},
                                              {"model_calls", result.stats.model_calls},
                                              {"cache_hits", result.stats.cache_hits},
                                              {"cache_misses", result.stats.cache_misses}});
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const CapabilityError*>(&error) != nullptr) return 3;
  if (dynamic_cast<const IoError*>(&error) != nullptr ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&error) != nullptr) {
    return 5;
  }
  if (dynamic_cast<const ConfigError*>(&error) != nullptr ||
      dynamic_cast<const SchemaError*>(&error) != nullptr ||
      dynamic_cast<const ParseError*>(&error) != nullptr ||
      dynamic_cast<const TypeError*>(&error) != nullptr ||
      dynamic_cast<const SizeError*>(&error) != nullptr ||
      dynamic_cast<const CodebookError*>(&error) != nullptr ||
      dynamic_cast<const SpecError*>(&error) != nullptr ||
      dynamic_cast<const DegenerateDataError*>(&error) != nullptr ||
      dynamic_cast<const ScriptedMissError*>(&error) != nullptr ||
      dynamic_cast<const OracleError*>(&error) != nullptr) {
    return 2;
  }
  return 1;
}

}  // namespace riskbench
