// riskbench: risk-score calibration benchmark for language models on survey tasks.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "riskbench/benchmark.hpp"
#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"

#ifndef RISKBENCH_DATA_DIR
#define RISKBENCH_DATA_DIR "data"
#endif

namespace {

using riskbench::BenchmarkConfig;
using riskbench::ConfigError;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::optional<riskbench::SplitSpec> parse_split(const std::string& text,
                                                std::optional<riskbench::SplitSpec> base) {
  if (text == "none") return std::nullopt;
  const auto parts = split_list(text);
  if (parts.size() != 3) throw ConfigError("--split takes three comma-separated fractions or 'none'");
  riskbench::SplitSpec spec = base.value_or(riskbench::SplitSpec{});
  double* fields[] = {&spec.train, &spec.validation, &spec.test};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto value = riskbench::csv::parse_double(parts[i]);
    if (!value) throw ConfigError("bad split fraction: " + parts[i]);
    *fields[i] = *value;
  }
  return spec;
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw riskbench::IoError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

struct RunFlags {
  std::string config_file, task, data_dir, tasks_dir, codebook_dir, model, endpoint, api_key_env;
  std::size_t max_in_flight = 4;
  int max_attempts = 5;
  double timeout = 60.0;
  std::string scheme, split, split_assignment, group_col, features, results_dir, cache_dir;
  std::string mock, oracle;
  double oracle_leakage = 1.0;
  std::size_t bins = 10, subsample = 0, top_k_groups = 5;
  double tau = 0.5;
  bool fit_threshold = false;
  std::uint64_t seed = 0;
  int top_logprobs = 20;
};

struct EvaluateFlags {
  std::string records, results_dir;
  std::size_t bins = 10;
  double tau = 0.5;
  bool fit_threshold = false;
  bool no_groups = false;
};

BenchmarkConfig build_config(const RunFlags& f, CLI::App& run) {
  BenchmarkConfig c;
  c.tasks_dir = std::filesystem::path(RISKBENCH_DATA_DIR) / "tasks";
  c.codebook_dir = std::filesystem::path(RISKBENCH_DATA_DIR) / "codebook";
  if (!f.config_file.empty()) c = riskbench::benchmark_config_from_json(read_config_file(f.config_file), c);

  const auto given = [&run](const char* name) { return run.count(name) > 0; };
  if (given("--task")) c.task_id = f.task;
  if (given("--data-dir")) c.data_dir = f.data_dir;
  if (given("--tasks-dir")) c.tasks_dir = f.tasks_dir;
  if (given("--codebook-dir")) c.codebook_dir = f.codebook_dir;
  if (given("--model")) c.model_id = f.model;
  if (given("--endpoint")) {
    c.endpoint.base_url = f.endpoint;
    c.source = riskbench::ModelSource::endpoint;
  }
  if (given("--api-key-env")) c.endpoint.api_key_env = f.api_key_env;
  if (given("--max-in-flight")) c.endpoint.max_in_flight = f.max_in_flight;
  if (given("--max-attempts")) c.endpoint.retry.max_attempts = f.max_attempts;
  if (given("--timeout")) c.endpoint.timeout_seconds = f.timeout;
  if (given("--mock")) {
    c.mock_fixture = f.mock;
    c.source = riskbench::ModelSource::mock;
  }
  if (given("--oracle")) {
    c.oracle_spec = f.oracle;
    c.source = riskbench::ModelSource::oracle;
  }
  if (given("--oracle-leakage")) c.oracle_leakage = f.oracle_leakage;
  if (given("--top-logprobs")) c.top_k_logprobs = f.top_logprobs;
  if (given("--scheme")) c.scheme = riskbench::parse_scheme(f.scheme);
  if (given("--bins")) c.bins = f.bins;
  if (given("--tau")) {
    c.tau = f.tau;
    c.fit_threshold = false;
  }
  if (given("--fit-threshold")) c.fit_threshold = true;
  if (given("--subsample")) c.subsample = f.subsample;
  if (given("--seed")) c.seed = f.seed;
  if (given("--split")) c.split = parse_split(f.split, c.split);
  if (given("--split-assignment") && c.split) {
    if (f.split_assignment == "keyed") {
      c.split->assignment = riskbench::SplitAssignment::keyed;
    } else if (f.split_assignment == "ranked") {
      c.split->assignment = riskbench::SplitAssignment::ranked;
    } else {
      throw ConfigError("--split-assignment must be ranked or keyed");
    }
  }
  if (given("--group-col")) c.group_column = f.group_col == "none" ? std::string() : f.group_col;
  if (given("--top-k-groups")) c.top_k_groups = f.top_k_groups;
  if (given("--features")) c.feature_subset = split_list(f.features);
  if (given("--results-dir")) c.results_dir = f.results_dir;
  if (given("--cache-dir")) c.cache_dir = f.cache_dir;
  return c;
}

int do_run(const RunFlags& flags, CLI::App& run) {
  const BenchmarkConfig config = build_config(flags, run);
  const auto result = riskbench::run_benchmark(config);
  const auto& ev = result.evaluation;
  if (ev.metrics) {
    const auto& m = *ev.metrics;
    std::cout << "task " << config.task_id << ", " << riskbench::to_string(config.scheme) << ", n=" << m.n
              << " (excluded " << ev.excluded << ")\n"
              << "ECE " << m.ece_equal_width << " (quantile " << m.ece_quantile << "), Brier " << m.brier
              << ", AUC " << (m.auc ? std::to_string(*m.auc) : std::string("n/a")) << ", accuracy "
              << m.accuracy << " at tau " << m.tau << "\n"
              << "results in " << config.results_dir.string() << "\n";
  } else {
    std::cout << "no rows could be scored; report written to " << config.results_dir.string() << "\n";
  }
  if (result.excluded_rate > riskbench::kMaxExcludedRate) {
    std::cerr << "error: " << ev.excluded << " rows excluded (" << result.excluded_rate * 100.0
              << "%), above the 10% limit\n";
    return 4;
  }
  return 0;
}

int do_evaluate(const EvaluateFlags& f) {
  const auto records = riskbench::read_records_csv(f.records);
  const auto ev = riskbench::evaluate_records(records, {f.bins, f.fit_threshold, f.tau, !f.no_groups});
  const std::filesystem::path dir = f.results_dir.empty()
                                        ? std::filesystem::path(f.records).parent_path()
                                        : std::filesystem::path(f.results_dir);
  std::filesystem::create_directories(dir);
  riskbench::write_metric_files(dir, ev);
  std::cout << riskbench::to_json(ev).at("metrics").dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-score calibration benchmark for language models on survey prediction tasks"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  RunFlags rf;
  auto* run = app.add_subcommand("run", "Score a task with a model and write reports");
  run->add_option("--config", rf.config_file, "JSON config file; flags override its fields");
  run->add_option("--task", rf.task, "Task id (bundled) or path to a task JSON");
  run->add_option("--data-dir", rf.data_dir, "Person CSV file or directory of CSV files");
  run->add_option("--tasks-dir", rf.tasks_dir, "Directory of task definitions");
  run->add_option("--codebook-dir", rf.codebook_dir, "Directory of column codebooks");
  run->add_option("--model", rf.model, "Model id sent to the endpoint");
  auto* endpoint = run->add_option("--endpoint", rf.endpoint, "Base URL of a completions API");
  run->add_option("--api-key-env", rf.api_key_env, "Environment variable holding the API key")
      ->default_str("RISKBENCH_API_KEY");
  run->add_option("--max-in-flight", rf.max_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
  run->add_option("--max-attempts", rf.max_attempts, "Attempts per request")->check(CLI::PositiveNumber);
  run->add_option("--timeout", rf.timeout, "Request timeout in seconds");
  run->add_option("--scheme", rf.scheme, "Prompting scheme")->check(CLI::IsMember({"mc", "multiple-choice", "numeric"}));
  run->add_option("--bins", rf.bins, "Calibration bins")->check(CLI::PositiveNumber);
  auto* tau = run->add_option("--tau", rf.tau, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  run->add_flag("--fit-threshold", rf.fit_threshold, "Fit the threshold on the validation split")->excludes(tau);
  run->add_option("--subsample", rf.subsample, "Evaluate n sampled rows")->check(CLI::PositiveNumber);
  run->add_option("--seed", rf.seed, "Seed for splits and subsampling");
  run->add_option("--split", rf.split, "train,validation,test fractions, or none");
  run->add_option("--split-assignment", rf.split_assignment, "ranked (exact sizes) or keyed (per-row)");
  run->add_option("--group-col", rf.group_col, "Grouping column, or none");
  run->add_option("--top-k-groups", rf.top_k_groups, "Most frequent groups kept")->check(CLI::PositiveNumber);
  run->add_option("--features", rf.features, "Comma-separated feature override");
  run->add_option("--results-dir", rf.results_dir, "Output directory");
  run->add_option("--cache-dir", rf.cache_dir, "Response cache directory");
  auto* mock = run->add_option("--mock", rf.mock, "Scripted response fixture instead of an endpoint");
  auto* oracle = run->add_option("--oracle", rf.oracle, "Synthetic spec answered by an oracle model");
  run->add_option("--oracle-leakage", rf.oracle_leakage, "Oracle mass on answer tokens");
  run->add_option("--top-logprobs", rf.top_logprobs, "Top-k token probabilities requested");
  mock->excludes(oracle);
  endpoint->excludes(mock)->excludes(oracle);

  EvaluateFlags ef;
  auto* evaluate = app.add_subcommand("evaluate", "Recompute metric files from scored_records.csv");
  evaluate->add_option("--records", ef.records, "scored_records.csv")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--results-dir", ef.results_dir, "Output directory (default: next to the records)");
  evaluate->add_option("--bins", ef.bins, "Calibration bins")->check(CLI::PositiveNumber);
  auto* etau = evaluate->add_option("--tau", ef.tau, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  evaluate->add_flag("--fit-threshold", ef.fit_threshold, "Fit the threshold on validation records")->excludes(etau);
  evaluate->add_flag("--no-groups", ef.no_groups, "Skip group metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*run) return do_run(rf, *run);
    return do_evaluate(ef);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return riskbench::exit_code_for(e);
  }
}
