#include "riskbench/synth_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"
#include "riskbench/random.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

constexpr std::uint64_t kFeatureStreamBase = 0x4645'4154'0000ULL;
constexpr std::uint64_t kLabelStream = 0x4c41'4245'4cULL;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Distribution of sum_j w_j * h_j over independent hidden features, with
/// equal partial sums merged.
std::vector<std::pair<double, double>> hidden_sum_distribution(
    const SyntheticSpec& spec, const LogisticRule& rule, const std::set<std::string>& visible) {
  std::vector<std::pair<double, double>> dist = {{0.0, 1.0}};
  for (const auto& f : spec.features) {
    const auto it = rule.coefficients.find(f.name);
    if (visible.count(f.name) > 0 || it == rule.coefficients.end() || it->second == 0.0) continue;
    std::vector<std::pair<double, double>> next;
    for (const auto& [z, q] : dist) {
      for (std::size_t i = 0; i < f.values.size(); ++i) {
        next.emplace_back(z + it->second * f.values[i], q * f.probability_of_index(i));
      }
    }
    std::sort(next.begin(), next.end());
    dist.clear();
    for (const auto& entry : next) {
      if (!dist.empty() && dist.back().first == entry.first) {
        dist.back().second += entry.second;
      } else {
        dist.push_back(entry);
      }
    }
  }
  return dist;
}

std::size_t draw_index(const SyntheticFeature& f, double u) {
  double cumulative = 0.0;
  for (std::size_t i = 0; i + 1 < f.values.size(); ++i) {
    cumulative += f.probability_of_index(i);
    if (u < cumulative) return i;
  }
  return f.values.size() - 1;
}

}  // namespace

double SyntheticFeature::probability_of_index(std::size_t i) const {
  return probs.empty() ? 1.0 / static_cast<double>(values.size()) : probs.at(i);
}

const SyntheticFeature& SyntheticSpec::feature(std::string_view name) const {
  for (const auto& f : features) {
    if (f.name == name) return f;
  }
  throw SpecError("synthetic spec has no feature " + std::string(name));
}

void SyntheticSpec::validate() const {
  if (n < 1) throw SpecError("synthetic population needs n >= 1");
  if (features.empty()) throw SpecError("synthetic spec has no features");
  std::set<std::string> names;
  for (const auto& f : features) {
    if (f.name.empty() || !names.insert(f.name).second) {
      throw SpecError("feature names must be non-empty and unique: " + f.name);
    }
    if (f.values.empty()) throw SpecError("feature " + f.name + " has no values");
    if (!f.probs.empty()) {
      if (f.probs.size() != f.values.size()) throw SpecError("feature " + f.name + ": probs/values size mismatch");
      double total = 0.0;
      for (double p : f.probs) {
        if (!(p >= 0.0)) throw SpecError("feature " + f.name + " has a negative probability");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw SpecError("feature " + f.name + " probabilities do not sum to 1");
    }
  }
  if (names.count(label_column) > 0) throw SpecError("label column collides with a feature");

  if (const auto* logistic = std::get_if<LogisticRule>(&rule)) {
    if (!std::isfinite(logistic->intercept)) throw SpecError("logistic intercept is not finite");
    for (const auto& [name, w] : logistic->coefficients) {
      feature(name);
      if (!std::isfinite(w)) throw SpecError("coefficient for " + name + " is not finite");
    }
  } else {
    const auto& table = std::get<TableRule>(rule);
    const auto& f = feature(table.column);
    for (double v : f.values) {
      const auto it = table.table.find(v);
      if (it == table.table.end()) {
        throw SpecError("probability table has no entry for " + table.column + " = " + csv::format_double(v));
      }
      if (!(it->second >= 0.0 && it->second <= 1.0)) {
        throw SpecError("probability table entry outside [0, 1] for " + table.column);
      }
    }
  }
}

SyntheticSpec synthetic_spec_from_json(const json& doc) {
  SyntheticSpec spec;
  try {
    spec.n = doc.at("n").get<std::size_t>();
    spec.seed = doc.value("seed", std::uint64_t{0});
    spec.label_column = doc.value("label_column", spec.label_column);
    for (const auto& f : doc.at("features")) {
      SyntheticFeature feature;
      feature.name = f.at("name").get<std::string>();
      feature.kind = parse_column_kind(f.value("kind", std::string("categorical")));
      feature.values = f.at("values").get<std::vector<double>>();
      if (f.contains("probs")) feature.probs = f.at("probs").get<std::vector<double>>();
      spec.features.push_back(std::move(feature));
    }
    const json& rule = doc.at("rule");
    const auto kind = rule.at("kind").get<std::string>();
    if (kind == "logistic") {
      LogisticRule logistic;
      logistic.intercept = rule.value("intercept", 0.0);
      if (rule.contains("coefficients")) {
        logistic.coefficients = rule.at("coefficients").get<std::map<std::string, double>>();
      }
      spec.rule = std::move(logistic);
    } else if (kind == "table") {
      TableRule table;
      table.column = rule.at("column").get<std::string>();
      for (const auto& [key, p] : rule.at("table").items()) {
        const auto value = csv::parse_double(key);
        if (!value) throw SpecError("probability table key is not a number: " + key);
        table.table[*value] = p.get<double>();
      }
      spec.rule = std::move(table);
    } else {
      throw SpecError("unknown probability rule kind: " + kind);
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
  return synthetic_spec_from_json(doc);
}

SyntheticPopulation generate_population(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<ColumnSchema> schema;
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < spec.features.size(); ++j) {
    const auto& f = spec.features[j];
    schema.push_back({f.name, f.kind, {}});
    std::vector<double> column(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
      column[i] = f.values[draw_index(f, rng::uniform(spec.seed, kFeatureStreamBase + j, i))];
    }
    columns.push_back(std::move(column));
  }
  std::vector<RowId> ids(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) ids[i] = i;

  std::vector<std::string> all;
  for (const auto& f : spec.features) all.push_back(f.name);
  TabularDataset features(schema, columns, ids, {lineage::Generated{"synthetic features"}});
  const auto p = marginal_probabilities(spec, features, all);

  SyntheticPopulation out;
  std::vector<double> label_column(spec.n);
  out.truth.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int y = rng::uniform(spec.seed, kLabelStream, i) < p[i] ? 1 : 0;
    label_column[i] = y;
    out.truth.push_back({ids[i], p[i], y});
  }
  schema.push_back({spec.label_column, ColumnKind::categorical, {}});
  columns.push_back(std::move(label_column));
  out.dataset = TabularDataset(std::move(schema), std::move(columns), std::move(ids),
                               {lineage::Generated{"synthetic population n=" + std::to_string(spec.n) +
                                                   " seed=" + std::to_string(spec.seed)}});
  return out;
}

std::vector<double> marginal_probabilities(const SyntheticSpec& spec, const TabularDataset& dataset,
                                           std::span<const std::string> visible) {
  const std::set<std::string> shown(visible.begin(), visible.end());
  for (const auto& name : shown) spec.feature(name);
  std::vector<double> out(dataset.num_rows());

  if (const auto* table = std::get_if<TableRule>(&spec.rule)) {
    if (shown.count(table->column) > 0) {
      const auto column = dataset.column(table->column);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = table->table.at(column[i]);
    } else {
      const auto& f = spec.feature(table->column);
      double mean = 0.0;
      for (std::size_t k = 0; k < f.values.size(); ++k) mean += f.probability_of_index(k) * table->table.at(f.values[k]);
      std::fill(out.begin(), out.end(), mean);
    }
    return out;
  }

  const auto& logistic = std::get<LogisticRule>(spec.rule);
  std::vector<std::pair<std::span<const double>, double>> terms;
  for (const auto& f : spec.features) {
    const auto it = logistic.coefficients.find(f.name);
    if (shown.count(f.name) == 0 || it == logistic.coefficients.end()) continue;
    terms.emplace_back(dataset.column(f.name), it->second);
  }
  const auto hidden = hidden_sum_distribution(spec, logistic, shown);
  std::map<double, double> memo;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double a = logistic.intercept;
    for (const auto& [column, w] : terms) a += w * column[i];
    auto it = memo.find(a);
    if (it == memo.end()) {
      double p = 0.0;
      for (const auto& [z, q] : hidden) p += q * sigmoid(a + z);
      it = memo.emplace(a, std::clamp(p, 0.0, 1.0)).first;
    }
    out[i] = it->second;
  }
  return out;
}

void write_ground_truth_csv(const std::filesystem::path& path,
                            std::span<const GroundTruthRecord> truth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row_id,p,y\n";
  for (const auto& r : truth) {
    out << r.row_id << ',' << csv::format_double(r.p) << ',' << r.y << '\n';
  }
}

TaskDefinition make_oracle_task(const TaskDefinition& base, const SyntheticSpec& spec) {
  TaskDefinition task = base;
  task.task_id = base.task_id + "-synthetic";
  task.feature_columns.clear();
  for (const auto& f : spec.features) task.feature_columns.push_back(f.name);
  task.target_column = spec.label_column;
  task.target_rule = BinarizationRule::in_set({1.0});
  task.population_filter.clear();
  if (task.group_column &&
      std::find(task.feature_columns.begin(), task.feature_columns.end(), *task.group_column) ==
          task.feature_columns.end()) {
    task.group_column.reset();
  }
  task.validate();
  return task;
}

OracleRunResult end_to_end_oracle_run(const SyntheticSpec& spec, const TaskDefinition& base,
                                      const CodebookConfig& codebook,
                                      const OracleRunOptions& options) {
  const SyntheticPopulation population = generate_population(spec);
  TaskDefinition task = make_oracle_task(base, spec);
  if (!options.visible_features.empty()) task = task.with_features(options.visible_features);
  codebook.require(task.feature_columns);

  OracleRunResult result;
  result.oracle_p = marginal_probabilities(spec, population.dataset, task.feature_columns);
  const auto& p = result.oracle_p;
  OracleModel oracle([&p](RowId id) { return p.at(id); }, options.leakage, task.choice_texts.positive);

  ScoringOptions scoring;
  scoring.model_id = "oracle";
  scoring.scheme = options.scheme;
  scoring.max_in_flight = options.max_in_flight;
  const auto rows = score_rows(population.dataset, task, codebook, oracle, scoring);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].result) {
      ++result.excluded;
      continue;
    }
    result.scores.push_back(rows[i].result->score);
    result.labels.push_back(population.truth[i].y);
  }
  result.report = metric_report(result.scores, result.labels, options.bins, ThresholdPolicy{},
                                result.excluded);
  return result;
}

}  // namespace riskbench
