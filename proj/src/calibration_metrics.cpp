#include "riskbench/calibration_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

void check_pairs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw SizeError("scores and labels differ in length");
  if (scores.empty()) throw UndefinedMetricError("metric needs at least one record");
}

std::size_t equal_width_bin(double r, std::size_t bins) {
  const double m_real = std::floor(r * static_cast<double>(bins));
  auto m = static_cast<std::size_t>(std::clamp(m_real, 0.0, static_cast<double>(bins - 1)));
  const auto edge = [bins](std::size_t k) { return static_cast<double>(k) / static_cast<double>(bins); };
  while (m > 0 && r < edge(m)) --m;
  while (m + 1 < bins && r >= edge(m + 1)) ++m;
  return m;
}

std::string cell(const std::optional<double>& value) {
  return value ? csv::format_double(*value) : std::string();
}

std::vector<std::string> metric_columns() {
  return {"n", "excluded", "bins", "tau", "ece_equal_width", "ece_quantile", "brier", "auc",
          "accuracy", "confidence_bias", "sce", "score_mean", "score_std"};
}

std::vector<std::string> metric_cells(const MetricReport& r) {
  return {std::to_string(r.n),
          std::to_string(r.excluded_count),
          std::to_string(r.bins),
          csv::format_double(r.tau),
          csv::format_double(r.ece_equal_width),
          csv::format_double(r.ece_quantile),
          csv::format_double(r.brier),
          cell(r.auc),
          csv::format_double(r.accuracy),
          csv::format_double(r.confidence_bias),
          csv::format_double(r.sce),
          csv::format_double(r.score_mean),
          csv::format_double(r.score_std)};
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string_view to_string(BinningKind kind) {
  return kind == BinningKind::equal_width ? "equal_width" : "quantile";
}

void BinningSpec::validate() const {
  if (bins < 1) throw ConfigError("bin count must be at least 1");
}

std::vector<std::size_t> bin_assign(std::span<const double> scores, const BinningSpec& spec) {
  spec.validate();
  for (double r : scores) {
    if (!(r >= 0.0 && r <= 1.0)) throw UndefinedMetricError("score outside [0, 1]");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> out(n);
  if (spec.kind == BinningKind::equal_width) {
    for (std::size_t i = 0; i < n; ++i) out[i] = equal_width_bin(scores[i], spec.bins);
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t run_start = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && scores[order[k]] != scores[order[k - 1]]) run_start = k;
    out[order[k]] = run_start * spec.bins / n;
  }
  return out;
}

double ece(std::span<const double> scores, std::span<const int> labels, const BinningSpec& spec) {
  check_pairs(scores, labels);
  const auto bin = bin_assign(scores, spec);
  std::vector<double> score_sum(spec.bins, 0.0);
  std::vector<double> label_sum(spec.bins, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    score_sum[bin[i]] += scores[i];
    label_sum[bin[i]] += labels[i];
  }
  double total = 0.0;
  for (std::size_t m = 0; m < spec.bins; ++m) total += std::abs(label_sum[m] - score_sum[m]);
  return total / static_cast<double>(scores.size());
}

double brier(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] - labels[i];
    total += d * d;
  }
  return total / static_cast<double>(scores.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of positives, kept integral: a tie run over 1-based
  // ranks [lo, hi] has midrank (lo + hi) / 2.
  long long twice_rank_sum = 0;
  long long positives = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end + 1 < n && scores[order[end + 1]] == scores[order[start]]) ++end;
    const long long twice_midrank = static_cast<long long>(start + 1) + static_cast<long long>(end + 1);
    for (std::size_t k = start; k <= end; ++k) {
      if (labels[order[k]] == 1) {
        twice_rank_sum += twice_midrank;
        ++positives;
      }
    }
    start = end + 1;
  }
  const long long negatives = static_cast<long long>(n) - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetricError("AUC needs both classes");
  const long long twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double accuracy(std::span<const double> scores, std::span<const int> labels,
                const ThresholdPolicy& policy) {
  check_pairs(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += threshold_predict(scores[i], policy) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double confidence_bias(std::span<const double> scores, std::span<const int> labels,
                       const BinningSpec& spec, const ThresholdPolicy& policy) {
  check_pairs(scores, labels);
  const auto bin = bin_assign(scores, spec);
  std::vector<double> confidence(spec.bins, 0.0);
  std::vector<double> correct(spec.bins, 0.0);
  std::vector<std::size_t> count(spec.bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    confidence[bin[i]] += std::max(scores[i], 1.0 - scores[i]);
    correct[bin[i]] += threshold_predict(scores[i], policy) == labels[i] ? 1.0 : 0.0;
    ++count[bin[i]];
  }
  const double n = static_cast<double>(scores.size());
  double total = 0.0;
  for (std::size_t m = 0; m < spec.bins; ++m) {
    if (count[m] == 0) continue;
    const double size = static_cast<double>(count[m]);
    total += (size / n) * (confidence[m] / size - correct[m] / size);
  }
  return total;
}

double signed_calibration_error(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) total += scores[i] - labels[i];
  return total / static_cast<double>(scores.size());
}

CalibrationCurve calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                   const BinningSpec& spec) {
  check_pairs(scores, labels);
  const auto bin = bin_assign(scores, spec);
  std::vector<double> score_sum(spec.bins, 0.0);
  std::vector<double> label_sum(spec.bins, 0.0);
  std::vector<std::size_t> count(spec.bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    score_sum[bin[i]] += scores[i];
    label_sum[bin[i]] += labels[i];
    ++count[bin[i]];
  }
  CalibrationCurve curve{spec, {}};
  for (std::size_t m = 0; m < spec.bins; ++m) {
    if (count[m] == 0) continue;
    const double size = static_cast<double>(count[m]);
    const double rate = label_sum[m] / size;
    curve.points.push_back(
        {m, count[m], score_sum[m] / size, rate, 1.96 * std::sqrt(rate * (1.0 - rate) / size)});
  }
  return curve;
}

ScoreDistribution score_distribution_stats(std::span<const double> scores, std::size_t cells) {
  if (scores.empty()) throw UndefinedMetricError("score distribution needs at least one score");
  if (cells < 1) throw ConfigError("histogram needs at least one cell");
  ScoreDistribution out;
  // Welford's update keeps the spread of identical scores at exactly zero.
  double mean = 0.0;
  double squares = 0.0;
  std::size_t k = 0;
  for (double r : scores) {
    ++k;
    const double delta = r - mean;
    mean += delta / static_cast<double>(k);
    squares += delta * (r - mean);
  }
  out.mean = mean;
  out.stddev = std::sqrt(squares / static_cast<double>(scores.size()));
  out.histogram.assign(cells, 0);
  for (std::size_t b : bin_assign(scores, {cells, BinningKind::equal_width})) ++out.histogram[b];
  return out;
}

MetricReport metric_report(std::span<const double> scores, std::span<const int> labels,
                           std::size_t bins, const ThresholdPolicy& policy,
                           std::size_t excluded_count) {
  check_pairs(scores, labels);
  const BinningSpec equal{bins, BinningKind::equal_width};
  const BinningSpec quantile{bins, BinningKind::quantile};
  MetricReport r;
  r.n = scores.size();
  r.excluded_count = excluded_count;
  r.bins = bins;
  r.tau = policy.tau;
  r.ece_equal_width = ece(scores, labels, equal);
  r.ece_quantile = ece(scores, labels, quantile);
  r.brier = brier(scores, labels);
  const bool both_classes = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; }) &&
                            std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
  if (both_classes) r.auc = auc(scores, labels);
  r.accuracy = accuracy(scores, labels, policy);
  r.confidence_bias = confidence_bias(scores, labels, equal, policy);
  r.sce = signed_calibration_error(scores, labels);
  const auto dist = score_distribution_stats(scores);
  r.score_mean = dist.mean;
  r.score_std = dist.stddev;
  return r;
}

GroupReport group_metrics(std::span<const double> scores, std::span<const int> labels,
                          std::span<const std::string> group_of_record,
                          std::span<const std::string> order, std::size_t bins,
                          const ThresholdPolicy& policy) {
  check_pairs(scores, labels);
  if (group_of_record.size() != scores.size()) throw SizeError("group list differs in length");

  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < scores.size(); ++i) members[group_of_record[i]].push_back(i);

  std::vector<std::string> sequence(order.begin(), order.end());
  const std::set<std::string> listed(order.begin(), order.end());
  for (const auto& [name, rows] : members) {
    if (listed.count(name) == 0) sequence.push_back(name);
  }

  GroupReport report;
  for (const auto& name : sequence) {
    const auto it = members.find(name);
    if (it == members.end()) {
      report.notes.push_back("group " + name + " has no scored records and is omitted");
      continue;
    }
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i : it->second) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
    GroupEntry entry{name, metric_report(s, y, bins, policy),
                     calibration_curve(s, y, {bins, BinningKind::quantile})};
    if (!entry.metrics.auc) report.notes.push_back("group " + name + " has one class; AUC omitted");
    report.groups.push_back(std::move(entry));
  }
  for (const auto& a : report.groups) {
    for (const auto& b : report.groups) {
      if (a.group == b.group) continue;
      report.sce_differences.push_back({a.group, b.group, a.metrics.sce - b.metrics.sce});
    }
  }
  return report;
}

PermutationImportance permutation_feature_importance(const DatasetScorer& score_fn,
                                                     const TabularDataset& dataset,
                                                     std::span<const int> labels,
                                                     std::string_view feature, std::uint64_t seed) {
  dataset.column_index(feature);
  PermutationImportance out;
  out.auc_original = auc(score_fn(dataset), labels);
  out.auc_permuted = auc(score_fn(dataset.with_column_permuted(feature, seed)), labels);
  out.delta = out.auc_original - out.auc_permuted;
  return out;
}

json to_json(const MetricReport& r) {
  return {{"n", r.n},
          {"excluded_count", r.excluded_count},
          {"bins", r.bins},
          {"tau", r.tau},
          {"ece_equal_width", r.ece_equal_width},
          {"ece_quantile", r.ece_quantile},
          {"brier", r.brier},
          {"auc", r.auc ? json(*r.auc) : json(nullptr)},
          {"accuracy", r.accuracy},
          {"confidence_bias", r.confidence_bias},
          {"sce", r.sce},
          {"score_mean", r.score_mean},
          {"score_std", r.score_std}};
}

json to_json(const CalibrationCurve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) {
    points.push_back({{"bin", p.bin},
                      {"count", p.count},
                      {"mean_score", p.mean_score},
                      {"positive_rate", p.positive_rate},
                      {"ci_half_width", p.ci_half_width}});
  }
  return {{"binning", to_string(curve.spec.kind)}, {"bins", curve.spec.bins}, {"points", points}};
}

json to_json(const ScoreDistribution& dist) {
  return {{"mean", dist.mean}, {"stddev", dist.stddev}, {"histogram", dist.histogram}};
}

json to_json(const GroupReport& report) {
  json groups = json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"group", g.group}, {"metrics", to_json(g.metrics)}, {"curve", to_json(g.curve)}});
  }
  json differences = json::array();
  for (const auto& d : report.sce_differences) {
    differences.push_back({{"a", d.a}, {"b", d.b}, {"delta_sce", d.delta}});
  }
  return {{"groups", groups}, {"sce_differences", differences}, {"notes", report.notes}};
}

void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report) {
  auto out = open_output(path);
  auto header = metric_columns();
  header.insert(header.begin(), "scope");
  out << csv::join(header) << '\n';
  auto cells = metric_cells(report);
  cells.insert(cells.begin(), "overall");
  out << csv::join(cells) << '\n';
}

void write_curve_csv(const std::filesystem::path& path, const CalibrationCurve& curve) {
  auto out = open_output(path);
  out << "bin,count,mean_score,positive_rate,ci_half_width,ci_lower,ci_upper\n";
  for (const auto& p : curve.points) {
    out << csv::join({std::to_string(p.bin), std::to_string(p.count), csv::format_double(p.mean_score),
                      csv::format_double(p.positive_rate), csv::format_double(p.ci_half_width),
                      csv::format_double(p.positive_rate - p.ci_half_width),
                      csv::format_double(p.positive_rate + p.ci_half_width)})
        << '\n';
  }
}

void write_histogram_csv(const std::filesystem::path& path, const ScoreDistribution& dist) {
  auto out = open_output(path);
  out << "cell,lower,upper,count\n";
  const double cells = static_cast<double>(dist.histogram.size());
  for (std::size_t c = 0; c < dist.histogram.size(); ++c) {
    out << csv::join({std::to_string(c), csv::format_double(static_cast<double>(c) / cells),
                      csv::format_double(static_cast<double>(c + 1) / cells),
                      std::to_string(dist.histogram[c])})
        << '\n';
  }
}

void write_group_csv(const std::filesystem::path& path, const GroupReport& report) {
  auto out = open_output(path);
  auto header = metric_columns();
  header.insert(header.begin(), "group");
  out << csv::join(header) << '\n';
  for (const auto& g : report.groups) {
    auto cells = metric_cells(g.metrics);
    cells.insert(cells.begin(), g.group);
    out << csv::join(cells) << '\n';
  }
}

}  // namespace riskbench
