#include "riskbench/tabular_data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"
#include "riskbench/random.hpp"

namespace riskbench {
namespace {

// Independent random streams per operation so a split and a subsample with
// the same seed do not select correlated rows.
constexpr std::uint64_t kSplitStream = 0x5350'4c49'54ULL;
constexpr std::uint64_t kSubsampleStream = 0x5355'4253ULL;
constexpr std::uint64_t kPermuteStream = 0x5045'524dULL;

std::string format_operand(double value) { return csv::format_double(value); }

bool contains(const std::vector<double>& values, double v) {
  return std::find(values.begin(), values.end(), v) != values.end();
}

std::vector<std::filesystem::path> resolve_inputs(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("input not found: " + path.string());
  if (!fs::is_directory(path)) return {path};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .csv files in " + path.string());
  return files;
}

TabularDataset load_files(const std::vector<std::filesystem::path>& files,
                          std::span<const ColumnSchema> schema) {
  validate_schema(schema);
  std::vector<std::vector<double>> columns(schema.size());
  std::vector<RowId> row_ids;
  std::vector<std::string> fields;
  RowId next_id = 0;

  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    if (!csv::read_record(in, fields)) throw SchemaError("empty file (no header): " + file.string());
    if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);

    std::vector<std::size_t> source(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto it = std::find(fields.begin(), fields.end(), schema[c].name);
      if (it == fields.end()) {
        throw SchemaError("missing required column \"" + schema[c].name + "\" in " + file.string());
      }
      source[c] = static_cast<std::size_t>(it - fields.begin());
    }
    const std::size_t width = fields.size();

    std::size_t row = 0;
    while (csv::read_record(in, fields)) {
      if (fields.size() == 1 && fields[0].empty()) continue;
      if (fields.size() != width) {
        throw ParseError(row, "expected " + std::to_string(width) + " fields, found " +
                                  std::to_string(fields.size()) + " (" + file.string() + ")");
      }
      for (std::size_t c = 0; c < schema.size(); ++c) {
        const std::string& cell = fields[source[c]];
        double value = kMissing;
        if (cell.find_first_not_of(" \t") != std::string::npos) {
          const auto parsed = csv::parse_double(cell);
          if (!parsed) {
            throw ParseError(row, "column " + schema[c].name + ": cannot parse \"" + cell + "\" (" +
                                      file.string() + ")");
          }
          value = contains(schema[c].missing_codes, *parsed) ? kMissing : *parsed;
        }
        columns[c].push_back(value);
      }
      row_ids.push_back(next_id++);
      ++row;
    }
  }

  std::vector<ColumnSchema> owned(schema.begin(), schema.end());
  return TabularDataset(std::move(owned), std::move(columns), std::move(row_ids),
                        Lineage{lineage::Load{files}});
}

std::vector<std::size_t> ranked_order(const TabularDataset& dataset, std::uint64_t seed,
                                      std::uint64_t stream) {
  const auto ids = dataset.row_ids();
  std::vector<std::uint64_t> keys(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) keys[i] = rng::hash(seed, stream, ids[i]);
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : ids[a] < ids[b];
  });
  return order;
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::integer: return "integer";
    case ColumnKind::decimal: return "decimal";
    case ColumnKind::categorical: return "categorical";
  }
  return "?";
}

ColumnKind parse_column_kind(std::string_view text) {
  if (text == "integer") return ColumnKind::integer;
  if (text == "decimal") return ColumnKind::decimal;
  if (text == "categorical") return ColumnKind::categorical;
  throw SchemaError("unknown column kind: " + std::string(text));
}

void validate_schema(std::span<const ColumnSchema> schema) {
  std::set<std::string> seen;
  for (const auto& column : schema) {
    if (column.name.empty()) throw SchemaError("column with empty name");
    if (!seen.insert(column.name).second) throw SchemaError("duplicate column " + column.name);
  }
}

std::string_view to_string(Comparison op) {
  switch (op) {
    case Comparison::greater: return ">";
    case Comparison::greater_equal: return ">=";
    case Comparison::less: return "<";
    case Comparison::less_equal: return "<=";
    case Comparison::equal: return "==";
    case Comparison::not_equal: return "!=";
    case Comparison::in_set: return "in";
  }
  return "?";
}

Comparison parse_comparison(std::string_view text) {
  for (auto op : {Comparison::greater, Comparison::greater_equal, Comparison::less,
                  Comparison::less_equal, Comparison::equal, Comparison::not_equal,
                  Comparison::in_set}) {
    if (to_string(op) == text) return op;
  }
  throw SchemaError("unknown comparison operator: " + std::string(text));
}

bool Predicate::test(double value) const {
  if (is_missing(value)) return false;
  if (op == Comparison::in_set) return contains(operands, value);
  if (operands.size() != 1) throw SchemaError("predicate on " + column + " needs one operand");
  const double rhs = operands.front();
  switch (op) {
    case Comparison::greater: return value > rhs;
    case Comparison::greater_equal: return value >= rhs;
    case Comparison::less: return value < rhs;
    case Comparison::less_equal: return value <= rhs;
    case Comparison::equal: return value == rhs;
    case Comparison::not_equal: return value != rhs;
    case Comparison::in_set: break;
  }
  return false;
}

std::string Predicate::describe() const {
  std::string out = column + " " + std::string(to_string(op)) + " ";
  if (op == Comparison::in_set) {
    out += "{";
    for (std::size_t i = 0; i < operands.size(); ++i) {
      if (i > 0) out += ",";
      out += format_operand(operands[i]);
    }
    return out + "}";
  }
  return out + (operands.empty() ? std::string("?") : format_operand(operands.front()));
}

BinarizationRule BinarizationRule::above(double threshold) {
  BinarizationRule rule;
  rule.kind = Kind::threshold_above;
  rule.threshold = threshold;
  return rule;
}

BinarizationRule BinarizationRule::in_set(std::vector<double> codes) {
  BinarizationRule rule;
  rule.kind = Kind::code_in_set;
  rule.positive_codes = std::move(codes);
  return rule;
}

int BinarizationRule::apply(double value) const {
  if (kind == Kind::threshold_above) return value > *threshold ? 1 : 0;
  return contains(*positive_codes, value) ? 1 : 0;
}

void BinarizationRule::validate() const {
  const bool ok = kind == Kind::threshold_above
                      ? threshold.has_value() && !positive_codes.has_value()
                      : positive_codes.has_value() && !threshold.has_value();
  if (!ok) throw SchemaError("binarization rule must set exactly one of threshold/positive_codes");
}

void SplitSpec::validate() const {
  for (double f : {train, validation, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

std::string_view to_string(Partition part) {
  switch (part) {
    case Partition::train: return "train";
    case Partition::validation: return "validation";
    case Partition::test: return "test";
  }
  return "?";
}

namespace lineage {

std::string describe(const Step& step) {
  struct Visitor {
    std::string operator()(const Load& s) const {
      return "load " + std::to_string(s.files.size()) + " file(s)";
    }
    std::string operator()(const Filter& s) const {
      std::string out = "filter " + s.label + ":";
      for (const auto& p : s.predicates) out += " [" + p.describe() + "]";
      return out;
    }
    std::string operator()(const DropMissing& s) const { return "drop-missing " + s.column; }
    std::string operator()(const Split& s) const {
      std::ostringstream out;
      out << "split " << to_string(s.part) << " seed=" << s.spec.seed << " fractions=("
          << s.spec.train << "," << s.spec.validation << "," << s.spec.test << ")"
          << (s.spec.assignment == SplitAssignment::keyed ? " keyed" : " ranked");
      return out.str();
    }
    std::string operator()(const Subsample& s) const {
      return "subsample n=" + std::to_string(s.n) + " seed=" + std::to_string(s.seed);
    }
    std::string operator()(const PermuteColumn& s) const {
      return "permute " + s.column + " seed=" + std::to_string(s.seed);
    }
    std::string operator()(const Generated& s) const { return "generated " + s.description; }
  };
  return std::visit(Visitor{}, step);
}

}  // namespace lineage

TabularDataset::TabularDataset(std::vector<ColumnSchema> schema,
                               std::vector<std::vector<double>> columns, std::vector<RowId> row_ids,
                               Lineage lineage)
    : schema_(std::move(schema)),
      columns_(std::move(columns)),
      row_ids_(std::move(row_ids)),
      lineage_(std::move(lineage)) {
  validate_schema(schema_);
  if (columns_.size() != schema_.size()) throw SchemaError("column count does not match schema");
  for (const auto& column : columns_) {
    if (column.size() != row_ids_.size()) throw SchemaError("ragged column data");
  }
  std::vector<RowId> sorted(row_ids_.begin(), row_ids_.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw SchemaError("row ids are not unique");
  }
  for (std::size_t i = 0; i < schema_.size(); ++i) index_.emplace(schema_[i].name, i);
}

bool TabularDataset::has_column(std::string_view name) const {
  return index_.find(std::string(name)) != index_.end();
}

std::size_t TabularDataset::column_index(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw SchemaError("unknown column \"" + std::string(name) + "\"");
  return it->second;
}

const ColumnSchema& TabularDataset::column_schema(std::string_view name) const {
  return schema_[column_index(name)];
}

std::span<const double> TabularDataset::column(std::string_view name) const {
  return columns_[column_index(name)];
}

TabularDataset TabularDataset::select_rows(std::span<const std::size_t> indices,
                                           lineage::Step step) const {
  std::vector<std::vector<double>> columns(columns_.size());
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    columns[c].reserve(indices.size());
    for (std::size_t i : indices) columns[c].push_back(columns_[c].at(i));
  }
  std::vector<RowId> ids;
  ids.reserve(indices.size());
  for (std::size_t i : indices) ids.push_back(row_ids_.at(i));
  Lineage lineage = lineage_;
  lineage.push_back(std::move(step));
  return TabularDataset(schema_, std::move(columns), std::move(ids), std::move(lineage));
}

TabularDataset TabularDataset::with_column_permuted(std::string_view name,
                                                    std::uint64_t seed) const {
  const std::size_t target = column_index(name);
  auto columns = columns_;
  rng::shuffle(columns[target], seed, kPermuteStream);
  Lineage lineage = lineage_;
  lineage.push_back(lineage::PermuteColumn{std::string(name), seed});
  return TabularDataset(schema_, std::move(columns), row_ids_, std::move(lineage));
}

TabularDataset TabularDataset::with_lineage_step(lineage::Step step) const {
  Lineage lineage = lineage_;
  lineage.push_back(std::move(step));
  return TabularDataset(schema_, columns_, row_ids_, std::move(lineage));
}

TabularDataset load_person_csv(const std::filesystem::path& path,
                               std::span<const ColumnSchema> schema) {
  return load_files(resolve_inputs(path), schema);
}

TabularDataset filter_rows(const TabularDataset& dataset, std::span<const Predicate> predicates,
                           std::string label) {
  std::vector<std::size_t> columns;
  for (const auto& p : predicates) columns.push_back(dataset.column_index(p.column));
  std::vector<std::size_t> keep;
  for (std::size_t row = 0; row < dataset.num_rows(); ++row) {
    bool ok = true;
    for (std::size_t k = 0; k < predicates.size() && ok; ++k) {
      ok = predicates[k].test(dataset.value(row, columns[k]));
    }
    if (ok) keep.push_back(row);
  }
  return dataset.select_rows(
      keep, lineage::Filter{std::move(label), {predicates.begin(), predicates.end()}});
}

TabularDataset drop_missing(const TabularDataset& dataset, std::string_view column,
                            std::size_t* dropped) {
  const auto values = dataset.column(column);
  std::vector<std::size_t> keep;
  for (std::size_t row = 0; row < values.size(); ++row) {
    if (!is_missing(values[row])) keep.push_back(row);
  }
  if (dropped != nullptr) *dropped = values.size() - keep.size();
  return dataset.select_rows(keep, lineage::DropMissing{std::string(column)});
}

TabularDataset partition(const TabularDataset& dataset, const SplitSpec& spec, Partition part) {
  spec.validate();
  const std::size_t n = dataset.num_rows();
  std::vector<Partition> assigned(n, Partition::test);

  if (spec.assignment == SplitAssignment::keyed) {
    const auto ids = dataset.row_ids();
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng::uniform(spec.seed, kSplitStream, ids[i]);
      assigned[i] = u < spec.train                      ? Partition::train
                    : u < spec.train + spec.validation ? Partition::validation
                                                       : Partition::test;
    }
  } else {
    const auto n_train = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n))));
    const auto n_validation = std::min<std::size_t>(
        n - n_train, static_cast<std::size_t>(std::llround(spec.validation * static_cast<double>(n))));
    const auto order = ranked_order(dataset, spec.seed, kSplitStream);
    for (std::size_t rank = 0; rank < n; ++rank) {
      assigned[order[rank]] = rank < n_train                  ? Partition::train
                              : rank < n_train + n_validation ? Partition::validation
                                                              : Partition::test;
    }
  }

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (assigned[i] == part) rows.push_back(i);
  }
  return dataset.select_rows(rows, lineage::Split{spec, part});
}

DatasetPartitions split_dataset(const TabularDataset& dataset, const SplitSpec& spec) {
  return {partition(dataset, spec, Partition::train),
          partition(dataset, spec, Partition::validation),
          partition(dataset, spec, Partition::test)};
}

TabularDataset subsample(const TabularDataset& dataset, std::size_t n, std::uint64_t seed) {
  if (n > dataset.num_rows()) {
    throw SizeError("cannot subsample " + std::to_string(n) + " rows from " +
                    std::to_string(dataset.num_rows()));
  }
  auto order = ranked_order(dataset, seed, kSubsampleStream);
  order.resize(n);
  return dataset.select_rows(order, lineage::Subsample{n, seed});
}

GroupAssignment group_values(const TabularDataset& dataset, std::string_view column,
                             std::size_t top_k) {
  const auto& schema = dataset.column_schema(column);
  if (schema.kind != ColumnKind::categorical) {
    throw TypeError("group column " + schema.name + " is not categorical");
  }
  const auto values = dataset.column(column);
  std::map<double, std::size_t> counts;
  for (double v : values) {
    if (!is_missing(v)) ++counts[v];
  }
  std::vector<std::pair<double, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > top_k) ranked.resize(top_k);

  GroupAssignment out;
  for (const auto& [code, count] : ranked) out.categories.push_back(code);
  out.group_of_row.reserve(values.size());
  for (double v : values) {
    const auto it = std::find(out.categories.begin(), out.categories.end(), v);
    out.group_of_row.push_back(it == out.categories.end()
                                   ? -1
                                   : static_cast<int>(it - out.categories.begin()));
  }
  return out;
}

TabularDataset replay_lineage(const Lineage& lineage, std::span<const ColumnSchema> schema) {
  if (lineage.empty() || !std::holds_alternative<lineage::Load>(lineage.front())) {
    throw SchemaError("lineage does not start from a file load");
  }
  TabularDataset dataset = load_files(std::get<lineage::Load>(lineage.front()).files, schema);
  for (std::size_t i = 1; i < lineage.size(); ++i) {
    const auto& step = lineage[i];
    if (const auto* f = std::get_if<lineage::Filter>(&step)) {
      dataset = filter_rows(dataset, f->predicates, f->label);
    } else if (const auto* d = std::get_if<lineage::DropMissing>(&step)) {
      dataset = drop_missing(dataset, d->column);
    } else if (const auto* s = std::get_if<lineage::Split>(&step)) {
      dataset = partition(dataset, s->spec, s->part);
    } else if (const auto* s = std::get_if<lineage::Subsample>(&step)) {
      dataset = subsample(dataset, s->n, s->seed);
    } else if (const auto* p = std::get_if<lineage::PermuteColumn>(&step)) {
      dataset = dataset.with_column_permuted(p->column, p->seed);
    } else {
      throw SchemaError("lineage step cannot be replayed: " + lineage::describe(step));
    }
  }
  return dataset;
}

}  // namespace riskbench
