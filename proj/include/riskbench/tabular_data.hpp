#pragma once

// Person-level survey tables: typed columns, population filters, target
// binarization and seeded row partitioning.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace riskbench {

using RowId = std::uint64_t;

/// Explicit marker for a missing cell.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double value) noexcept { return std::isnan(value); }

enum class ColumnKind { integer, decimal, categorical };

std::string_view to_string(ColumnKind kind);
ColumnKind parse_column_kind(std::string_view text);

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::integer;
  /// Raw values read as missing in addition to empty cells.
  std::vector<double> missing_codes;
};

/// Throws SchemaError on duplicate names.
void validate_schema(std::span<const ColumnSchema> schema);

enum class Comparison { greater, greater_equal, less, less_equal, equal, not_equal, in_set };

std::string_view to_string(Comparison op);
Comparison parse_comparison(std::string_view text);

/// Single-column row predicate. Missing cells never satisfy a predicate.
struct Predicate {
  std::string column;
  Comparison op = Comparison::equal;
  /// One operand, or the accepted set for `in_set`.
  std::vector<double> operands;

  bool test(double value) const;
  std::string describe() const;
};

struct BinarizationRule {
  enum class Kind { threshold_above, code_in_set };

  Kind kind = Kind::threshold_above;
  std::optional<double> threshold;
  std::optional<std::vector<double>> positive_codes;

  static BinarizationRule above(double threshold);
  static BinarizationRule in_set(std::vector<double> codes);

  /// 1 iff value > threshold, or value is one of the positive codes.
  int apply(double value) const;
  void validate() const;
};

enum class SplitAssignment {
  /// Rows ordered by hash(seed, row_id); partitions take exact rounded sizes.
  ranked,
  /// Each row independently placed by where hash(seed, row_id) falls in [0, 1).
  keyed,
};

struct SplitSpec {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  SplitAssignment assignment = SplitAssignment::ranked;

  void validate() const;
};

enum class Partition { train, validation, test };
std::string_view to_string(Partition part);

namespace lineage {
struct Load {
  std::vector<std::filesystem::path> files;
};
struct Filter {
  std::string label;
  std::vector<Predicate> predicates;
};
struct DropMissing {
  std::string column;
};
struct Split {
  SplitSpec spec;
  Partition part;
};
struct Subsample {
  std::size_t n;
  std::uint64_t seed;
};
struct PermuteColumn {
  std::string column;
  std::uint64_t seed;
};
struct Generated {
  std::string description;
};
using Step = std::variant<Load, Filter, DropMissing, Split, Subsample, PermuteColumn, Generated>;
std::string describe(const Step& step);
}  // namespace lineage

using Lineage = std::vector<lineage::Step>;

/// Immutable columnar table. All transformations return new datasets and
/// append to the lineage.
class TabularDataset {
 public:
  TabularDataset() = default;
  TabularDataset(std::vector<ColumnSchema> schema, std::vector<std::vector<double>> columns,
                 std::vector<RowId> row_ids, Lineage lineage);

  std::size_t num_rows() const noexcept { return row_ids_.size(); }
  std::size_t num_columns() const noexcept { return schema_.size(); }
  const std::vector<ColumnSchema>& schema() const noexcept { return schema_; }
  const Lineage& lineage() const noexcept { return lineage_; }
  std::span<const RowId> row_ids() const noexcept { return row_ids_; }

  bool has_column(std::string_view name) const;
  /// Throws SchemaError naming the column when absent.
  std::size_t column_index(std::string_view name) const;
  const ColumnSchema& column_schema(std::string_view name) const;
  std::span<const double> column(std::string_view name) const;
  std::span<const double> column(std::size_t index) const { return columns_.at(index); }
  double value(std::size_t row, std::size_t column) const { return columns_[column][row]; }

  /// Rows at `indices`, in that order.
  TabularDataset select_rows(std::span<const std::size_t> indices, lineage::Step step) const;
  /// Same rows with one column shuffled across rows.
  TabularDataset with_column_permuted(std::string_view name, std::uint64_t seed) const;
  TabularDataset with_lineage_step(lineage::Step step) const;

 private:
  std::vector<ColumnSchema> schema_;
  std::vector<std::vector<double>> columns_;
  std::vector<RowId> row_ids_;
  Lineage lineage_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Loads a comma-separated person file, or every *.csv file in a directory
/// (sorted by name, concatenated). Only schema columns are kept; row ids are
/// sequential record numbers across the concatenation.
TabularDataset load_person_csv(const std::filesystem::path& path,
                               std::span<const ColumnSchema> schema);

/// Keeps rows satisfying every predicate.
TabularDataset filter_rows(const TabularDataset& dataset, std::span<const Predicate> predicates,
                           std::string label);

/// Drops rows whose `column` is missing; returns the number dropped.
TabularDataset drop_missing(const TabularDataset& dataset, std::string_view column,
                            std::size_t* dropped = nullptr);

struct DatasetPartitions {
  TabularDataset train;
  TabularDataset validation;
  TabularDataset test;
};

DatasetPartitions split_dataset(const TabularDataset& dataset, const SplitSpec& spec);
TabularDataset partition(const TabularDataset& dataset, const SplitSpec& spec, Partition part);

/// Uniform sample of n rows without replacement; throws SizeError if n > rows.
TabularDataset subsample(const TabularDataset& dataset, std::size_t n, std::uint64_t seed);

struct GroupAssignment {
  /// Retained category codes, most frequent first.
  std::vector<double> categories;
  /// Index into `categories` per row, or -1 for "other".
  std::vector<int> group_of_row;
};

/// Top-k most frequent codes of a categorical column (ties favour the smaller
/// code). Missing values fall into "other".
GroupAssignment group_values(const TabularDataset& dataset, std::string_view column,
                             std::size_t top_k);

/// Rebuilds a dataset from its lineage, starting from the raw files.
TabularDataset replay_lineage(const Lineage& lineage, std::span<const ColumnSchema> schema);

}  // namespace riskbench
