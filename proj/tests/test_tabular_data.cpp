#include <doctest.h>

#include <algorithm>
#include <set>

#include "riskbench/error.hpp"
#include "riskbench/tabular_data.hpp"
#include "riskbench/task.hpp"
#include "test_util.hpp"

using namespace riskbench;

namespace {

std::vector<ColumnSchema> schema_of(std::initializer_list<std::pair<const char*, ColumnKind>> cols) {
  std::vector<ColumnSchema> out;
  for (const auto& [name, kind] : cols) out.push_back({name, kind, {}});
  return out;
}

TabularDataset make_dataset(std::vector<ColumnSchema> schema, std::vector<std::vector<double>> columns) {
  std::vector<RowId> ids(columns.empty() ? 0 : columns.front().size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return TabularDataset(std::move(schema), std::move(columns), std::move(ids),
                        Lineage{lineage::Generated{"test"}});
}

TabularDataset numbered(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i);
  return make_dataset(schema_of({{"X", ColumnKind::integer}}), {x});
}

std::vector<RowId> ids_of(const TabularDataset& d) { return {d.row_ids().begin(), d.row_ids().end()}; }

std::set<RowId> id_set(const TabularDataset& d) { return {d.row_ids().begin(), d.row_ids().end()}; }

}  // namespace

TEST_CASE("csv load keeps only the declared columns") {
  testutil::TempDir dir("load");
  testutil::write_file(dir / "people.csv", "AGEP,SEX,EXTRA\n42,2,x\n17,1,y\n");
  const auto schema = schema_of({{"AGEP", ColumnKind::integer}, {"SEX", ColumnKind::categorical}});
  const auto d = load_person_csv(dir / "people.csv", schema);
  CHECK(d.num_rows() == 2);
  CHECK(d.num_columns() == 2);
  CHECK(d.column("AGEP")[0] == 42);
  CHECK(d.column("SEX")[1] == 1);
  CHECK(ids_of(d) == std::vector<RowId>{0, 1});
}

TEST_CASE("empty cells and declared missing codes load as missing") {
  testutil::TempDir dir("missing");
  testutil::write_file(dir / "p.csv", "WKHP,COW\n,1\n40,-1\n");
  std::vector<ColumnSchema> schema = {{"WKHP", ColumnKind::integer, {}},
                                      {"COW", ColumnKind::categorical, {-1}}};
  const auto d = load_person_csv(dir / "p.csv", schema);
  CHECK(is_missing(d.column("WKHP")[0]));
  CHECK(is_missing(d.column("COW")[1]));
  CHECK(d.column("WKHP")[1] == 40);
}

TEST_CASE("missing required column names the column") {
  testutil::TempDir dir("schema");
  testutil::write_file(dir / "p.csv", "AGEP,SEX\n42,2\n");
  const auto schema = schema_of({{"AGEP", ColumnKind::integer}, {"OCCP", ColumnKind::categorical}});
  try {
    load_person_csv(dir / "p.csv", schema);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("OCCP") != std::string::npos);
  }
}

TEST_CASE("unparseable cell reports its row") {
  testutil::TempDir dir("parse");
  testutil::write_file(dir / "p.csv", "AGEP\n42\n17\nabc\n");
  const auto schema = schema_of({{"AGEP", ColumnKind::integer}});
  try {
    load_person_csv(dir / "p.csv", schema);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
  }
}

TEST_CASE("directory input concatenates csv files in name order") {
  testutil::TempDir dir("multi");
  testutil::write_file(dir / "b.csv", "AGEP\n2\n");
  testutil::write_file(dir / "a.csv", "AGEP\n1\n");
  const auto d = load_person_csv(dir.path(), schema_of({{"AGEP", ColumnKind::integer}}));
  REQUIRE(d.num_rows() == 2);
  CHECK(d.column("AGEP")[0] == 1);
  CHECK(d.column("AGEP")[1] == 2);
  CHECK_THROWS_AS(load_person_csv(dir / "nope.csv", schema_of({{"AGEP", ColumnKind::integer}})), IoError);
}

TEST_CASE("population filter boundaries") {
  const auto tasks = testutil::data_dir() / "tasks";
  SUBCASE("income keeps age strictly above 16") {
    const auto task = resolve_task("ACSIncome", tasks);
    const auto d = make_dataset(schema_of({{"AGEP", ColumnKind::integer},
                                           {"PINCP", ColumnKind::decimal},
                                           {"WKHP", ColumnKind::integer}}),
                                {{16, 17, 40}, {60000, 60000, 60000}, {40, 40, 40}});
    const auto out = apply_population_filter(d, task);
    CHECK(ids_of(out) == std::vector<RowId>{1, 2});
  }
  SUBCASE("employment keeps 16 through 90 inclusive") {
    const auto task = resolve_task("ACSEmployment", tasks);
    const auto d = make_dataset(schema_of({{"AGEP", ColumnKind::integer}, {"ESR", ColumnKind::categorical}}),
                                {{15, 16, 90, 91}, {1, 1, 1, 1}});
    const auto out = apply_population_filter(d, task);
    CHECK(ids_of(out) == std::vector<RowId>{1, 2});
  }
  SUBCASE("rows with a missing target are dropped") {
    const auto task = resolve_task("ACSEmployment", tasks);
    const auto d = make_dataset(schema_of({{"AGEP", ColumnKind::integer}, {"ESR", ColumnKind::categorical}}),
                                {{30, 30}, {1, kMissing}});
    CHECK(ids_of(apply_population_filter(d, task)) == std::vector<RowId>{0});
  }
}

TEST_CASE("empty filter keeps every row and still records a step") {
  const auto d = numbered(5);
  const auto out = filter_rows(d, {}, "none");
  CHECK(ids_of(out) == ids_of(d));
  CHECK(out.lineage().size() == d.lineage().size() + 1);
  CHECK(std::holds_alternative<lineage::Filter>(out.lineage().back()));
}

TEST_CASE("target binarization") {
  const auto tasks = testutil::data_dir() / "tasks";
  SUBCASE("income threshold is strict") {
    const auto task = resolve_task("ACSIncome", tasks);
    const auto d = make_dataset(schema_of({{"PINCP", ColumnKind::decimal}}), {{50000, 50001}});
    CHECK(binarize_target(d, task) == std::vector<int>{0, 1});
  }
  SUBCASE("travel time threshold is strict") {
    const auto task = resolve_task("ACSTravelTime", tasks);
    const auto d = make_dataset(schema_of({{"JWMNP", ColumnKind::integer}}), {{20, 21}});
    CHECK(binarize_target(d, task) == std::vector<int>{0, 1});
  }
  SUBCASE("code sets") {
    const auto task = resolve_task("ACSMobility", tasks);
    const auto d = make_dataset(schema_of({{"MIG", ColumnKind::categorical}}), {{1, 2, 3}});
    CHECK(binarize_target(d, task) == std::vector<int>{0, 1, 1});
  }
  SUBCASE("an empty positive set labels everything negative") {
    const auto rule = BinarizationRule::in_set({});
    CHECK(rule.apply(1) == 0);
    CHECK(rule.apply(2) == 0);
  }
}

TEST_CASE("ranked split sizes") {
  const auto d = numbered(10);
  SUBCASE("eighty twenty") {
    const SplitSpec spec{0.8, 0.0, 0.2, 7, SplitAssignment::ranked};
    const auto parts = split_dataset(d, spec);
    CHECK(parts.train.num_rows() == 8);
    CHECK(parts.validation.num_rows() == 0);
    CHECK(parts.test.num_rows() == 2);
    std::set<RowId> all = id_set(parts.train);
    for (RowId id : parts.test.row_ids()) CHECK(all.insert(id).second);
    CHECK(all.size() == 10);
  }
  SUBCASE("everything to train") {
    const auto parts = split_dataset(d, SplitSpec{1.0, 0.0, 0.0, 3, SplitAssignment::ranked});
    CHECK(parts.train.num_rows() == 10);
    CHECK(parts.validation.num_rows() == 0);
    CHECK(parts.test.num_rows() == 0);
  }
  SUBCASE("deterministic and seed dependent") {
    const auto d100 = numbered(100);
    const SplitSpec a{0.5, 0.25, 0.25, 1, SplitAssignment::ranked};
    const SplitSpec b{0.5, 0.25, 0.25, 2, SplitAssignment::ranked};
    CHECK(ids_of(partition(d100, a, Partition::test)) == ids_of(partition(d100, a, Partition::test)));
    CHECK(id_set(partition(d100, a, Partition::test)) != id_set(partition(d100, b, Partition::test)));
  }
  SUBCASE("fractions must sum to one") {
    CHECK_THROWS_AS(partition(d, SplitSpec{0.5, 0.1, 0.1, 0, SplitAssignment::ranked}, Partition::test),
                    ConfigError);
  }
}

TEST_CASE("keyed split commutes with filtering") {
  std::vector<double> x(500), flag(500);
  for (std::size_t i = 0; i < 500; ++i) {
    x[i] = static_cast<double>(i);
    flag[i] = static_cast<double>(i % 3 == 0);
  }
  const auto d = make_dataset(schema_of({{"X", ColumnKind::integer}, {"F", ColumnKind::categorical}}), {x, flag});
  const std::vector<Predicate> keep_flagged = {{"F", Comparison::equal, {1}}};
  const SplitSpec spec{0.6, 0.2, 0.2, 11, SplitAssignment::keyed};
  for (auto part : {Partition::train, Partition::validation, Partition::test}) {
    const auto filter_then_split = partition(filter_rows(d, keep_flagged, "f"), spec, part);
    const auto split_then_filter = filter_rows(partition(d, spec, part), keep_flagged, "f");
    CHECK(id_set(filter_then_split) == id_set(split_then_filter));
  }
}

TEST_CASE("subsample") {
  const auto d = numbered(50);
  CHECK(id_set(subsample(d, 50, 4)) == id_set(d));
  CHECK(subsample(d, 0, 4).num_rows() == 0);
  CHECK(ids_of(subsample(d, 10, 4)) == ids_of(subsample(d, 10, 4)));
  CHECK(id_set(subsample(d, 10, 4)) != id_set(subsample(d, 10, 5)));
  CHECK_THROWS_AS(subsample(d, 51, 4), SizeError);
}

TEST_CASE("group values") {
  const auto d = make_dataset(schema_of({{"G", ColumnKind::categorical}, {"X", ColumnKind::integer}}),
                              {{1, 2, 2, 3, 3, 3, kMissing}, {0, 0, 0, 0, 0, 0, 0}});
  SUBCASE("top k above the distinct count keeps every code") {
    const auto g = group_values(d, "G", 10);
    CHECK(g.categories == std::vector<double>{3, 2, 1});
    CHECK(g.group_of_row == std::vector<int>{2, 1, 1, 0, 0, 0, -1});
  }
  SUBCASE("smaller codes fall into other") {
    const auto g = group_values(d, "G", 1);
    CHECK(g.categories == std::vector<double>{3});
    CHECK(g.group_of_row == std::vector<int>{-1, -1, -1, 0, 0, 0, -1});
  }
  SUBCASE("single category") {
    const auto one = make_dataset(schema_of({{"G", ColumnKind::categorical}}), {{4, 4, 4}});
    const auto g = group_values(one, "G", 5);
    CHECK(g.categories == std::vector<double>{4});
    CHECK(g.group_of_row == std::vector<int>{0, 0, 0});
  }
  CHECK_THROWS_AS(group_values(d, "X", 3), TypeError);
}

TEST_CASE("column permutation keeps the multiset and other columns") {
  const auto d = make_dataset(schema_of({{"A", ColumnKind::integer}, {"B", ColumnKind::integer}}),
                              {{1, 2, 3, 4, 5, 6, 7, 8}, {8, 7, 6, 5, 4, 3, 2, 1}});
  const auto p = d.with_column_permuted("A", 9);
  std::vector<double> a(p.column("A").begin(), p.column("A").end());
  std::sort(a.begin(), a.end());
  CHECK(a == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(std::equal(p.column("B").begin(), p.column("B").end(), d.column("B").begin()));
  CHECK(ids_of(p) == ids_of(d));
}

TEST_CASE("lineage replays to the same rows") {
  testutil::TempDir dir("lineage");
  std::string csv = "AGEP,F\n";
  for (int i = 0; i < 200; ++i) csv += std::to_string(16 + i % 60) + "," + std::to_string(i % 2) + "\n";
  testutil::write_file(dir / "p.csv", csv);
  const auto schema = schema_of({{"AGEP", ColumnKind::integer}, {"F", ColumnKind::categorical}});
  const std::vector<Predicate> adults = {{"AGEP", Comparison::greater, {20}}};
  const auto d = load_person_csv(dir / "p.csv", schema);
  const auto derived =
      subsample(partition(filter_rows(d, adults, "adults"), SplitSpec{}, Partition::train), 30, 2);
  const auto replayed = replay_lineage(derived.lineage(), schema);
  CHECK(ids_of(replayed) == ids_of(derived));
  CHECK(std::equal(replayed.column("AGEP").begin(), replayed.column("AGEP").end(),
                   derived.column("AGEP").begin()));
  CHECK_THROWS_AS(replay_lineage(numbered(3).lineage(), schema), SchemaError);
}

TEST_CASE("labels depend on the target column alone") {
  const auto task = resolve_task("ACSIncome", testutil::data_dir() / "tasks");
  std::vector<double> age, income;
  for (int i = 0; i < 100; ++i) {
    age.push_back(17 + i % 50);
    income.push_back(1000.0 * (i * 37 % 120));
  }
  const auto d = make_dataset(schema_of({{"AGEP", ColumnKind::integer}, {"PINCP", ColumnKind::decimal}}), {age, income});
  const auto labels = binarize_target(d, task);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(binarize_target(d.with_column_permuted("AGEP", seed), task) == labels);
  }
}

TEST_CASE("filtering never adds rows") {
  const auto task = resolve_task("ACSIncome", testutil::data_dir() / "tasks");
  std::vector<double> age, income, hours;
  for (int i = 0; i < 300; ++i) {
    age.push_back(i % 90);
    income.push_back(i % 7 == 0 ? kMissing : 50.0 * i);
    hours.push_back(i % 5 == 0 ? kMissing : i % 60);
  }
  const auto d = make_dataset(schema_of({{"AGEP", ColumnKind::integer},
                                         {"PINCP", ColumnKind::decimal},
                                         {"WKHP", ColumnKind::integer}}),
                              {age, income, hours});
  const auto out = apply_population_filter(d, task);
  CHECK(out.num_rows() <= d.num_rows());
  const auto all = id_set(d);
  for (RowId id : out.row_ids()) CHECK(all.count(id) == 1);
  for (double v : out.column("WKHP")) CHECK(v > 0);
}
