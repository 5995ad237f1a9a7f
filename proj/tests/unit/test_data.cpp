#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "sersal/data.hpp"
#include "sersal/error.hpp"

using namespace sersal;
using testing::TempDir;

namespace {

Dataset numeric_dataset(const std::vector<std::vector<double>>& rows, const std::vector<int>& y) {
  const std::size_t f = rows.front().size();
  auto schema = std::make_shared<const FeatureSchema>(testing::numeric_schema(f));
  Matrix v(rows.size(), f);
  std::vector<std::string> text;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      v(i, j) = rows[i][j];
      text.push_back(std::to_string(rows[i][j]));
    }
    ids.push_back(i);
  }
  return Dataset(schema, v, text, std::vector<std::vector<std::string>>(f), ids, y);
}

Dataset labeled_dataset(std::size_t pos, std::size_t neg) {
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (std::size_t i = 0; i < pos + neg; ++i) {
    rows.push_back({static_cast<double>(i)});
    y.push_back(i < pos ? 1 : 0);
  }
  return numeric_dataset(rows, y);
}

}  // namespace

TEST_CASE("schema validation") {
  FeatureSchema s = testing::numeric_schema(2);
  CHECK_NOTHROW(s.validate());
  FeatureSchema dup = s;
  dup.columns[1].name = "x1";
  CHECK_THROWS_AS(dup.validate(), DataError);
  FeatureSchema label_in_features = s;
  label_in_features.label_column = "x2";
  CHECK_THROWS_AS(label_in_features.validate(), DataError);
  FeatureSchema empty = s;
  empty.columns.clear();
  CHECK_THROWS_AS(empty.validate(), DataError);

  // JSON round trip keeps units and kinds.
  FeatureSchema rich = s;
  rich.columns[0].unit = "mg/dL";
  rich.columns[1].kind = FeatureKind::Categorical;
  CHECK(schema_from_json(schema_to_json(rich)) == rich);
  CHECK(rich.fingerprint() != s.fingerprint());
}

TEST_CASE("load_csv drops rows with missing values") {
  TempDir dir;
  testing::write_text(dir / "d.csv", "x1,x2,y\n1,2,1\n3,,0\n5,6,0\n");
  const Dataset ds = load_csv(dir / "d.csv", testing::numeric_schema(2));
  REQUIRE(ds.size() == 2);
  CHECK(ds.ids() == std::vector<std::uint64_t>{0, 2});
  CHECK(ds.values()(1, 0) == 5.0);
  CHECK(ds.cell_text(1, 1) == "6");
  CHECK(ds.gold_labels() == std::vector<int>{1, 0});
}

TEST_CASE("load_csv errors") {
  TempDir dir;
  testing::write_text(dir / "d.csv", "x1,y\n1,1\n");
  CHECK_THROWS_AS(load_csv(dir / "d.csv", testing::numeric_schema(2)), DataError);
  testing::write_text(dir / "e.csv", "x1,x2,y\n1,abc,1\n");
  CHECK_THROWS_AS(load_csv(dir / "e.csv", testing::numeric_schema(2)), DataError);
  testing::write_text(dir / "f.csv", "x1,x2,y\n1,2,a\n1,2,b\n1,2,c\n");
  CHECK_THROWS_AS(load_csv(dir / "f.csv", testing::numeric_schema(2)), DataError);
  CHECK_THROWS_AS(load_csv(dir / "missing.csv", testing::numeric_schema(2)), DataError);
}

TEST_CASE("categorical columns use a sorted vocabulary fitted at load") {
  TempDir dir;
  testing::write_text(dir / "c.csv", "g,x1,y\nMale,1,1\nFemale,2,0\n\"Male\",3,0\n");
  FeatureSchema s;
  s.columns = {{"g", FeatureKind::Categorical, std::nullopt}, {"x1"}};
  s.label_column = "y";
  s.positive_class_name = "1";
  const Dataset ds = load_csv(dir / "c.csv", s);
  REQUIRE(ds.vocabularies()[0] == std::vector<std::string>{"Female", "Male"});
  CHECK(ds.values()(0, 0) == 1.0);
  CHECK(ds.values()(1, 0) == 0.0);
  CHECK(ds.categorical_cardinalities() == std::vector<std::size_t>{2});
}

TEST_CASE("stratified_split on 4 positives and 6 negatives puts one of each in test") {
  const Dataset ds = labeled_dataset(4, 6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Split sp = stratified_split(ds, 0.2, seed);
    REQUIRE(sp.test.size() == 2);
    const auto& g = sp.test.gold_labels();
    CHECK(std::count(g.begin(), g.end(), 1) == 1);
  }
}

TEST_CASE("ECD-shaped data splits 416 / 104 with P/N 1.60") {
  FeatureSchema s = load_schema(testing::data_path("ecd.schema.json"));
  const Dataset ds = load_csv(testing::data_path("ecd.csv"), s);
  REQUIRE(ds.size() == 520);
  const auto& g = ds.gold_labels();
  const auto pos = std::count(g.begin(), g.end(), 1);
  CHECK(static_cast<double>(pos) / static_cast<double>(520 - pos) == doctest::Approx(1.60));
  const Split sp = stratified_split(ds, 0.2, 42);
  CHECK(sp.train.size() == 416);
  CHECK(sp.test.size() == 104);
}

TEST_CASE("split invariants over random label vectors") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng() % 300;
    std::vector<std::vector<double>> rows;
    std::vector<int> y;
    const double p = 0.1 + 0.8 * std::uniform_real_distribution<double>()(rng);
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back({static_cast<double>(i)});
      y.push_back(std::bernoulli_distribution(p)(rng) ? 1 : 0);
    }
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos < 2 || static_cast<std::size_t>(pos) + 2 > n) continue;
    const Dataset ds = numeric_dataset(rows, y);
    const double frac = 0.1 + 0.4 * std::uniform_real_distribution<double>()(rng);
    const std::uint64_t seed = rng();
    const Split sp = stratified_split(ds, frac, seed);

    // Disjoint, complete.
    std::vector<std::uint64_t> all = sp.train.ids();
    all.insert(all.end(), sp.test.ids().begin(), sp.test.ids().end());
    std::sort(all.begin(), all.end());
    CHECK(all == ds.ids());

    // Per-class test counts within one sample of the exact share.
    const auto& tg = sp.test.gold_labels();
    const double test_pos = static_cast<double>(std::count(tg.begin(), tg.end(), 1));
    const double test_neg = static_cast<double>(tg.size()) - test_pos;
    CHECK(std::abs(test_pos - frac * pos) <= 1.0 + 1e-9);
    CHECK(std::abs(test_neg - frac * (n - pos)) <= 1.0 + 1e-9);
    CHECK(std::abs(test_pos / tg.size() - static_cast<double>(pos) / n) <= 1.0 / tg.size() + 1e-12);

    // Deterministic.
    const Split again = stratified_split(ds, frac, seed);
    CHECK(again.train.ids() == sp.train.ids());
    CHECK(again.test.values() == sp.test.values());
  }
}

TEST_CASE("standardize uses train statistics and population std") {
  const Dataset ds = numeric_dataset({{1, 5}, {2, 5}, {3, 5}, {2, 7}}, {1, 0, 1, 0});
  const std::vector<std::size_t> tr{0, 1, 2}, te{3};
  const Split raw{ds.subset(tr), ds.subset(te), 0, true};
  std::vector<std::string> warnings;
  const Split sp = standardize(raw, &warnings);
  CHECK(sp.train.values()(0, 0) == doctest::Approx(-1.224744871391589));
  CHECK(sp.train.values()(1, 0) == doctest::Approx(0.0));
  CHECK(sp.train.values()(2, 0) == doctest::Approx(1.224744871391589));
  // Zero-variance column.
  for (std::size_t r = 0; r < 3; ++r) CHECK(sp.train.values()(r, 1) == 0.0);
  CHECK(sp.test.values()(0, 1) == 0.0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("x2") != std::string::npos);
  // Test value at the train mean maps to 0; raw values and text are kept.
  CHECK(sp.test.values()(0, 0) == 0.0);
  CHECK(sp.test.raw_values()(0, 0) == 2.0);
  CHECK(sp.test.cell_text(0, 1) == raw.test.cell_text(0, 1));
}

TEST_CASE("standardized train columns have zero mean") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(50, 20);
  std::vector<std::vector<double>> rows;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    rows.push_back({n(rng), n(rng) * 1e3, n(rng) * 1e-3});
    y.push_back(i % 2);
  }
  const Split sp = standardize(stratified_split(numeric_dataset(rows, y), 0.25, 1));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < sp.train.size(); ++r) mean += sp.train.values()(r, c);
    mean /= sp.train.size();
    for (std::size_t r = 0; r < sp.train.size(); ++r) var += std::pow(sp.train.values()(r, c) - mean, 2);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var / sp.train.size() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gold label ledger counts reads and refuses when locked") {
  const Dataset ds = labeled_dataset(3, 3);
  const auto ledger = ds.gold_ledger();
  const std::size_t before = ledger->reads();
  (void)ds.gold_labels();
  CHECK(ledger->reads() == before + 1);

  // Derived datasets share the ledger; subsetting itself is not a read.
  const std::vector<std::size_t> rows{0, 4};
  const Dataset sub = ds.subset(rows);
  CHECK(ledger->reads() == before + 1);
  CHECK(sub.gold_ledger() == ledger);
  CHECK(sub.gold_labels() == std::vector<int>{1, 0});

  ledger->lock();
  CHECK_THROWS_AS((void)sub.gold_labels(), GoldLabelAccessError);
  ledger->unlock();
  CHECK_THROWS_AS((void)ds.without_gold_labels().gold_labels(), GoldLabelAccessError);
}

TEST_CASE("select_ids keeps the requested order") {
  const Dataset ds = labeled_dataset(2, 3);
  const std::vector<std::uint64_t> ids{4, 0, 2};
  const Dataset sel = select_ids(ds, ids);
  CHECK(sel.ids() == ids);
  CHECK(sel.values()(0, 0) == 4.0);
  const std::vector<std::uint64_t> bad{9};
  CHECK_THROWS_AS(select_ids(ds, bad), DataError);
}
