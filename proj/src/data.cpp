#include "sersal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "sersal/error.hpp"

namespace sersal {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Schema

std::size_t FeatureSchema::num_numerical() const {
  return static_cast<std::size_t>(std::count_if(
      columns.begin(), columns.end(),
      [](const FeatureColumn& c) { return c.kind == FeatureKind::Numerical; }));
}

std::size_t FeatureSchema::num_categorical() const {
  return columns.size() - num_numerical();
}

void FeatureSchema::validate() const {
  if (columns.empty()) throw DataError("schema has no feature columns");
  std::set<std::string> seen;
  for (const auto& c : columns) {
    if (c.name.empty()) throw DataError("schema column with empty name");
    if (!seen.insert(c.name).second)
      throw DataError("duplicate schema column '" + c.name + "'");
  }
  if (label_column.empty()) throw DataError("schema has no label column");
  if (seen.count(label_column))
    throw DataError("label column '" + label_column + "' is also a feature column");
}

std::uint64_t FeatureSchema::fingerprint() const { return fnv1a64(schema_to_json(*this)); }

std::string schema_to_json(const FeatureSchema& schema) {
  json cols = json::array();
  for (const auto& c : schema.columns) {
    json jc{{"name", c.name},
            {"kind", c.kind == FeatureKind::Numerical ? "numerical" : "categorical"}};
    if (c.unit) jc["unit"] = *c.unit;
    cols.push_back(std::move(jc));
  }
  json j{{"columns", cols},
         {"label_column", schema.label_column},
         {"positive_class_name", schema.positive_class_name},
         {"task_description", schema.task_description},
         {"role_preamble", schema.role_preamble}};
  return j.dump(2);
}

FeatureSchema schema_from_json(const std::string& text) {
  FeatureSchema s;
  try {
    const json j = json::parse(text);
    for (const auto& jc : j.at("columns")) {
      FeatureColumn c;
      c.name = jc.at("name").get<std::string>();
      const auto kind = jc.value("kind", std::string("numerical"));
      if (kind == "numerical")
        c.kind = FeatureKind::Numerical;
      else if (kind == "categorical")
        c.kind = FeatureKind::Categorical;
      else
        throw DataError("column '" + c.name + "': unknown kind '" + kind + "'");
      if (jc.contains("unit") && !jc["unit"].is_null() && !jc["unit"].get<std::string>().empty())
        c.unit = jc["unit"].get<std::string>();
      s.columns.push_back(std::move(c));
    }
    s.label_column = j.at("label_column").get<std::string>();
    s.positive_class_name = j.at("positive_class_name").get<std::string>();
    s.task_description = j.value("task_description", std::string());
    if (j.contains("role_preamble")) s.role_preamble = j["role_preamble"].get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed schema: ") + e.what());
  }
  s.validate();
  return s;
}

FeatureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return schema_from_json(ss.str());
}

void save_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << schema_to_json(schema) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::shared_ptr<const FeatureSchema> schema, Matrix values,
                 std::vector<std::string> cell_text,
                 std::vector<std::vector<std::string>> vocabularies,
                 std::vector<std::uint64_t> ids, std::optional<std::vector<int>> gold,
                 std::shared_ptr<GoldLabelLedger> ledger)
    : schema_(std::move(schema)),
      values_(std::move(values)),
      raw_values_(values_),
      cell_text_(std::move(cell_text)),
      vocabularies_(std::move(vocabularies)),
      ids_(std::move(ids)),
      gold_(std::move(gold)),
      ledger_(ledger ? std::move(ledger) : std::make_shared<GoldLabelLedger>()) {
  if (values_.rows() != ids_.size() || values_.cols() != schema_->num_features())
    throw DataError("dataset shape does not match schema");
  if (cell_text_.size() != values_.size()) throw DataError("cell text size mismatch");
  if (gold_ && gold_->size() != ids_.size()) throw DataError("gold label count mismatch");
  if (vocabularies_.size() != values_.cols()) vocabularies_.resize(values_.cols());
}

std::vector<std::size_t> Dataset::categorical_cardinalities() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < schema_->columns.size(); ++c)
    if (schema_->columns[c].kind == FeatureKind::Categorical)
      out.push_back(std::max<std::size_t>(1, vocabularies_[c].size()));
  return out;
}

const std::vector<int>& Dataset::gold_labels() const {
  if (!gold_) throw GoldLabelAccessError("dataset carries no gold labels");
  if (ledger_->locked()) throw GoldLabelAccessError("gold labels are locked for this run");
  ledger_->record_read();
  return *gold_;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const std::size_t f = values_.cols();
  Matrix v(rows.size(), f), raw(rows.size(), f);
  std::vector<std::string> text;
  text.reserve(rows.size() * f);
  std::vector<std::uint64_t> ids;
  ids.reserve(rows.size());
  std::optional<std::vector<int>> gold;
  if (gold_) gold.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= size()) throw DataError("subset row out of range");
    std::copy_n(values_.row(r).begin(), f, v.row(i).begin());
    std::copy_n(raw_values_.row(r).begin(), f, raw.row(i).begin());
    for (std::size_t c = 0; c < f; ++c) text.push_back(cell_text_[r * f + c]);
    ids.push_back(ids_[r]);
    if (gold_) gold->push_back((*gold_)[r]);
  }
  Dataset out(schema_, std::move(v), std::move(text), vocabularies_, std::move(ids),
              std::move(gold), ledger_);
  out.raw_values_ = std::move(raw);
  return out;
}

Dataset Dataset::with_values(Matrix values) const {
  if (values.rows() != values_.rows() || values.cols() != values_.cols())
    throw DataError("replacement values have the wrong shape");
  Dataset out = *this;
  out.values_ = std::move(values);
  return out;
}

Dataset Dataset::without_gold_labels() const {
  Dataset out = *this;
  out.gold_.reset();
  return out;
}

Dataset select_ids(const Dataset& ds, std::span<const std::uint64_t> ids) {
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < ds.size(); ++i) index.emplace(ds.ids()[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (auto id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown row id " + std::to_string(id));
    rows.push_back(it->second);
  }
  return ds.subset(rows);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& v) {
  if (v.empty()) return true;
  std::string l(v);
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  return l == "na" || l == "nan" || l == "?" || l == "null" || l == "none";
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty data file " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;
  std::vector<std::size_t> feature_pos;
  for (const auto& c : schema.columns) {
    auto it = position.find(c.name);
    if (it == position.end())
      throw DataError("header of " + path.string() + " lacks schema column '" + c.name + "'");
    feature_pos.push_back(it->second);
  }
  auto label_it = position.find(schema.label_column);
  if (label_it == position.end())
    throw DataError("header of " + path.string() + " lacks label column '" +
                    schema.label_column + "'");
  if (header.size() != schema.columns.size() + 1)
    throw DataError("header of " + path.string() + " has columns not in the schema");
  const std::size_t label_pos = label_it->second;

  const std::size_t f = schema.columns.size();
  std::vector<std::vector<std::string>> kept;
  std::vector<std::string> labels;
  std::vector<std::uint64_t> ids;
  std::uint64_t row_index = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    const std::uint64_t id = row_index++;
    if (fields.size() != header.size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    for (auto& v : fields) v = trim(v);
    bool missing = is_missing(fields[label_pos]);
    for (std::size_t c = 0; c < f && !missing; ++c) missing = is_missing(fields[feature_pos[c]]);
    if (missing) continue;
    std::vector<std::string> row(f);
    for (std::size_t c = 0; c < f; ++c) row[c] = fields[feature_pos[c]];
    kept.push_back(std::move(row));
    labels.push_back(fields[label_pos]);
    ids.push_back(id);
  }

  std::set<std::string> classes(labels.begin(), labels.end());
  if (classes.size() > 2)
    throw DataError("label column '" + schema.label_column + "' has " +
                    std::to_string(classes.size()) + " classes; only binary tasks are supported");

  std::vector<std::vector<std::string>> vocab(f);
  for (std::size_t c = 0; c < f; ++c) {
    if (schema.columns[c].kind != FeatureKind::Categorical) continue;
    std::set<std::string> values;
    for (const auto& r : kept) values.insert(r[c]);
    vocab[c].assign(values.begin(), values.end());
  }

  const std::size_t n = kept.size();
  Matrix values(n, f);
  std::vector<std::string> text;
  text.reserve(n * f);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::string& cell = kept[r][c];
      if (schema.columns[c].kind == FeatureKind::Numerical) {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || !std::isfinite(v))
          throw DataError("column '" + schema.columns[c].name + "': non-numeric value '" +
                          cell + "'");
        values(r, c) = v;
      } else {
        const auto& vc = vocab[c];
        values(r, c) = static_cast<double>(
            std::lower_bound(vc.begin(), vc.end(), cell) - vc.begin());
      }
      text.push_back(cell);
    }
  }
  std::vector<int> gold(n);
  for (std::size_t r = 0; r < n; ++r) gold[r] = labels[r] == schema.positive_class_name ? 1 : 0;

  return Dataset(std::make_shared<const FeatureSchema>(schema), std::move(values),
                 std::move(text), std::move(vocab), std::move(ids), std::move(gold));
}

// ---------------------------------------------------------------------------
// Splitting

Split stratified_split(const Dataset& ds, double test_fraction, std::uint64_t seed,
                       bool stratify) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DataError("test fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> test_rows;

  if (stratify) {
    const auto& gold = ds.gold_labels();
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[gold[i] ? 1 : 0].push_back(i);
    for (int c = 0; c < 2; ++c)
      if (by_class[c].size() < 2)
        throw DataError("class " + std::to_string(c) + " has fewer than 2 samples");

    // Largest-remainder allocation so the total matches round(f * N) and each
    // class is within one sample of its exact share.
    const auto total = static_cast<std::size_t>(std::llround(test_fraction * ds.size()));
    double exact[2];
    std::size_t take[2];
    for (int c = 0; c < 2; ++c) {
      exact[c] = test_fraction * static_cast<double>(by_class[c].size());
      take[c] = static_cast<std::size_t>(std::floor(exact[c]));
    }
    std::size_t assigned = take[0] + take[1];
    int order[2] = {0, 1};
    if (exact[1] - take[1] > exact[0] - take[0]) std::swap(order[0], order[1]);
    for (int k = 0; k < 2 && assigned < total; ++k) {
      ++take[order[k]];
      ++assigned;
    }
    for (int c = 0; c < 2; ++c) {
      take[c] = std::clamp<std::size_t>(take[c], 1, by_class[c].size() - 1);
      std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
      test_rows.insert(test_rows.end(), by_class[c].begin(), by_class[c].begin() + take[c]);
    }
  } else {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(test_fraction * ds.size()));
    test_rows.assign(all.begin(), all.begin() + take);
  }

  std::sort(test_rows.begin(), test_rows.end());
  std::vector<std::size_t> train_rows;
  train_rows.reserve(ds.size() - test_rows.size());
  for (std::size_t i = 0, k = 0; i < ds.size(); ++i) {
    if (k < test_rows.size() && test_rows[k] == i)
      ++k;
    else
      train_rows.push_back(i);
  }
  return Split{ds.subset(train_rows), ds.subset(test_rows), seed, stratify};
}

// ---------------------------------------------------------------------------
// Standardization

FeatureScaler FeatureScaler::fit(const Dataset& ds) {
  const std::size_t f = ds.num_features();
  FeatureScaler s;
  s.mean.assign(f, 0.0);
  s.scale.assign(f, 1.0);
  s.numerical.assign(f, false);
  const double n = static_cast<double>(ds.size());
  for (std::size_t c = 0; c < f; ++c) {
    if (ds.schema().columns[c].kind != FeatureKind::Numerical) continue;
    s.numerical[c] = true;
    double mu = 0.0;
    for (std::size_t r = 0; r < ds.size(); ++r) mu += ds.values()(r, c);
    mu = n > 0 ? mu / n : 0.0;
    double var = 0.0;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      const double d = ds.values()(r, c) - mu;
      var += d * d;
    }
    var = n > 0 ? var / n : 0.0;
    s.mean[c] = mu;
    s.scale[c] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return s;
}

Dataset FeatureScaler::transform(const Dataset& ds) const {
  Matrix v = ds.values();
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) {
      if (!numerical[c]) continue;
      v(r, c) = scale[c] > 0.0 ? (v(r, c) - mean[c]) / scale[c] : 0.0;
    }
  return ds.with_values(std::move(v));
}

Split standardize(const Split& split, std::vector<std::string>* warnings) {
  if (split.train.schema().num_numerical() == 0)
    throw DataError("standardize requires at least one numerical column");
  const FeatureScaler scaler = FeatureScaler::fit(split.train);
  if (warnings) {
    for (std::size_t c = 0; c < scaler.scale.size(); ++c)
      if (scaler.numerical[c] && scaler.scale[c] == 0.0)
        warnings->push_back("column '" + split.train.schema().columns[c].name +
                            "' has zero variance; replaced by constant 0");
  }
  return Split{scaler.transform(split.train), scaler.transform(split.test), split.seed,
               split.stratified};
}

}  // namespace sersal
