#include "labelprobe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

namespace labelprobe {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = gather_rows(features, rows);
  out.feature_names = feature_names;
  out.categorical_names = categorical_names;
  out.categorical.resize(categorical.size());
  for (std::size_t c = 0; c < categorical.size(); ++c) {
    out.categorical[c].reserve(rows.size());
    for (std::size_t r : rows) out.categorical[c].push_back(categorical[c][r]);
  }
  out.noisy_labels = gather(noisy_labels, rows);
  if (clean_labels) out.clean_labels = gather(*clean_labels, rows);
  out.n_classes = n_classes;
  out.example_ids.reserve(rows.size());
  std::unordered_set<std::size_t> seen;
  for (std::size_t r : rows) {
    // Bootstrap-style repeats get a suffix so ids stay unique.
    std::string id = example_ids.empty() ? std::to_string(r) : example_ids[r];
    if (!seen.insert(r).second) id += "#" + std::to_string(out.example_ids.size());
    out.example_ids.push_back(std::move(id));
  }
  if (rules.size() > 0) {
    out.rules.resize(static_cast<Eigen::Index>(rows.size()), rules.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.rules.row(static_cast<Eigen::Index>(i)) = rules.row(static_cast<Eigen::Index>(rows[i]));
    }
  }
  return out;
}

std::vector<bool> Dataset::mislabeled_mask() const {
  if (!clean_labels) throw Error("mislabeled mask requires clean labels");
  std::vector<bool> mask(size());
  for (std::size_t i = 0; i < size(); ++i) mask[i] = noisy_labels[i] != (*clean_labels)[i];
  return mask;
}

void Dataset::validate() const {
  const std::size_t n = size();
  if (n_classes < 1) throw Error("n_classes must be positive");
  if (static_cast<std::size_t>(features.rows()) != n) throw Error("feature rows differ from label count");
  for (int y : noisy_labels) {
    if (y < 0 || y >= n_classes) throw Error("noisy label " + std::to_string(y) + " outside [0, K)");
  }
  if (clean_labels) {
    if (clean_labels->size() != n) throw Error("clean_labels length differs from noisy_labels");
    for (int y : *clean_labels) {
      if (y < 0 || y >= n_classes) throw Error("clean label " + std::to_string(y) + " outside [0, K)");
    }
  }
  if (!features.allFinite()) throw Error("features contain NaN or Inf");
  if (example_ids.size() != n) throw Error("example_ids length differs from label count");
  std::unordered_set<std::string> ids(example_ids.begin(), example_ids.end());
  if (ids.size() != n) throw Error("example_ids are not unique");
  for (const auto& col : categorical) {
    if (col.size() != n) throw Error("categorical column length differs from label count");
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& f : out) {
    if (!f.empty() && f.back() == '\r') f.pop_back();
  }
  return out;
}

std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::optional<int> parse_int(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = split_fields(line);
    break;
  }
  if (header.empty()) throw Error(path.string() + ": missing header row");

  enum class Role { id, label, clean, covered, rule, numeric, categorical };
  std::vector<Role> roles;
  std::optional<std::size_t> label_col;
  std::set<std::string> categorical(schema.categorical_columns.begin(),
                                    schema.categorical_columns.end());
  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == schema.id_column) {
      roles.push_back(Role::id);
    } else if (name == schema.label_column) {
      roles.push_back(Role::label);
      label_col = c;
    } else if (name == schema.clean_label_column) {
      roles.push_back(Role::clean);
    } else if (name == schema.covered_column) {
      roles.push_back(Role::covered);
    } else if (name.rfind(schema.rule_prefix, 0) == 0) {
      roles.push_back(Role::rule);
    } else if (categorical.contains(name)) {
      roles.push_back(Role::categorical);
      ds.categorical_names.push_back(name);
    } else {
      roles.push_back(Role::numeric);
      ds.feature_names.push_back(name);
    }
  }
  if (!label_col) throw Error(path.string() + ": missing label column '" + schema.label_column + "'");
  const bool has_clean = std::find(roles.begin(), roles.end(), Role::clean) != roles.end();
  const auto n_rules = static_cast<Eigen::Index>(std::count(roles.begin(), roles.end(), Role::rule));

  std::vector<std::vector<double>> numeric_rows;
  std::vector<std::vector<int>> rule_rows;
  ds.categorical.resize(ds.categorical_names.size());
  Labels clean;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_fields(line);
    const std::string where = path.string() + ": row " + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw Error(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                  std::to_string(fields.size()));
    }
    std::vector<double> numeric;
    std::vector<int> votes;
    std::string id = std::to_string(ds.size());
    std::optional<int> label;
    std::optional<int> clean_label;
    bool covered = true;
    std::size_t cat_col = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string& f = fields[c];
      switch (roles[c]) {
        case Role::id:
          id = f;
          break;
        case Role::label:
        case Role::clean:
        case Role::rule: {
          const auto v = parse_int(f);
          if (!v) throw Error(where + ": column '" + header[c] + "' is not an integer: '" + f + "'");
          if (roles[c] == Role::label) label = *v;
          if (roles[c] == Role::clean) clean_label = *v;
          if (roles[c] == Role::rule) {
            if (*v < kAbstain) throw Error(where + ": rule vote " + std::to_string(*v) + " invalid");
            votes.push_back(*v);
          }
          break;
        }
        case Role::covered: {
          const auto v = parse_int(f);
          if (!v || (*v != 0 && *v != 1)) throw Error(where + ": covered must be 0 or 1");
          covered = *v == 1;
          break;
        }
        case Role::numeric: {
          const auto v = parse_double(f);
          if (!v) throw Error(where + ": column '" + header[c] + "' is not a finite number: '" + f + "'");
          numeric.push_back(*v);
          break;
        }
        case Role::categorical:
          ds.categorical[cat_col++].push_back(f);
          break;
      }
    }
    if (!covered) {
      for (std::size_t c = 0; c < ds.categorical.size(); ++c) ds.categorical[c].pop_back();
      continue;
    }
    if (*label < 0) throw Error(where + ": label " + std::to_string(*label) + " is negative");
    if (schema.n_classes && (*label >= *schema.n_classes ||
                             (clean_label && (*clean_label < 0 || *clean_label >= *schema.n_classes)))) {
      throw Error(where + ": label outside declared class set [0, " +
                  std::to_string(*schema.n_classes) + ")");
    }
    for (int v : votes) {
      if (schema.n_classes && v >= *schema.n_classes) {
        throw Error(where + ": rule vote " + std::to_string(v) + " outside declared class set");
      }
    }
    ds.noisy_labels.push_back(*label);
    if (has_clean) clean.push_back(*clean_label);
    ds.example_ids.push_back(id);
    numeric_rows.push_back(std::move(numeric));
    rule_rows.push_back(std::move(votes));
  }

  const auto n = static_cast<Eigen::Index>(ds.noisy_labels.size());
  const auto d = static_cast<Eigen::Index>(ds.feature_names.size());
  ds.features.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = numeric_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  if (n_rules > 0) {
    ds.rules.resize(n, n_rules);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n_rules; ++j) ds.rules(i, j) = rule_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  if (has_clean) ds.clean_labels = std::move(clean);
  int k = schema.n_classes.value_or(0);
  k = std::max(k, infer_classes(ds.noisy_labels));
  if (ds.clean_labels) k = std::max(k, infer_classes(*ds.clean_labels));
  for (Eigen::Index i = 0; i < ds.rules.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.rules.cols(); ++j) k = std::max(k, ds.rules(i, j) + 1);
  }
  ds.n_classes = k;
  ds.validate();
  return ds;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_csv(const Dataset& ds, const std::filesystem::path& path,
               const std::vector<std::string>& comments, const std::vector<bool>* covered) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "id";
  for (const auto& name : ds.feature_names) out << ',' << name;
  for (const auto& name : ds.categorical_names) out << ',' << name;
  out << ",label";
  if (ds.clean_labels) out << ",clean_label";
  if (covered) out << ",covered";
  for (Eigen::Index j = 0; j < ds.rules.cols(); ++j) out << ",rule_" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out << ds.example_ids[i];
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) out << ',' << format_double(ds.features(row, j));
    for (const auto& col : ds.categorical) out << ',' << col[i];
    out << ',' << ds.noisy_labels[i];
    if (ds.clean_labels) out << ',' << (*ds.clean_labels)[i];
    if (covered) out << ',' << ((*covered)[i] ? 1 : 0);
    for (Eigen::Index j = 0; j < ds.rules.cols(); ++j) out << ',' << ds.rules(row, j);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Feature maps

std::string to_string(FeatureMapKind kind) {
  switch (kind) {
    case FeatureMapKind::identity: return "identity";
    case FeatureMapKind::standardize: return "standardize";
    case FeatureMapKind::onehot_standardize: return "onehot_standardize";
    case FeatureMapKind::random_fourier: return "random_fourier";
  }
  return "identity";
}

FeatureMapKind parse_feature_map_kind(std::string_view name) {
  if (name == "identity") return FeatureMapKind::identity;
  if (name == "standardize") return FeatureMapKind::standardize;
  if (name == "onehot_standardize" || name == "one-hot+standardize") return FeatureMapKind::onehot_standardize;
  if (name == "random_fourier" || name == "random-fourier") return FeatureMapKind::random_fourier;
  throw Error("unknown feature map kind '" + std::string(name) + "'");
}

int FeatureMap::output_dim() const {
  switch (kind) {
    case FeatureMapKind::identity:
    case FeatureMapKind::standardize:
      return static_cast<int>(means.size());
    case FeatureMapKind::onehot_standardize: {
      int d = static_cast<int>(means.size());
      for (const auto& c : categories) d += static_cast<int>(c.size());
      return d;
    }
    case FeatureMapKind::random_fourier:
      return n_components;
  }
  return 0;
}

Matrix FeatureMap::transform(const Matrix& x) const {
  if (x.cols() != means.size()) {
    throw Error("feature map expects " + std::to_string(means.size()) + " columns, got " +
                std::to_string(x.cols()));
  }
  switch (kind) {
    case FeatureMapKind::identity:
      return x;
    case FeatureMapKind::standardize:
    case FeatureMapKind::onehot_standardize: {
      Matrix out = x;
      out.rowwise() -= means;
      out.array().rowwise() /= scales.array();
      return out;
    }
    case FeatureMapKind::random_fourier: {
      Matrix proj = x * omega;
      proj.rowwise() += phase;
      return std::sqrt(2.0 / n_components) * proj.array().cos().matrix();
    }
  }
  return x;
}

Matrix FeatureMap::transform(const Dataset& ds) const {
  Matrix numeric = transform(ds.features);
  if (kind != FeatureMapKind::onehot_standardize || categories.empty()) {
    if (kind != FeatureMapKind::onehot_standardize && !ds.categorical.empty() && ds.size() > 0) {
      throw Error("categorical columns require the onehot_standardize feature map");
    }
    return numeric;
  }
  if (ds.categorical.size() != categories.size()) throw Error("categorical column count mismatch");
  const auto n = static_cast<Eigen::Index>(ds.size());
  Matrix out = Matrix::Zero(n, output_dim());
  out.leftCols(numeric.cols()) = numeric;
  Eigen::Index offset = numeric.cols();
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const auto& table = categories[c];
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto it = std::lower_bound(table.begin(), table.end(), ds.categorical[c][static_cast<std::size_t>(i)]);
      if (it != table.end() && *it == ds.categorical[c][static_cast<std::size_t>(i)]) {
        out(i, offset + (it - table.begin())) = 1.0;
      }
    }
    offset += static_cast<Eigen::Index>(table.size());
  }
  return out;
}

namespace {

std::vector<double> to_vec(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::RowVectorXd from_vec(const std::vector<double>& v) {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

}  // namespace

nlohmann::json FeatureMap::to_json() const {
  nlohmann::json doc;
  doc["kind"] = to_string(kind);
  doc["seed"] = seed;
  doc["means"] = to_vec(means);
  doc["scales"] = to_vec(scales);
  doc["categories"] = categories;
  if (kind == FeatureMapKind::random_fourier) {
    doc["gamma"] = gamma;
    doc["n_components"] = n_components;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < omega.rows(); ++i) rows.push_back(to_vec(omega.row(i)));
    doc["omega"] = rows;
    doc["phase"] = to_vec(phase);
  }
  return doc;
}

FeatureMap FeatureMap::from_json(const nlohmann::json& doc) {
  FeatureMap map;
  map.kind = parse_feature_map_kind(doc.at("kind").get<std::string>());
  map.seed = doc.at("seed").get<std::uint64_t>();
  map.means = from_vec(doc.at("means").get<std::vector<double>>());
  map.scales = from_vec(doc.at("scales").get<std::vector<double>>());
  map.categories = doc.at("categories").get<std::vector<std::vector<std::string>>>();
  if (map.kind == FeatureMapKind::random_fourier) {
    map.gamma = doc.at("gamma").get<double>();
    map.n_components = doc.at("n_components").get<int>();
    const auto rows = doc.at("omega").get<std::vector<std::vector<double>>>();
    map.omega.resize(static_cast<Eigen::Index>(rows.size()), map.n_components);
    for (std::size_t i = 0; i < rows.size(); ++i) map.omega.row(static_cast<Eigen::Index>(i)) = from_vec(rows[i]);
    map.phase = from_vec(doc.at("phase").get<std::vector<double>>());
  }
  return map;
}

FeatureMap fit_random_fourier(const Matrix& x, int n_components, std::uint64_t seed,
                              std::optional<double> gamma) {
  if (n_components <= 0) throw Error("random-fourier output dimension must be positive");
  if (x.rows() == 0) throw Error("cannot fit a feature map on an empty matrix");
  FeatureMap map;
  map.kind = FeatureMapKind::random_fourier;
  map.seed = seed;
  const auto d = x.cols();
  map.means = Eigen::RowVectorXd::Zero(d);
  map.scales = Eigen::RowVectorXd::Ones(d);
  map.n_components = n_components;
  if (gamma) {
    map.gamma = *gamma;
  } else {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    map.gamma = var > 0.0 ? 1.0 / (static_cast<double>(d) * var) : 1.0;
  }
  Rng rng(seed);
  const double scale = std::sqrt(2.0 * map.gamma);
  map.omega.resize(d, n_components);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < n_components; ++j) map.omega(i, j) = scale * standard_normal(rng);
  }
  map.phase.resize(n_components);
  for (Eigen::Index j = 0; j < n_components; ++j) map.phase(j) = 2.0 * std::numbers::pi * uniform01(rng);
  return map;
}

FeatureMap fit_feature_map(const Dataset& train, FeatureMapKind kind, std::uint64_t seed,
                           const FeatureMapOptions& options) {
  if (kind == FeatureMapKind::random_fourier) {
    return fit_random_fourier(train.features, options.n_components, seed, options.gamma);
  }
  FeatureMap map;
  map.kind = kind;
  map.seed = seed;
  const auto d = train.features.cols();
  map.means = Eigen::RowVectorXd::Zero(d);
  map.scales = Eigen::RowVectorXd::Ones(d);
  if (kind == FeatureMapKind::identity) return map;
  if (train.size() == 0) throw Error("cannot fit a feature map on an empty dataset");
  map.means = train.features.colwise().mean();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (train.features.col(j).array() - map.means(j)).square().mean();
    const double sd = std::sqrt(var);
    map.scales(j) = sd > 1e-12 ? sd : 1.0;
  }
  if (kind == FeatureMapKind::onehot_standardize) {
    for (const auto& col : train.categorical) {
      std::set<std::string> values(col.begin(), col.end());
      map.categories.emplace_back(values.begin(), values.end());
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Splitting

std::string to_string(ValidationKind kind) {
  switch (kind) {
    case ValidationKind::noisy: return "noisy";
    case ValidationKind::clean: return "clean";
    case ValidationKind::oracle: return "oracle";
  }
  return "noisy";
}

ValidationKind parse_validation_kind(std::string_view name) {
  if (name == "noisy") return ValidationKind::noisy;
  if (name == "clean") return ValidationKind::clean;
  if (name == "oracle") return ValidationKind::oracle;
  throw Error("unknown validation kind '" + std::string(name) + "'");
}

std::vector<std::size_t> SplitTags::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == tag) out.push_back(i);
  }
  return out;
}

SplitTags split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed,
                ValidationKind validation_kind) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw Error("split fractions must be non-negative and sum to 1");
  }
  if (validation_kind == ValidationKind::clean && !ds.has_clean()) {
    throw Error("clean validation requires clean labels");
  }
  const std::size_t n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
  if (n_val + n_test > n) throw Error("split sizes exceed dataset size");
  const std::size_t n_train = n - n_val - n_test;
  const auto n_parts = static_cast<std::size_t>(std::count_if(
      fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.n_classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.noisy_labels[i])].push_back(i);
  Rng rng(seed);
  struct Keyed {
    double key;
    int cls;
    std::size_t row;
  };
  std::vector<Keyed> order;
  order.reserve(n);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (!rows.empty() && rows.size() < n_parts) {
      throw Error("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                  " examples, fewer than the " + std::to_string(n_parts) + " splits");
    }
    shuffle(rows, rng);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      order.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(rows.size()),
                       static_cast<int>(c), rows[r]});
    }
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.cls < b.cls;
  });
  SplitTags tags;
  tags.validation_kind = validation_kind;
  tags.assignment.resize(n, SplitTag::train);
  for (std::size_t i = 0; i < n; ++i) {
    const SplitTag tag = i < n_train ? SplitTag::train
                         : i < n_train + n_val ? SplitTag::validation
                                               : SplitTag::test;
    tags.assignment[order[i].row] = tag;
  }
  return tags;
}

Partition make_partition(const Dataset& ds, const SplitTags& tags, FeatureMapKind kind,
                         std::uint64_t seed, const FeatureMapOptions& options) {
  if (tags.assignment.size() != ds.size()) throw Error("split tags do not match dataset size");
  Partition p;
  p.validation_kind = tags.validation_kind;
  const auto train_rows = tags.indices(SplitTag::train);
  Dataset train = ds.subset(train_rows);
  p.feature_map = fit_feature_map(train, kind, seed, options);
  auto finish = [&](Dataset part) {
    part.features = p.feature_map.transform(part);
    part.categorical.clear();
    part.categorical_names.clear();
    part.feature_names.clear();
    for (Eigen::Index j = 0; j < part.features.cols(); ++j) part.feature_names.push_back("f" + std::to_string(j));
    return part;
  };
  p.train = finish(std::move(train));
  p.validation = finish(ds.subset(tags.indices(SplitTag::validation)));
  p.test = finish(ds.subset(tags.indices(SplitTag::test)));
  if (p.validation_kind == ValidationKind::clean && !p.validation.has_clean()) {
    throw Error("clean validation requires clean labels");
  }
  return p;
}

}  // namespace labelprobe
