#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "labelprobe/evaluation.hpp"
#include "labelprobe/metrics.hpp"

namespace labelprobe::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error("config [" + where + "]: " + what);
}

void check_keys(const json& t, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!t.is_object()) bad(where, "expected a table");
  for (const auto& [key, _] : t.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) bad(where, "unknown key '" + key + "'");
  }
}

double number(const json& t, const std::string& key, double fallback, const std::string& where) {
  if (!t.contains(key)) return fallback;
  const json& v = t.at(key);
  if (!v.is_number()) bad(where, "'" + key + "' must be a number");
  return v.get<double>();
}

std::int64_t integer(const json& t, const std::string& key, std::int64_t fallback, const std::string& where) {
  if (!t.contains(key)) return fallback;
  const json& v = t.at(key);
  if (!v.is_number_integer()) bad(where, "'" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::size_t count(const json& t, const std::string& key, std::size_t fallback, const std::string& where) {
  const auto v = integer(t, key, static_cast<std::int64_t>(fallback), where);
  if (v < 0) bad(where, "'" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::string text(const json& t, const std::string& key, const std::string& fallback, const std::string& where) {
  if (!t.contains(key)) return fallback;
  const json& v = t.at(key);
  if (!v.is_string()) bad(where, "'" + key + "' must be a string");
  return v.get<std::string>();
}

bool flag(const json& t, const std::string& key, bool fallback, const std::string& where) {
  if (!t.contains(key)) return fallback;
  const json& v = t.at(key);
  if (!v.is_boolean()) bad(where, "'" + key + "' must be true or false");
  return v.get<bool>();
}

std::vector<double> numbers(const json& t, const std::string& key, const std::string& where) {
  const json& v = t.at(key);
  if (!v.is_array()) bad(where, "'" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) bad(where, "'" + key + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::string> strings(const json& t, const std::string& key, const std::string& where) {
  const json& v = t.at(key);
  if (!v.is_array()) bad(where, "'" + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) bad(where, "'" + key + "' must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::uint64_t seed_of(const json& t, const std::string& key, std::uint64_t fallback, const std::string& where) {
  if (!t.contains(key)) return fallback;
  if (t.at(key).is_number_unsigned()) return t.at(key).get<std::uint64_t>();
  const auto v = integer(t, key, static_cast<std::int64_t>(fallback), where);
  if (v < 0) bad(where, "'" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

constexpr std::array<std::string_view, 13> kModelKeys{
    "alpha", "learning_rate", "l2", "max_depth", "min_child_weight", "k", "n_components", "kernel",
    "max_iter", "early_stopping", "patience", "validation_fraction", "tol"};

BaseModelSpec apply_overrides(BaseModelSpec s, const json& t, const std::string& where) {
  s.alpha = number(t, "alpha", s.alpha, where);
  s.learning_rate = number(t, "learning_rate", s.learning_rate, where);
  s.l2 = number(t, "l2", s.l2, where);
  s.max_depth = static_cast<int>(integer(t, "max_depth", s.max_depth, where));
  s.min_child_weight = number(t, "min_child_weight", s.min_child_weight, where);
  s.k = static_cast<int>(integer(t, "k", s.k, where));
  s.n_components = static_cast<int>(integer(t, "n_components", s.n_components, where));
  if (t.contains("kernel")) {
    const std::string k = text(t, "kernel", "", where);
    if (k == "rbf") {
      s.kernel = KernelKind::rbf;
    } else if (k == "linear") {
      s.kernel = KernelKind::linear;
    } else {
      bad(where, "unknown kernel '" + k + "' (known: rbf, linear)");
    }
  }
  s.max_iter = static_cast<int>(integer(t, "max_iter", s.max_iter, where));
  s.early_stopping = flag(t, "early_stopping", s.early_stopping, where);
  s.patience = static_cast<int>(integer(t, "patience", s.patience, where));
  s.validation_fraction = number(t, "validation_fraction", s.validation_fraction, where);
  s.tol = number(t, "tol", s.tol, where);
  return s;
}

bool has_model_override(const json& t) {
  return std::any_of(kModelKeys.begin(), kModelKeys.end(), [&](std::string_view k) { return t.contains(std::string(k)); });
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_table(const fs::path& path, const std::vector<std::string>& comments,
                 const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& c : comments) out << "# " << c << '\n';
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Trial logs: one provenance line, then one record per line.

TrialCache read_trial_log(const fs::path& path) {
  TrialCache cache;
  std::ifstream in(path);
  if (!in) return cache;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || doc.contains("provenance")) continue;  // torn tail after a crash
    try {
      TrialRecord t = TrialRecord::from_json(doc);
      cache.emplace(t.fingerprint, std::move(t));
    } catch (const std::exception&) {
      continue;
    }
  }
  return cache;
}

class TrialLog {
 public:
  TrialLog(fs::path path, json provenance) : path_(std::move(path)), provenance_(std::move(provenance)) {
    cache_ = read_trial_log(path_);
    const bool fresh = !fs::exists(path_);
    out_.open(path_, std::ios::app);
    if (!out_) throw Error("cannot write " + path_.string());
    if (fresh) out_ << json{{"provenance", provenance_}}.dump() << '\n';
  }

  const TrialCache& cache() const { return cache_; }
  TrialSink sink() {
    return [this](const TrialRecord& t) {
      out_ << t.to_json().dump() << '\n';
      out_.flush();
    };
  }

  /// Rewrites the log in trial order when anything new was computed, so a
  /// resumed run ends with the same bytes as an uninterrupted one.
  void finalize(const std::vector<const SearchResult*>& results) {
    out_.close();
    std::size_t computed = 0;
    for (const auto* r : results) computed += r->computed;
    if (computed == 0) return;
    std::ofstream out(path_, std::ios::trunc);
    out << json{{"provenance", provenance_}}.dump() << '\n';
    for (const auto* r : results) {
      for (const auto& t : r->trials) out << t.to_json().dump() << '\n';
    }
  }

 private:
  fs::path path_;
  json provenance_;
  TrialCache cache_;
  std::ofstream out_;
};

Partition build_partition(const ExperimentConfig& cfg, const Dataset& ds, ValidationKind kind) {
  const SplitTags tags = split(ds, cfg.dataset.fractions, derive_seed(cfg.seed, 2), kind);
  return make_partition(ds, tags, cfg.dataset.feature_map, derive_seed(cfg.seed, 3));
}

// Identity of everything that shapes the partition; folded into fingerprints.
std::string data_context(const ExperimentConfig& cfg, const std::string& noise_kind) {
  json key{{"seed", cfg.seed},
           {"dataset", cfg.resolved.value("dataset", json::object())},
           {"noise", cfg.resolved.value("noise", json::object())},
           {"noise_kind", noise_kind}};
  return hex64(fnv1a(key.dump()));
}

std::string noise_name(const ExperimentConfig& cfg) { return cfg.noise ? (cfg.noise->kind == NoiseKind::ncar ? "ncar" : "rules") : "none"; }

std::vector<std::string> vanish_warnings(const TrialRecord& t) {
  std::vector<std::string> w;
  for (int c : t.vanished_classes) w.push_back("selected trial removed every training row of class " + std::to_string(c));
  return w;
}

MetricReport baseline_report(const Partition& part, const Baselines& b, const std::string& which, ValidationKind kind) {
  const SearchResult& r = which == "none" ? b.none : which == "random" ? b.random : which == "silver" ? b.silver : b.gold;
  const TrialRecord& t = r.trials.at(select_best(r.trials, kind));
  MetricReport m;
  m.detector = "baseline:" + which;
  m.handler = to_string(t.handler);
  m.mode = to_string(t.mode);
  m.validation_kind = to_string(kind);
  m.detection_auroc = t.detection_auroc;
  const int k = part.train.n_classes;
  m.class_balance_train = class_balance(part.train.noisy_labels, k);
  m.class_balance_filtered = t.class_balance_handled;
  m.class_balance_test = class_balance(part.test.has_clean() ? *part.test.clean_labels : part.test.noisy_labels, k);
  m.missing_class = m.class_balance_train == 0.0 || m.class_balance_filtered == 0.0 || m.class_balance_test == 0.0;
  m.selected_q = t.q;
  m.n_trusted = t.n_trusted;
  m.n_untrusted = t.n_untrusted;
  m.test_loss = t.losses.test;
  m.baselines = baseline_losses(b, kind);
  m.normalized = normalized_loss(m.test_loss, m.baselines.none, m.baselines.silver);
  m.normalized_random = normalized_loss(m.baselines.random, m.baselines.none, m.baselines.silver);
  m.normalized_gold = normalized_loss(m.baselines.gold, m.baselines.none, m.baselines.silver);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

ModelProbingDetector build_detector(const json& block, std::uint64_t default_seed) {
  if (block.is_string()) return preset(block.get<std::string>(), default_seed);
  const std::string where = "detector";
  std::vector<std::string_view> allowed{"preset", "model", "ensemble", "probe", "aggregate", "seed"};
  allowed.insert(allowed.end(), kModelKeys.begin(), kModelKeys.end());
  if (!block.is_object()) bad(where, "expected a preset name or a table");
  for (const auto& [key, _] : block.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) bad(where, "unknown key '" + key + "'");
  }
  const std::uint64_t seed = seed_of(block, "seed", default_seed, where);
  if (block.contains("preset")) {
    for (const char* k : {"model", "ensemble", "probe", "aggregate"}) {
      if (block.contains(k)) bad(where, std::string("'") + k + "' cannot be combined with 'preset'");
    }
    ModelProbingDetector d = preset(text(block, "preset", "", where), seed);
    if (has_model_override(block)) d = d.with_model(apply_overrides(d.model(), block, where));
    return d;
  }
  for (const char* k : {"model", "ensemble", "probe", "aggregate"}) {
    if (!block.contains(k)) bad(where, std::string("missing '") + k + "' (or give a preset)");
  }
  BaseModelSpec spec = BaseModelSpec::defaults(parse_model_family(text(block, "model", "", where)));
  spec = apply_overrides(spec, block, where);
  ModelProbingDetector d(spec, EnsembleStrategy::parse(text(block, "ensemble", "", where)),
                         parse_probe(text(block, "probe", "", where)),
                         parse_aggregator(text(block, "aggregate", "", where)));
  return d.with_seed(seed);
}

ExperimentConfig resolve_config(const json& input, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
  json doc = input;
  check_keys(doc, {"seed", "name", "out", "dataset", "noise", "detector", "estimator", "split", "pipeline", "search",
                   "benchmark"},
             "top level");
  if (seed) doc["seed"] = *seed;
  if (!doc.contains("seed")) throw Error("config: a master seed is required (`seed = <integer>` or --seed)");
  ExperimentConfig cfg;
  cfg.seed = seed_of(doc, "seed", 0, "top level");
  cfg.out = out ? *out : fs::path(text(doc, "out", "out", "top level"));
  json resolved = doc;
  resolved.erase("out");
  cfg.resolved = resolved;
  cfg.hash = hex64(fnv1a(resolved.dump()));

  // dataset
  const json d = doc.value("dataset", json::object());
  check_keys(d, {"name", "path", "synthetic", "seed", "n", "n_classes", "n_features", "radius", "spread", "priors",
                 "n_rules", "displacement", "rule_radius", "confuser_radius", "feature_map", "fractions", "id_column",
                 "label_column", "clean_label_column", "covered_column", "rule_prefix", "categorical"},
             "dataset");
  DatasetSource& src = cfg.dataset;
  if (d.contains("path")) {
    src.csv = fs::path(text(d, "path", "", "dataset"));
    src.schema.id_column = text(d, "id_column", src.schema.id_column, "dataset");
    src.schema.label_column = text(d, "label_column", src.schema.label_column, "dataset");
    src.schema.clean_label_column = text(d, "clean_label_column", src.schema.clean_label_column, "dataset");
    src.schema.covered_column = text(d, "covered_column", src.schema.covered_column, "dataset");
    src.schema.rule_prefix = text(d, "rule_prefix", src.schema.rule_prefix, "dataset");
    if (d.contains("categorical")) src.schema.categorical_columns = strings(d, "categorical", "dataset");
    if (d.contains("n_classes")) src.schema.n_classes = static_cast<int>(integer(d, "n_classes", 0, "dataset"));
  } else {
    src.synthetic = text(d, "synthetic", "blobs", "dataset");
    if (src.synthetic != "blobs" && src.synthetic != "rules") {
      bad("dataset", "unknown synthetic dataset '" + src.synthetic + "' (known: blobs, rules)");
    }
    if (src.synthetic == "blobs") src.task.blobs = BlobsConfig{};
    BlobsConfig& b = src.task.blobs;
    b.n = count(d, "n", b.n, "dataset");
    b.n_classes = static_cast<int>(integer(d, "n_classes", b.n_classes, "dataset"));
    b.n_features = static_cast<int>(integer(d, "n_features", b.n_features, "dataset"));
    b.radius = number(d, "radius", b.radius, "dataset");
    b.spread = number(d, "spread", b.spread, "dataset");
    if (d.contains("priors")) b.priors = numbers(d, "priors", "dataset");
    b.seed = seed_of(d, "seed", derive_seed(cfg.seed, 5), "dataset");
    src.task.n_rules = static_cast<int>(integer(d, "n_rules", src.task.n_rules, "dataset"));
    src.task.displacement = number(d, "displacement", src.task.displacement, "dataset");
    src.task.rule_radius = number(d, "rule_radius", src.task.rule_radius, "dataset");
    src.task.confuser_radius = number(d, "confuser_radius", src.task.confuser_radius, "dataset");
  }
  src.feature_map = parse_feature_map_kind(text(d, "feature_map", "standardize", "dataset"));
  if (d.contains("fractions")) {
    const auto f = numbers(d, "fractions", "dataset");
    if (f.size() != 3) bad("dataset", "'fractions' needs train, validation and test fractions");
    src.fractions = {f[0], f[1], f[2]};
  }
  src.name = text(doc, "name", text(d, "name", src.csv ? src.csv->stem().string() : src.synthetic, "dataset"),
                  "top level");

  // noise
  const json nz = doc.value("noise", json::object());
  check_keys(nz, {"kind", "rate", "allow_self_flip", "seed"}, "noise");
  const std::string kind = text(nz, "kind", "none", "noise");
  if (kind != "none") {
    NoiseSpec spec;
    if (kind == "ncar") {
      spec.kind = NoiseKind::ncar;
    } else if (kind == "rules") {
      spec.kind = NoiseKind::rules;
    } else {
      bad("noise", "unknown noise kind '" + kind + "' (known: none, ncar, rules)");
    }
    spec.rate = number(nz, "rate", 0.3, "noise");
    if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) bad("noise", "'rate' must be in [0, 1]");
    spec.allow_self_flip = flag(nz, "allow_self_flip", false, "noise");
    spec.seed = seed_of(nz, "seed", derive_seed(cfg.seed, 1), "noise");
    cfg.noise = spec;
  }

  // detector and estimator
  if (doc.contains("detector")) {
    cfg.detector = doc.at("detector");
    (void)build_detector(cfg.detector, cfg.seed);
  }
  const json e = doc.value("estimator", json::object());
  {
    std::vector<std::string_view> allowed{"family"};
    allowed.insert(allowed.end(), kModelKeys.begin(), kModelKeys.end());
    if (!e.is_object()) bad("estimator", "expected a table");
    for (const auto& [key, _] : e.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) bad("estimator", "unknown key '" + key + "'");
    }
  }
  cfg.estimator = apply_overrides(BaseModelSpec::defaults(parse_model_family(text(e, "family", "klm", "estimator"))), e,
                                  "estimator");

  // split, pipeline, search
  const json sp = doc.value("split", json::object());
  check_keys(sp, {"mode", "grid"}, "split");
  cfg.search.mode = parse_split_mode(text(sp, "mode", "global", "split"));
  if (sp.contains("grid")) {
    cfg.search.grid = numbers(sp, "grid", "split");
    for (double q : cfg.search.grid) {
      const bool on_grid = std::any_of(kQuantileGrid.begin(), kQuantileGrid.end(), [&](double g) { return g == q; });
      if (!on_grid) bad("split", "quantile " + format_double(q) + " is not on the grid 0, 0.1, ..., 0.9");
    }
  }
  const json pl = doc.value("pipeline", json::object());
  check_keys(pl, {"handler", "validation"}, "pipeline");
  cfg.search.handler = parse_handler(text(pl, "handler", "filter", "pipeline"));
  cfg.search.validation_kind = parse_validation_kind(text(pl, "validation", "noisy", "pipeline"));
  const json se = doc.value("search", json::object());
  check_keys(se, {"detector_draws", "estimator_draws", "search_detector", "search_estimator"}, "search");
  cfg.search.budget.detector_draws = count(se, "detector_draws", 12, "search");
  cfg.search.budget.estimator_draws = count(se, "estimator_draws", 12, "search");
  if (cfg.search.budget.detector_draws == 0 || cfg.search.budget.estimator_draws == 0) {
    bad("search", "draw counts must be positive");
  }
  cfg.search.search_detector = flag(se, "search_detector", true, "search");
  cfg.search.search_estimator = flag(se, "search_estimator", true, "search");
  cfg.search.seed = derive_seed(cfg.seed, 4);

  // benchmark matrix
  const json bm = doc.value("benchmark", json::object());
  check_keys(bm, {"detectors", "noise", "validation", "handlers"}, "benchmark");
  if (bm.contains("detectors")) {
    if (!bm.at("detectors").is_array()) bad("benchmark", "'detectors' must be an array");
    for (const auto& b : bm.at("detectors")) {
      (void)build_detector(b, cfg.seed);
      cfg.bench_detectors.push_back(b);
    }
  } else if (!cfg.detector.is_null()) {
    cfg.bench_detectors.push_back(cfg.detector);
  }
  cfg.bench_noise = bm.contains("noise") ? strings(bm, "noise", "benchmark") : std::vector<std::string>{noise_name(cfg)};
  for (const auto& n : cfg.bench_noise) {
    if (n != "none" && n != "ncar" && n != "rules") bad("benchmark", "unknown noise kind '" + n + "'");
  }
  if (bm.contains("validation")) {
    for (const auto& v : strings(bm, "validation", "benchmark")) cfg.bench_validation.push_back(parse_validation_kind(v));
  } else {
    cfg.bench_validation = {cfg.search.validation_kind};
  }
  if (bm.contains("handlers")) {
    for (const auto& h : strings(bm, "handlers", "benchmark")) cfg.bench_handlers.push_back(parse_handler(h));
  } else {
    cfg.bench_handlers = {cfg.search.handler};
  }
  return cfg;
}

Dataset load_source(const DatasetSource& src, std::uint64_t) {
  if (src.csv) return load_csv(*src.csv, src.schema);
  if (src.synthetic == "rules") return make_rule_task(src.task);
  return make_blobs(src.task.blobs);
}

Dataset noisy_dataset(const ExperimentConfig& cfg, const std::string& noise_kind) {
  Dataset base = load_source(cfg.dataset, cfg.seed);
  const std::string kind = noise_kind.empty() ? noise_name(cfg) : noise_kind;
  if (kind == "none") return base;
  NoiseSpec spec = cfg.noise.value_or(NoiseSpec{.kind = NoiseKind::ncar, .rate = 0.3, .seed = derive_seed(cfg.seed, 1)});
  spec.kind = kind == "ncar" ? NoiseKind::ncar : NoiseKind::rules;
  return apply_noise(base, spec);
}

json provenance(const ExperimentConfig& cfg, std::string_view command) {
  return {{"tool", "labelprobe"}, {"version", kVersion}, {"command", command}, {"config_hash", cfg.hash}, {"seed", cfg.seed}};
}

std::vector<std::string> provenance_comments(const ExperimentConfig& cfg, std::string_view command) {
  return {"labelprobe " + std::string(kVersion) + " " + std::string(command), "config_hash " + cfg.hash,
          "seed " + std::to_string(cfg.seed)};
}

unsigned resolve_workers(std::optional<unsigned> flag_value) {
  if (flag_value) return std::max(1u, *flag_value);
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw Error(std::string(kWorkersEnv) + " must be a positive integer, got '" + env + "'");
  }
  return 1;
}

// ---------------------------------------------------------------------------

int cmd_inject_noise(const ExperimentConfig& cfg) {
  if (!cfg.noise) throw Error("inject-noise needs a [noise] table with kind ncar or rules");
  Dataset base = load_source(cfg.dataset, cfg.seed);
  std::vector<bool> covered;
  TransitionMatrix transition;
  const Dataset noisy = apply_noise(base, *cfg.noise, &covered, &transition);
  // Every input row is written; uncovered ones carry label -1 and covered 0.
  Dataset full = base;
  full.clean_labels = base.noisy_labels;
  std::size_t next = 0;
  for (std::size_t i = 0; i < full.size(); ++i) full.noisy_labels[i] = covered[i] ? noisy.noisy_labels[next++] : kAbstain;
  fs::create_directories(cfg.out);
  write_csv(full, cfg.out / "noisy.csv", provenance_comments(cfg, "inject-noise"), &covered);
  json t = transition.to_json();
  t["provenance"] = provenance(cfg, "inject-noise");
  write_json(cfg.out / "transition.json", t);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) flipped += noisy.noisy_labels[i] != (*noisy.clean_labels)[i];
  std::cout << "rows " << full.size() << ", covered " << noisy.size() << ", noisy " << flipped << "\n";
  return 0;
}

int cmd_detect(const ExperimentConfig& cfg) {
  if (cfg.detector.is_null()) throw Error("detect needs a detector block");
  const ModelProbingDetector det = build_detector(cfg.detector, cfg.seed);
  const Dataset ds = noisy_dataset(cfg);
  const FeatureMap map = fit_feature_map(ds, cfg.dataset.feature_map, derive_seed(cfg.seed, 3));
  const Matrix x = map.transform(ds);
  for (const auto& w : det.warnings()) std::cerr << "warning: " << w << "\n";
  const TrustScores ts = det.trust_scores(x, ds.noisy_labels, ds.n_classes);

  const auto n = ds.size();
  std::vector<std::size_t> order = iota_indices(n);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ts.scores(static_cast<Eigen::Index>(a)) < ts.scores(static_cast<Eigen::Index>(b));
  });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r + 1;  // 1 = least trusted
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back({ds.example_ids[i], format_double(ts.scores(static_cast<Eigen::Index>(i))), std::to_string(rank[i])});
  }
  auto comments = provenance_comments(cfg, "detect");
  comments.push_back("detector " + det.canonical());
  comments.push_back("fingerprint " + ts.fingerprint);
  fs::create_directories(cfg.out);
  write_table(cfg.out / "trust_scores.csv", comments, {"id", "score", "rank"}, rows);
  std::cout << "fingerprint " << ts.fingerprint << "\n";
  if (ts.imputed > 0) std::cout << "imputed " << ts.imputed << " rows with the median score\n";
  if (ds.has_clean()) {
    const auto mask = ds.mislabeled_mask();
    const auto bad_rows = std::count(mask.begin(), mask.end(), true);
    if (bad_rows > 0 && static_cast<std::size_t>(bad_rows) < n) {
      std::cout << "detection auroc " << format_double(detection_auroc(ts.scores, mask)) << "\n";
    }
  }
  return 0;
}

int cmd_pipeline(const ExperimentConfig& cfg) {
  if (cfg.detector.is_null()) throw Error("pipeline needs a detector block");
  const ModelProbingDetector det = build_detector(cfg.detector, cfg.seed);
  const Dataset ds = noisy_dataset(cfg);
  const ValidationKind kind = cfg.search.validation_kind;
  const Partition part = build_partition(cfg, ds, kind);
  SearchConfig sc = cfg.search;
  sc.context = data_context(cfg, noise_name(cfg));

  fs::create_directories(cfg.out);
  TrialLog log(cfg.out / "trials.jsonl", provenance(cfg, "pipeline"));
  const SearchResult res = random_search(part, det, cfg.estimator, sc, &log.cache(), log.sink());
  const Baselines base = compute_baselines(part, cfg.estimator, sc, &log.cache(), log.sink());
  log.finalize({&res, &base.none, &base.silver, &base.gold, &base.random});

  MetricReport report = make_report(part, res, base, kind);
  report.dataset = cfg.dataset.name + ":" + noise_name(cfg);
  const TrialRecord& best = res.trials.at(select_best(res.trials, kind));
  json warnings = det.warnings();
  for (const auto& w : vanish_warnings(best)) warnings.push_back(w);
  std::size_t computed = res.computed + base.none.computed + base.silver.computed + base.gold.computed + base.random.computed;
  json doc{{"provenance", provenance(cfg, "pipeline")},
           {"detector", det.to_json()},
           {"report", report.to_json()},
           {"selected_trial", best.to_json()},
           {"warnings", warnings},
           {"trials", res.trials.size()}};
  write_json(cfg.out / "report.json", doc);
  write_table(cfg.out / "report.csv", provenance_comments(cfg, "pipeline"), MetricReport::csv_header(),
              {report.csv_row()});
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
  std::cout << "selected q " << format_double(report.selected_q) << ", test loss " << format_double(report.test_loss);
  if (report.normalized) std::cout << ", normalized " << format_double(*report.normalized);
  std::cout << "\ncomputed " << computed << " trials\n";
  return 0;
}

int cmd_benchmark(const ExperimentConfig& cfg, unsigned workers) {
  if (cfg.bench_detectors.empty()) throw Error("benchmark needs [benchmark] detectors or a detector block");
  const bool want_clean = std::find(cfg.bench_validation.begin(), cfg.bench_validation.end(), ValidationKind::clean) !=
                          cfg.bench_validation.end();
  fs::create_directories(cfg.out / "trials");

  std::vector<Partition> parts;
  for (const auto& n : cfg.bench_noise) {
    parts.push_back(build_partition(cfg, noisy_dataset(cfg, n), want_clean ? ValidationKind::clean : ValidationKind::noisy));
  }
  std::vector<ModelProbingDetector> dets;
  std::vector<std::string> labels;
  for (std::size_t d = 0; d < cfg.bench_detectors.size(); ++d) {
    dets.push_back(build_detector(cfg.bench_detectors[d], cfg.seed));
    std::string label = dets.back().preset_name().empty() ? "custom" : dets.back().preset_name();
    labels.push_back(label + "-" + std::to_string(d));
  }

  // One unit per (noise, handler) for the baselines and per detector.
  struct Unit {
    std::size_t noise, handler;
    std::optional<std::size_t> detector;
    std::string id;
  };
  std::vector<Unit> units;
  for (std::size_t n = 0; n < cfg.bench_noise.size(); ++n) {
    for (std::size_t h = 0; h < cfg.bench_handlers.size(); ++h) {
      const std::string stem = cfg.bench_noise[n] + "." + to_string(cfg.bench_handlers[h]);
      units.push_back({n, h, std::nullopt, safe_name(stem + ".baselines")});
      for (std::size_t d = 0; d < dets.size(); ++d) units.push_back({n, h, d, safe_name(stem + "." + labels[d])});
    }
  }
  std::vector<std::optional<SearchResult>> searches(units.size());
  std::vector<std::optional<Baselines>> baselines(units.size());
  std::vector<std::string> errors(units.size());
  std::vector<std::size_t> computed(units.size(), 0);

  const auto run_unit = [&](std::size_t u) {
    const Unit& unit = units[u];
    SearchConfig sc = cfg.search;
    sc.handler = cfg.bench_handlers[unit.handler];
    sc.context = data_context(cfg, cfg.bench_noise[unit.noise]);
    TrialLog log(cfg.out / "trials" / (unit.id + ".jsonl"), provenance(cfg, "benchmark"));
    if (unit.detector) {
      searches[u] = random_search(parts[unit.noise], dets[*unit.detector], cfg.estimator, sc, &log.cache(), log.sink());
      log.finalize({&*searches[u]});
      computed[u] = searches[u]->computed;
    } else {
      baselines[u] = compute_baselines(parts[unit.noise], cfg.estimator, sc, &log.cache(), log.sink());
      const Baselines& b = *baselines[u];
      log.finalize({&b.none, &b.silver, &b.gold, &b.random});
      computed[u] = b.none.computed + b.silver.computed + b.gold.computed + b.random.computed;
    }
  };

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t u = next++; u < units.size(); u = next++) {
      try {
        run_unit(u);
      } catch (const std::exception& e) {
        errors[u] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(units.size())));
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Single writer, fixed order.
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> failed;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (!errors[u].empty()) failed.push_back(units[u].id + ": " + errors[u]);
  }
  for (std::size_t u = 0; u < units.size(); ++u) {
    const Unit& unit = units[u];
    if (unit.detector) continue;
    if (!baselines[u]) continue;
    const Partition& part = parts[unit.noise];
    const std::string dataset = cfg.dataset.name + ":" + cfg.bench_noise[unit.noise];
    for (ValidationKind kind : cfg.bench_validation) {
      for (std::size_t v = u + 1; v < units.size() && units[v].detector; ++v) {
        if (!searches[v]) continue;
        MetricReport r = make_report(part, *searches[v], *baselines[u], kind);
        r.dataset = dataset;
        r.detector = labels[*units[v].detector];
        rows.push_back(r.csv_row());
      }
      for (const char* which : {"none", "random", "silver", "gold"}) {
        MetricReport r = baseline_report(part, *baselines[u], which, kind);
        r.dataset = dataset;
        rows.push_back(r.csv_row());
      }
    }
  }
  write_table(cfg.out / "results.csv", provenance_comments(cfg, "benchmark"), MetricReport::csv_header(), rows);
  std::size_t total = 0;
  for (auto c : computed) total += c;
  std::cout << "units " << units.size() << ", computed " << total << " trials, rows " << rows.size() << "\n";
  for (const auto& f : failed) std::cerr << "failed cell " << f << "\n";
  return failed.empty() ? 0 : 1;
}

int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw Error("report: no such input " + in.string());
    }
  }
  if (files.empty()) throw Error("report: no trial logs found");
  std::vector<std::string> comments{"labelprobe " + std::string(kVersion) + " report"};
  std::vector<std::vector<std::string>> rows;
  const auto opt = [](const json& v) { return v.is_null() ? std::string() : format_double(v.get<double>()); };
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    const std::string unit = f.stem().string();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json doc = json::parse(line, nullptr, false);
      if (doc.is_discarded()) continue;
      if (doc.contains("provenance")) {
        const json& p = doc.at("provenance");
        comments.push_back(unit + " config_hash " + p.value("config_hash", "") + " seed " +
                           std::to_string(p.value("seed", std::uint64_t{0})));
        continue;
      }
      const TrialRecord t = TrialRecord::from_json(doc);
      const BaseModelSpec est = BaseModelSpec::from_json(t.estimator);
      std::string per_class;
      for (std::size_t c = 0; c < t.trusted_per_class.size(); ++c) {
        per_class += (c ? ";" : "") + std::to_string(t.trusted_per_class[c]);
      }
      const std::string fp = t.detector.is_object() ? t.detector.value("fingerprint", "") : "";
      rows.push_back({unit, t.source, std::to_string(t.detector_index), std::to_string(t.estimator_index), fp,
                      est.canonical(), format_double(t.q), to_string(t.mode), to_string(t.handler),
                      format_double(t.losses.validation_noisy),
                      t.losses.validation_clean ? format_double(*t.losses.validation_clean) : "",
                      format_double(t.losses.test), std::to_string(t.n_trusted), std::to_string(t.n_untrusted),
                      per_class, std::to_string(t.vanished_classes.size()), format_double(t.class_balance_handled),
                      opt(doc.at("detection_auroc")), t.fingerprint});
    }
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_table(out, comments,
              {"unit", "source", "detector_index", "estimator_index", "detector_fingerprint", "estimator", "q", "mode",
               "handler", "validation_noisy", "validation_clean", "test", "n_trusted", "n_untrusted",
               "trusted_per_class", "vanished_classes", "balance_handled", "auroc", "fingerprint"},
              rows);
  std::cout << "rows " << rows.size() << " from " << files.size() << " logs\n";
  return 0;
}

}  // namespace labelprobe::cli
