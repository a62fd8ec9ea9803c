#include "labelprobe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "labelprobe/metrics.hpp"

namespace labelprobe {

std::string to_string(SplitMode mode) { return mode == SplitMode::global ? "global" : "per_class"; }

SplitMode parse_split_mode(std::string_view name) {
  if (name == "global") return SplitMode::global;
  if (name == "per_class") return SplitMode::per_class;
  throw Error("unknown split mode '" + std::string(name) + "' (known: global, per_class)");
}

std::string to_string(Handler h) { return h == Handler::filter ? "filter" : "relabel"; }

Handler parse_handler(std::string_view name) {
  if (name == "filter") return Handler::filter;
  if (name == "relabel") return Handler::relabel;
  throw Error("unknown handler '" + std::string(name) + "' (known: filter, relabel)");
}

namespace {

// floor(q * n), robust to grid values like 0.7 that are not exact in binary.
std::size_t untrusted_count(double q, std::size_t n) {
  return static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
}

void mark_lowest(const Vector& scores, std::vector<std::size_t> group, std::size_t count, std::vector<char>& out) {
  std::stable_sort(group.begin(), group.end(),
                   [&](std::size_t a, std::size_t b) { return scores(static_cast<Eigen::Index>(a)) < scores(static_cast<Eigen::Index>(b)); });
  for (std::size_t i = 0; i < count; ++i) out[group[i]] = 1;
}

}  // namespace

SplitResult split(const Vector& scores, const SplitConfig& cfg, std::span<const int> labels, int n_classes) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (labels.size() != n) {
    throw Error("split: " + std::to_string(n) + " scores but " + std::to_string(labels.size()) + " labels");
  }
  if (!(cfg.q >= 0.0 && cfg.q < 1.0)) throw Error("split: quantile " + format_double(cfg.q) + " outside [0, 1)");
  if (!scores.allFinite()) throw Error("split: scores must be finite");
  std::vector<char> untrusted(n, 0);
  if (cfg.mode == SplitMode::global) {
    mark_lowest(scores, iota_indices(n), untrusted_count(cfg.q, n), untrusted);
  } else {
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= n_classes) throw Error("split: label out of range at row " + std::to_string(i));
      groups[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (auto& g : groups) {
      const std::size_t count = untrusted_count(cfg.q, g.size());
      mark_lowest(scores, std::move(g), count, untrusted);
    }
  }
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) (untrusted[i] ? out.untrusted : out.trusted).push_back(i);
  return out;
}

SplitResult split(const TrustScores& scores, const SplitConfig& cfg, std::span<const int> labels, int n_classes) {
  return split(scores.scores, cfg, labels, n_classes);
}

Dataset handle_filter(const Dataset& ds, const SplitResult& s, HandleReport* report) {
  if (s.trusted.size() + s.untrusted.size() != ds.size()) throw Error("filter: split does not cover the dataset");
  Dataset out = ds.subset(s.trusted);
  const auto before = class_counts(ds.noisy_labels, ds.n_classes);
  const auto after = class_counts(out.noisy_labels, ds.n_classes);
  for (int c = 0; c < ds.n_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    if (before[k] > 0 && after[k] == 0 && report) {
      report->vanished_classes.push_back(c);
      report->warnings.push_back("filter removed every row of class " + std::to_string(c));
    }
  }
  return out;
}

Dataset handle_relabel(const Dataset& ds, const SplitResult& s) {
  if (!ds.has_clean()) throw Error("relabel needs clean labels to act as the reviewer");
  if (s.trusted.size() + s.untrusted.size() != ds.size()) throw Error("relabel: split does not cover the dataset");
  Dataset out = ds;
  for (std::size_t i : s.untrusted) out.noisy_labels[i] = (*ds.clean_labels)[i];
  return out;
}

Dataset handle(Handler h, const Dataset& ds, const SplitResult& s, HandleReport* report) {
  return h == Handler::filter ? handle_filter(ds, s, report) : handle_relabel(ds, s);
}

Losses evaluate_losses(const FittedModel& model, const Partition& part) {
  if (part.validation.size() == 0) throw Error("empty validation split");
  Losses out;
  const Matrix pv = model.predict_proba(part.validation.features);
  out.validation_noisy = log_loss(pv, part.validation.noisy_labels);
  if (part.validation.has_clean()) out.validation_clean = log_loss(pv, *part.validation.clean_labels);
  if (part.test.size() > 0) {
    const Matrix pt = model.predict_proba(part.test.features);
    out.test = log_loss(pt, part.test.has_clean() ? *part.test.clean_labels : part.test.noisy_labels);
  }
  return out;
}

double selection_loss(const Losses& losses, ValidationKind kind) {
  switch (kind) {
    case ValidationKind::noisy: return losses.validation_noisy;
    case ValidationKind::clean:
      if (!losses.validation_clean) throw Error("clean validation requires clean labels");
      return *losses.validation_clean;
    case ValidationKind::oracle: return losses.test;
  }
  return losses.validation_noisy;
}

namespace {

PipelineResult train_and_evaluate(const Partition& part, Dataset handled, const BaseModelSpec& estimator) {
  PipelineResult r;
  r.class_balance_train = class_balance(part.train.noisy_labels, part.train.n_classes);
  r.class_balance_handled = class_balance(handled.noisy_labels, part.train.n_classes);
  r.rows_trained = handled.size();
  if (handled.size() == 0) throw Error("handled training set is empty");
  const ModelPtr model = fit(estimator, handled.features, handled.noisy_labels, part.train.n_classes);
  r.losses = evaluate_losses(*model, part);
  return r;
}

}  // namespace

PipelineResult run_from_scores(const Partition& part, const Vector& scores, const SplitConfig& cfg, Handler handler,
                               const BaseModelSpec& estimator) {
  SplitResult s = split(scores, cfg, part.train.noisy_labels, part.train.n_classes);
  HandleReport report;
  Dataset handled = handle(handler, part.train, s, &report);
  PipelineResult r = train_and_evaluate(part, std::move(handled), estimator);
  r.trusted_per_class.assign(static_cast<std::size_t>(part.train.n_classes), 0);
  for (std::size_t i : s.trusted) ++r.trusted_per_class[static_cast<std::size_t>(part.train.noisy_labels[i])];
  r.split = std::move(s);
  r.handle = std::move(report);
  return r;
}

PipelineResult run_pipeline(const Partition& part, const ModelProbingDetector& detector, const SplitConfig& cfg,
                            Handler handler, const BaseModelSpec& estimator, std::uint64_t seed) {
  const ModelProbingDetector det = detector.with_seed(derive_seed(seed, 1));
  BaseModelSpec est = estimator;
  est.seed = derive_seed(seed, 2);
  const TrustScores ts = det.trust_scores(part.train.features, part.train.noisy_labels, part.train.n_classes);
  return run_from_scores(part, ts.scores, cfg, handler, est);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json losses_json(const Losses& l) {
  nlohmann::json j{{"validation_noisy", l.validation_noisy}, {"test", l.test}};
  j["validation_clean"] = l.validation_clean ? nlohmann::json(*l.validation_clean) : nlohmann::json(nullptr);
  return j;
}

std::string trial_fingerprint(const SearchConfig& cfg, const std::string& source, const std::string& detector,
                              const BaseModelSpec& est, double q) {
  std::ostringstream s;
  s.precision(17);
  s << cfg.context << "|" << source << "|" << detector << "|" << est.canonical() << "|q=" << q << "|"
    << to_string(cfg.mode) << "|" << to_string(cfg.handler);
  return hex64(fnv1a(s.str()));
}

TrialRecord make_record(const std::string& source, std::size_t i, std::size_t j, const nlohmann::json& detector,
                        const BaseModelSpec& est, double q, const SearchConfig& cfg, const PipelineResult& r,
                        std::string fingerprint) {
  TrialRecord t;
  t.source = source;
  t.detector_index = i;
  t.estimator_index = j;
  t.detector = detector;
  t.estimator = est.to_json();
  t.q = q;
  t.mode = cfg.mode;
  t.handler = cfg.handler;
  t.losses = r.losses;
  t.n_trusted = r.split.trusted.size();
  t.n_untrusted = r.split.untrusted.size();
  t.trusted_per_class = r.trusted_per_class;
  t.vanished_classes = r.handle.vanished_classes;
  t.class_balance_handled = r.class_balance_handled;
  t.seed = cfg.seed;
  t.fingerprint = std::move(fingerprint);
  return t;
}

std::optional<double> draw_auroc(const Dataset& train, const Vector& scores) {
  if (!train.has_clean()) return std::nullopt;
  const auto mask = train.mislabeled_mask();
  const auto bad = std::count(mask.begin(), mask.end(), true);
  if (bad == 0 || static_cast<std::size_t>(bad) == mask.size()) return std::nullopt;
  return detection_auroc(scores, mask);
}

void check_finite(const TrialRecord& t) {
  const bool ok = std::isfinite(t.losses.validation_noisy) && std::isfinite(t.losses.test) &&
                  (!t.losses.validation_clean || std::isfinite(*t.losses.validation_clean));
  if (!ok) throw Error("trial " + t.fingerprint + " produced a non-finite loss");
}

SearchResult finish(std::vector<TrialRecord> trials, std::size_t computed, const SearchConfig& cfg) {
  if (trials.empty()) throw Error("search produced no trials");
  SearchResult out;
  out.best = select_best(trials, cfg.validation_kind);
  out.trials = std::move(trials);
  out.computed = computed;
  return out;
}

}  // namespace

nlohmann::json TrialRecord::to_json() const {
  return {{"source", source},
          {"detector_index", detector_index},
          {"estimator_index", estimator_index},
          {"detector", detector},
          {"estimator", estimator},
          {"q", q},
          {"mode", labelprobe::to_string(mode)},
          {"handler", labelprobe::to_string(handler)},
          {"losses", losses_json(losses)},
          {"n_trusted", n_trusted},
          {"n_untrusted", n_untrusted},
          {"trusted_per_class", trusted_per_class},
          {"vanished_classes", vanished_classes},
          {"class_balance_handled", class_balance_handled},
          {"detection_auroc", detection_auroc ? nlohmann::json(*detection_auroc) : nlohmann::json(nullptr)},
          {"seed", seed},
          {"fingerprint", fingerprint}};
}

TrialRecord TrialRecord::from_json(const nlohmann::json& doc) {
  TrialRecord t;
  t.source = doc.at("source").get<std::string>();
  t.detector_index = doc.at("detector_index").get<std::size_t>();
  t.estimator_index = doc.at("estimator_index").get<std::size_t>();
  t.detector = doc.at("detector");
  t.estimator = doc.at("estimator");
  t.q = doc.at("q").get<double>();
  t.mode = parse_split_mode(doc.at("mode").get<std::string>());
  t.handler = parse_handler(doc.at("handler").get<std::string>());
  const auto& l = doc.at("losses");
  t.losses.validation_noisy = l.at("validation_noisy").get<double>();
  t.losses.test = l.at("test").get<double>();
  if (!l.at("validation_clean").is_null()) t.losses.validation_clean = l.at("validation_clean").get<double>();
  t.n_trusted = doc.at("n_trusted").get<std::size_t>();
  t.n_untrusted = doc.at("n_untrusted").get<std::size_t>();
  t.trusted_per_class = doc.at("trusted_per_class").get<std::vector<std::size_t>>();
  t.vanished_classes = doc.at("vanished_classes").get<std::vector<int>>();
  t.class_balance_handled = doc.at("class_balance_handled").get<double>();
  if (!doc.at("detection_auroc").is_null()) t.detection_auroc = doc.at("detection_auroc").get<double>();
  t.seed = doc.at("seed").get<std::uint64_t>();
  t.fingerprint = doc.at("fingerprint").get<std::string>();
  return t;
}

std::size_t select_best(const std::vector<TrialRecord>& trials, ValidationKind kind) {
  if (trials.empty()) throw Error("select_best: no trials");
  std::size_t best = 0;
  double best_loss = selection_loss(trials[0].losses, kind);
  for (std::size_t t = 1; t < trials.size(); ++t) {
    const double loss = selection_loss(trials[t].losses, kind);
    if (loss < best_loss || (loss == best_loss && trials[t].q < trials[best].q)) {
      best = t;
      best_loss = loss;
    }
  }
  return best;
}

BaseModelSpec estimator_draw(const BaseModelSpec& base, std::size_t j, const SearchConfig& cfg) {
  BaseModelSpec s = base;
  if (cfg.search_estimator) {
    Rng rng(derive_seed(cfg.seed, 0xe500 + j));
    s = sample_hyperparameters(base, rng);
  }
  s.seed = derive_seed(cfg.seed, 0xe5000 + j);
  return s;
}

ModelProbingDetector detector_draw(const ModelProbingDetector& base, std::size_t i, const SearchConfig& cfg) {
  ModelProbingDetector d = base.with_seed(derive_seed(cfg.seed, 0xde000 + i));
  if (cfg.search_detector) {
    Rng rng(derive_seed(cfg.seed, 0xde00 + i));
    d = d.with_model(sample_hyperparameters(d.model(), rng));
  }
  return d;
}

SearchResult search_scores(const Partition& part, const std::string& source, const ScoreSource& scores,
                           const std::function<nlohmann::json(std::size_t)>& describe,
                           const BaseModelSpec& estimator, const SearchConfig& cfg, const TrialCache* cache,
                           const TrialSink& sink) {
  if (part.validation.size() == 0) throw Error("empty validation split");
  if (cfg.grid.empty()) throw Error("search: empty quantile grid");
  std::vector<BaseModelSpec> estimators;
  for (std::size_t j = 0; j < cfg.budget.estimator_draws; ++j) estimators.push_back(estimator_draw(estimator, j, cfg));

  std::vector<TrialRecord> trials;
  std::size_t computed = 0;
  for (std::size_t i = 0; i < cfg.budget.detector_draws; ++i) {
    const nlohmann::json det = describe(i);
    const std::string det_text = det.dump();
    std::optional<Vector> s;  // computed only when some trial is missing
    std::optional<double> auroc;
    for (std::size_t j = 0; j < estimators.size(); ++j) {
      for (double q : cfg.grid) {
        std::string fp = trial_fingerprint(cfg, source, det_text, estimators[j], q);
        if (cache) {
          if (auto it = cache->find(fp); it != cache->end()) {
            trials.push_back(it->second);
            continue;
          }
        }
        if (!s) {
          s = scores(i);
          auroc = draw_auroc(part.train, *s);
        }
        const PipelineResult r = run_from_scores(part, *s, {q, cfg.mode}, cfg.handler, estimators[j]);
        TrialRecord t = make_record(source, i, j, det, estimators[j], q, cfg, r, std::move(fp));
        t.detection_auroc = auroc;
        check_finite(t);
        if (sink) sink(t);
        trials.push_back(std::move(t));
        ++computed;
      }
    }
  }
  return finish(std::move(trials), computed, cfg);
}

SearchResult random_search(const Partition& part, const ModelProbingDetector& detector,
                           const BaseModelSpec& estimator, const SearchConfig& cfg, const TrialCache* cache,
                           const TrialSink& sink) {
  const auto score = [&](std::size_t i) {
    const ModelProbingDetector d = detector_draw(detector, i, cfg);
    return d.trust_scores(part.train.features, part.train.noisy_labels, part.train.n_classes).scores;
  };
  const auto describe = [&](std::size_t i) { return detector_draw(detector, i, cfg).to_json(); };
  const std::string source = detector.preset_name().empty() ? "detector" : detector.preset_name();
  return search_scores(part, source, score, describe, estimator, cfg, cache, sink);
}

SearchResult search_estimator(const Partition& part, const Dataset& train, const std::string& source,
                              const BaseModelSpec& estimator, const SearchConfig& cfg, const TrialCache* cache,
                              const TrialSink& sink) {
  if (part.validation.size() == 0) throw Error("empty validation split");
  std::vector<TrialRecord> trials;
  std::size_t computed = 0;
  // The row set is part of the identity of these trials.
  std::string rows_key;
  {
    std::ostringstream s;
    for (std::size_t i = 0; i < train.size(); ++i) s << train.example_ids[i] << ":" << train.noisy_labels[i] << ",";
    rows_key = hex64(fnv1a(s.str()));
  }
  for (std::size_t j = 0; j < cfg.budget.estimator_draws; ++j) {
    const BaseModelSpec est = estimator_draw(estimator, j, cfg);
    std::string fp = trial_fingerprint(cfg, source, rows_key, est, 0.0);
    if (cache) {
      if (auto it = cache->find(fp); it != cache->end()) {
        trials.push_back(it->second);
        continue;
      }
    }
    PipelineResult r = train_and_evaluate(part, train, est);
    r.split.trusted = iota_indices(train.size());
    r.trusted_per_class = class_counts(train.noisy_labels, train.n_classes);
    TrialRecord t = make_record(source, 0, j, nullptr, est, 0.0, cfg, r, std::move(fp));
    t.n_untrusted = part.train.size() > train.size() ? part.train.size() - train.size() : 0;
    check_finite(t);
    if (sink) sink(t);
    trials.push_back(std::move(t));
    ++computed;
  }
  return finish(std::move(trials), computed, cfg);
}

}  // namespace labelprobe
