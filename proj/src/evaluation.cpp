#include "labelprobe/evaluation.hpp"

#include <algorithm>

#include "labelprobe/metrics.hpp"

namespace labelprobe {

Baselines compute_baselines(const Partition& part, const BaseModelSpec& estimator, const SearchConfig& cfg,
                            const TrialCache* cache, const TrialSink& sink) {
  if (!part.train.has_clean()) throw Error("baselines need clean training labels");
  Baselines b;
  b.none = search_estimator(part, part.train, "none", estimator, cfg, cache, sink);

  std::vector<std::size_t> genuine;
  const auto mask = part.train.mislabeled_mask();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) genuine.push_back(i);
  }
  b.silver = search_estimator(part, part.train.subset(genuine), "silver", estimator, cfg, cache, sink);

  Dataset gold = part.train;
  gold.noisy_labels = *gold.clean_labels;
  b.gold = search_estimator(part, gold, "gold", estimator, cfg, cache, sink);

  const auto n = static_cast<Eigen::Index>(part.train.size());
  const auto scores = [&](std::size_t i) {
    Rng rng(derive_seed(cfg.seed, 0x7a00 + i));
    Vector v(n);
    for (Eigen::Index r = 0; r < n; ++r) v(r) = uniform01(rng);
    return v;
  };
  const auto describe = [](std::size_t i) { return nlohmann::json{{"random", i}}; };
  b.random = search_scores(part, "random", scores, describe, estimator, cfg, cache, sink);
  return b;
}

BaselineLosses baseline_losses(const Baselines& b, ValidationKind kind) {
  const auto pick = [&](const SearchResult& r) { return r.trials[select_best(r.trials, kind)].losses.test; };
  return {pick(b.none), pick(b.random), pick(b.silver), pick(b.gold)};
}

MetricReport make_report(const Partition& part, const SearchResult& pipeline, const Baselines& baselines,
                         ValidationKind kind) {
  const TrialRecord& best = pipeline.trials.at(select_best(pipeline.trials, kind));
  MetricReport r;
  r.detector = best.source;
  if (best.detector.is_object() && best.detector.contains("fingerprint")) {
    r.detector_fingerprint = best.detector.at("fingerprint").get<std::string>();
  }
  r.handler = to_string(best.handler);
  r.mode = to_string(best.mode);
  r.validation_kind = to_string(kind);
  r.detection_auroc = best.detection_auroc;
  const int k = part.train.n_classes;
  r.class_balance_train = class_balance(part.train.noisy_labels, k);
  r.class_balance_filtered = best.class_balance_handled;
  const Labels& test_labels = part.test.has_clean() ? *part.test.clean_labels : part.test.noisy_labels;
  r.class_balance_test = class_balance(test_labels, k);
  r.missing_class = r.class_balance_train == 0.0 || r.class_balance_filtered == 0.0 || r.class_balance_test == 0.0;
  r.selected_q = best.q;
  r.n_trusted = best.n_trusted;
  r.n_untrusted = best.n_untrusted;
  r.test_loss = best.losses.test;
  r.baselines = baseline_losses(baselines, kind);
  r.normalized = normalized_loss(r.test_loss, r.baselines.none, r.baselines.silver);
  r.normalized_random = normalized_loss(r.baselines.random, r.baselines.none, r.baselines.silver);
  r.normalized_gold = normalized_loss(r.baselines.gold, r.baselines.none, r.baselines.silver);
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

nlohmann::json MetricReport::to_json() const {
  return {{"dataset", dataset},
          {"detector", detector},
          {"detector_fingerprint", detector_fingerprint},
          {"handler", handler},
          {"mode", mode},
          {"validation_kind", validation_kind},
          {"detection_auroc", opt(detection_auroc)},
          {"class_balance", {{"train", class_balance_train}, {"filtered", class_balance_filtered}, {"test", class_balance_test}}},
          {"missing_class", missing_class},
          {"selected_q", selected_q},
          {"n_trusted", n_trusted},
          {"n_untrusted", n_untrusted},
          {"test_loss", test_loss},
          {"normalized_loss", opt(normalized)},
          {"baselines",
           {{"none", baselines.none}, {"random", baselines.random}, {"silver", baselines.silver}, {"gold", baselines.gold}}},
          {"normalized_random", opt(normalized_random)},
          {"normalized_gold", opt(normalized_gold)}};
}

std::vector<std::string> MetricReport::csv_header() {
  return {"dataset",     "detector",      "detector_fingerprint", "handler",      "mode",
          "validation",  "auroc",         "balance_train",        "balance_filtered", "balance_test",
          "missing_class", "q",           "n_trusted",            "n_untrusted",  "test_loss",
          "normalized",  "loss_none",     "loss_random",          "loss_silver",  "loss_gold",
          "normalized_random", "normalized_gold"};
}

std::vector<std::string> MetricReport::csv_row() const {
  return {dataset,
          detector,
          detector_fingerprint,
          handler,
          mode,
          validation_kind,
          opt_text(detection_auroc),
          format_double(class_balance_train),
          format_double(class_balance_filtered),
          format_double(class_balance_test),
          missing_class ? "1" : "0",
          format_double(selected_q),
          std::to_string(n_trusted),
          std::to_string(n_untrusted),
          format_double(test_loss),
          opt_text(normalized),
          format_double(baselines.none),
          format_double(baselines.random),
          format_double(baselines.silver),
          format_double(baselines.gold),
          opt_text(normalized_random),
          opt_text(normalized_gold)};
}

}  // namespace labelprobe
