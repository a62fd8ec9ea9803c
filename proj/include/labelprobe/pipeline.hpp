#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/dataset.hpp"
#include "labelprobe/detector.hpp"
#include "labelprobe/models.hpp"

namespace labelprobe {

inline constexpr std::array<double, 10> kQuantileGrid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

enum class SplitMode { global, per_class };
std::string to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view name);

struct SplitConfig {
  double q = 0.0;
  SplitMode mode = SplitMode::global;
};

/// Both index lists are ascending.
struct SplitResult {
  std::vector<std::size_t> trusted;
  std::vector<std::size_t> untrusted;
};

/// Bottom floor(q * n) scores become untrusted, lower index first among
/// equal scores; per_class applies the same rule inside each label group.
SplitResult split(const Vector& scores, const SplitConfig& cfg, std::span<const int> labels, int n_classes);
SplitResult split(const TrustScores& scores, const SplitConfig& cfg, std::span<const int> labels, int n_classes);

enum class Handler { filter, relabel };
std::string to_string(Handler h);
Handler parse_handler(std::string_view name);

struct HandleReport {
  std::vector<int> vanished_classes;
  std::vector<std::string> warnings;
};

/// Trusted rows only. An emptied class is reported, not fatal.
Dataset handle_filter(const Dataset& ds, const SplitResult& split, HandleReport* report = nullptr);
/// Untrusted rows take their clean label; needs clean labels.
Dataset handle_relabel(const Dataset& ds, const SplitResult& split);
Dataset handle(Handler h, const Dataset& ds, const SplitResult& split, HandleReport* report = nullptr);

/// Held-out log-losses of one trained estimator.
struct Losses {
  double validation_noisy = 0.0;
  std::optional<double> validation_clean;
  double test = 0.0;  // against clean test labels when known
};

Losses evaluate_losses(const FittedModel& model, const Partition& part);
/// The loss a validation kind selects on; oracle means test.
double selection_loss(const Losses& losses, ValidationKind kind);

struct PipelineResult {
  SplitResult split;
  std::vector<std::size_t> trusted_per_class;
  HandleReport handle;
  Losses losses;
  double class_balance_train = 0.0;
  double class_balance_handled = 0.0;
  std::size_t rows_trained = 0;
};

/// Scores already computed on part.train: split, handle, fit, evaluate.
PipelineResult run_from_scores(const Partition& part, const Vector& scores, const SplitConfig& cfg, Handler handler,
                               const BaseModelSpec& estimator);

/// Full detect + handle run; every stage is seeded from `seed`.
PipelineResult run_pipeline(const Partition& part, const ModelProbingDetector& detector, const SplitConfig& cfg,
                            Handler handler, const BaseModelSpec& estimator, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Random search

struct TrialRecord {
  std::string source;  // detector fingerprint family or a baseline name
  std::size_t detector_index = 0;
  std::size_t estimator_index = 0;
  nlohmann::json detector;   // resolved detector block, null for baselines
  nlohmann::json estimator;  // BaseModelSpec
  double q = 0.0;
  SplitMode mode = SplitMode::global;
  Handler handler = Handler::filter;
  Losses losses;
  std::size_t n_trusted = 0;
  std::size_t n_untrusted = 0;
  std::vector<std::size_t> trusted_per_class;
  std::vector<int> vanished_classes;
  double class_balance_handled = 0.0;
  std::optional<double> detection_auroc;  // of this detector draw, when clean labels exist
  std::uint64_t seed = 0;
  std::string fingerprint;

  nlohmann::json to_json() const;
  static TrialRecord from_json(const nlohmann::json& doc);
};

struct SearchBudget {
  std::size_t detector_draws = 12;
  std::size_t estimator_draws = 12;
};

struct SearchConfig {
  SearchBudget budget;
  std::vector<double> grid{kQuantileGrid.begin(), kQuantileGrid.end()};
  SplitMode mode = SplitMode::global;
  Handler handler = Handler::filter;
  ValidationKind validation_kind = ValidationKind::noisy;
  bool search_detector = true;   // sample the detector's base-model space
  bool search_estimator = true;  // sample the estimator's space
  std::uint64_t seed = 0;
  /// Prefix folded into trial fingerprints; a benchmark cell id.
  std::string context;
};

/// Completed trials keyed by fingerprint; lets a rerun skip finished work.
using TrialCache = std::map<std::string, TrialRecord>;
using TrialSink = std::function<void(const TrialRecord&)>;

struct SearchResult {
  std::vector<TrialRecord> trials;  // (detector, estimator, q) order
  std::size_t best = 0;
  std::size_t computed = 0;  // trials not served from the cache

  const TrialRecord& best_trial() const { return trials.at(best); }
};

/// Lowest selection loss; ties go to the smaller q, then the lower trial.
std::size_t select_best(const std::vector<TrialRecord>& trials, ValidationKind kind);

/// Estimator draw j of a search, shared by every detector draw and baseline.
BaseModelSpec estimator_draw(const BaseModelSpec& base, std::size_t j, const SearchConfig& cfg);
ModelProbingDetector detector_draw(const ModelProbingDetector& base, std::size_t i, const SearchConfig& cfg);

/// Every detector draw x estimator draw x grid value; selection by
/// cfg.validation_kind.
SearchResult random_search(const Partition& part, const ModelProbingDetector& detector,
                           const BaseModelSpec& estimator, const SearchConfig& cfg,
                           const TrialCache* cache = nullptr, const TrialSink& sink = {});

/// Same search with draw i scored by `scores(i)`; `source` names the records.
using ScoreSource = std::function<Vector(std::size_t draw)>;
SearchResult search_scores(const Partition& part, const std::string& source, const ScoreSource& scores,
                           const std::function<nlohmann::json(std::size_t)>& describe,
                           const BaseModelSpec& estimator, const SearchConfig& cfg,
                           const TrialCache* cache = nullptr, const TrialSink& sink = {});

/// Estimator draws only, trained on `train` as given.
SearchResult search_estimator(const Partition& part, const Dataset& train, const std::string& source,
                              const BaseModelSpec& estimator, const SearchConfig& cfg,
                              const TrialCache* cache = nullptr, const TrialSink& sink = {});

}  // namespace labelprobe
