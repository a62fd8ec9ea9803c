#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/aggregate.hpp"
#include "labelprobe/ensemble.hpp"
#include "labelprobe/models.hpp"
#include "labelprobe/probe.hpp"

namespace labelprobe {

struct TrustScores {
  Vector scores;  // higher = more trusted
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::size_t imputed = 0;  // rows that had no defined aggregate
};

/// Base model, ensemble strategy, probe and aggregator.
class ModelProbingDetector {
 public:
  ModelProbingDetector(BaseModelSpec model, EnsembleStrategy ensemble, ProbeKind probe, AggregatorKind aggregate,
                       std::uint64_t seed = 0);

  const BaseModelSpec& model() const { return model_; }
  const EnsembleStrategy& ensemble() const { return ensemble_; }
  ProbeKind probe() const { return probe_; }
  AggregatorKind aggregate() const { return aggregate_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& preset_name() const { return preset_; }

  /// Same blocks with the model and ensemble seeds re-derived from `seed`.
  ModelProbingDetector with_seed(std::uint64_t seed) const;
  /// Same blocks with a different base model (e.g. sampled hyperparameters).
  ModelProbingDetector with_model(const BaseModelSpec& model) const;

  Orientation orientation() const;
  std::vector<std::string> warnings() const;

  std::string canonical() const;
  std::string fingerprint() const;

  TrustScores trust_scores(const Matrix& x, std::span<const int> y, int n_classes,
                           std::span<const std::size_t> fit_rows = {}) const;

  nlohmann::json to_json() const;
  static ModelProbingDetector from_json(const nlohmann::json& doc);

 private:
  friend ModelProbingDetector preset(std::string_view name, std::uint64_t seed);
  void validate() const;

  BaseModelSpec model_;
  EnsembleStrategy ensemble_;
  ProbeKind probe_;
  AggregatorKind aggregate_;
  std::uint64_t seed_;
  std::string preset_;
};

const std::vector<std::string>& preset_names();
ModelProbingDetector preset(std::string_view name, std::uint64_t seed = 0);

/// Round r refits on the top `keep_fraction` rows by round r-1 trust and
/// rescores every row.
TrustScores iterative_refine(const ModelProbingDetector& det, const Matrix& x, std::span<const int> y,
                             int n_classes, int rounds, double keep_fraction);

/// Replaces NaN entries with the median of the finite ones.
std::size_t impute_median(Vector& scores);

}  // namespace labelprobe
