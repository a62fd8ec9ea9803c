#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/core.hpp"

namespace labelprobe {

/// Weak-label votes, one column per labeling rule; -1 marks an abstain.
using RuleVotes = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline constexpr int kAbstain = -1;

/// Feature matrix with noisy labels and, when known, the ground truth.
struct Dataset {
  Matrix features;
  std::vector<std::string> feature_names;
  /// Categorical columns stored column-major as raw strings.
  std::vector<std::vector<std::string>> categorical;
  std::vector<std::string> categorical_names;
  Labels noisy_labels;
  std::optional<Labels> clean_labels;
  int n_classes = 0;
  std::vector<std::string> example_ids;
  RuleVotes rules;

  std::size_t size() const { return noisy_labels.size(); }
  bool has_clean() const { return clean_labels.has_value(); }

  /// Rows ordered as given; duplicates allowed.
  Dataset subset(std::span<const std::size_t> rows) const;

  /// true where noisy != clean. Throws without clean labels.
  std::vector<bool> mislabeled_mask() const;

  /// Checks every documented invariant, throwing Error on violation.
  void validate() const;
};

struct CsvSchema {
  std::string id_column = "id";
  std::string label_column = "label";
  std::string clean_label_column = "clean_label";
  std::string covered_column = "covered";
  std::string rule_prefix = "rule_";
  std::vector<std::string> categorical_columns;
  /// When set, labels outside [0, n_classes) are rejected.
  std::optional<int> n_classes;
};

/// Reads a comma-separated file with a mandatory header row. Lines starting
/// with '#' are skipped. Rows whose `covered` column is 0 are dropped.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Writes `ds` using the column layout accepted by load_csv. `covered`, when
/// provided, is emitted as an extra column. Comment lines are written first.
void write_csv(const Dataset& ds, const std::filesystem::path& path,
               const std::vector<std::string>& comments = {},
               const std::vector<bool>* covered = nullptr);

std::string format_double(double value);

// ---------------------------------------------------------------------------
// Feature maps

enum class FeatureMapKind { identity, standardize, onehot_standardize, random_fourier };

std::string to_string(FeatureMapKind kind);
FeatureMapKind parse_feature_map_kind(std::string_view name);

/// Fitted preprocessing. Immutable after fit_feature_map.
struct FeatureMap {
  FeatureMapKind kind = FeatureMapKind::identity;
  std::uint64_t seed = 0;
  Eigen::RowVectorXd means;
  Eigen::RowVectorXd scales;
  std::vector<std::vector<std::string>> categories;
  // random-fourier parameters: output = sqrt(2/D) cos(x * omega + phase)
  Matrix omega;  // d x D
  Eigen::RowVectorXd phase;
  double gamma = 0.0;
  int n_components = 0;

  int output_dim() const;
  Matrix transform(const Dataset& ds) const;
  /// Numeric-only transform; categorical blocks are not supported here.
  Matrix transform(const Matrix& x) const;

  nlohmann::json to_json() const;
  static FeatureMap from_json(const nlohmann::json& doc);
};

struct FeatureMapOptions {
  int n_components = 100;
  /// Overrides the 1/(d * var(X)) bandwidth when set.
  std::optional<double> gamma;
};

FeatureMap fit_feature_map(const Dataset& train, FeatureMapKind kind, std::uint64_t seed,
                           const FeatureMapOptions& options = {});

/// Random Fourier features for the RBF kernel exp(-gamma ||x - x'||^2),
/// bandwidth defaulting to 1 / (d * pooled variance of x).
FeatureMap fit_random_fourier(const Matrix& x, int n_components, std::uint64_t seed,
                              std::optional<double> gamma = std::nullopt);

// ---------------------------------------------------------------------------
// Splitting

enum class SplitTag : std::uint8_t { train, validation, test };
enum class ValidationKind { noisy, clean, oracle };

std::string to_string(ValidationKind kind);
ValidationKind parse_validation_kind(std::string_view name);

struct SplitTags {
  std::vector<SplitTag> assignment;
  ValidationKind validation_kind = ValidationKind::noisy;

  std::vector<std::size_t> indices(SplitTag tag) const;
};

/// Stratified (by noisy class) train/validation/test assignment.
SplitTags split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed,
                ValidationKind validation_kind);

/// Train/validation/test sets with a feature map fitted on the train part.
struct Partition {
  Dataset train;
  Dataset validation;
  Dataset test;
  FeatureMap feature_map;
  ValidationKind validation_kind = ValidationKind::noisy;
};

Partition make_partition(const Dataset& ds, const SplitTags& tags, FeatureMapKind kind,
                         std::uint64_t seed, const FeatureMapOptions& options = {});

}  // namespace labelprobe
