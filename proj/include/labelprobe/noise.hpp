#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/dataset.hpp"

namespace labelprobe {

enum class NoiseKind { ncar, rules };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::ncar;
  double rate = 0.3;
  std::uint64_t seed = 0;
  /// When true a flipped label may be redrawn as itself (K draws instead of K-1).
  bool allow_self_flip = false;
};

/// Flips each label with probability `rate` to another class drawn uniformly.
Labels inject_ncar(std::span<const int> labels, int n_classes, double rate, std::uint64_t seed,
                   bool allow_self_flip = false);

struct WeakLabels {
  Labels labels;  // kAbstain where uncovered
  std::vector<bool> covered;
};

/// Majority vote over non-abstaining rules; ties go to a uniformly random
/// winner, rows without any vote are marked uncovered.
WeakLabels aggregate_weak_labels(const RuleVotes& votes, int n_classes, std::uint64_t seed);

/// T[i][j] = P(noisy = i | true = j). Rows are the noisy classes, plus a final
/// "unlabeled" row when the matrix has an uncovered row.
struct TransitionMatrix {
  Matrix values;
  std::vector<std::string> row_labels;
  std::vector<std::string> column_labels;

  nlohmann::json to_json() const;
};

/// `noisy` may contain kAbstain for uncovered rows; those are counted in an
/// extra final row when `with_unlabeled_row` is set.
TransitionMatrix estimate_transition_matrix(std::span<const int> noisy, std::span<const int> clean,
                                            int n_classes, bool with_unlabeled_row);

/// Returns a copy of `ds` whose noisy labels follow `spec`; the previous
/// noisy labels become the clean labels. For rules, uncovered rows are
/// dropped and reported through `covered` when supplied.
Dataset apply_noise(const Dataset& ds, const NoiseSpec& spec, std::vector<bool>* covered = nullptr,
                    TransitionMatrix* transition = nullptr);

}  // namespace labelprobe
