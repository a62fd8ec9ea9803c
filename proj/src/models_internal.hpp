#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "labelprobe/models.hpp"

namespace labelprobe::detail {

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;  // empty when early stopping is off
};

void validate_spec(const BaseModelSpec& spec);
void validate_training_input(const Matrix& x, std::span<const int> y, int n_classes);

/// Per-class 10% (validation_fraction) holdout, drawn from the spec's seed.
HoldoutSplit carve_holdout(std::span<const int> y, int n_classes, const BaseModelSpec& spec);

struct EarlyStopper {
  double tol = 0.0;
  int patience = 5;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  /// Records one holdout loss; true once `patience` epochs passed without improvement.
  bool update(double loss);
};

std::unique_ptr<StreamState> make_klm_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes);
std::unique_ptr<StreamState> make_gbt_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes);
std::unique_ptr<StreamState> make_knn_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes);

ModelPtr fit_gbt(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes);

}  // namespace labelprobe::detail
