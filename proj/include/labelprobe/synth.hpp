#pragma once

#include <vector>

#include "labelprobe/dataset.hpp"

namespace labelprobe {

/// Isotropic Gaussian blobs with centres evenly spaced on a circle in the
/// first two dimensions. Noisy and clean labels both hold the truth.
struct BlobsConfig {
  std::size_t n = 2000;
  int n_classes = 3;
  int n_features = 2;
  double radius = 4.0;
  double spread = 1.0;
  std::vector<double> priors;  // uniform when empty
  std::uint64_t seed = 0;
};

Dataset make_blobs(const BlobsConfig& cfg);

/// Blobs plus labeling-rule votes. Each rule votes one class inside a disc
/// whose centre is displaced from that class's blob; rules past the first
/// n_classes sit between two blobs and systematically vote the wrong one.
struct RuleTaskConfig {
  BlobsConfig blobs{.n = 2000, .n_classes = 3, .n_features = 2, .radius = 3.0, .spread = 1.2, .priors = {}, .seed = 0};
  int n_rules = 5;
  double displacement = 1.0;
  double rule_radius = 2.6;
  double confuser_radius = 1.6;
};

Dataset make_rule_task(const RuleTaskConfig& cfg);

}  // namespace labelprobe
