#pragma once

#include <optional>
#include <vector>

#include "labelprobe/core.hpp"

namespace labelprobe {

/// P(trust of a random genuine row > trust of a random mislabeled row),
/// ties counted one half. Mann-Whitney with average ranks.
double detection_auroc(const Vector& trust, const std::vector<bool>& is_mislabeled);

/// min / max class count; 0 when some class is empty.
double class_balance(std::span<const int> labels, int n_classes);

/// 100 at the silver loss, 200 at the none loss; nullopt when the two
/// anchors are closer than 1e-9.
std::optional<double> normalized_loss(double loss, double loss_none, double loss_silver);

}  // namespace labelprobe
