#include "labelprobe/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace labelprobe {

double detection_auroc(const Vector& trust, const std::vector<bool>& is_mislabeled) {
  const auto n = static_cast<std::size_t>(trust.size());
  if (is_mislabeled.size() != n) throw Error("auroc: scores and mask differ in length");
  std::size_t n_bad = 0;
  for (bool b : is_mislabeled) n_bad += b ? 1 : 0;
  const std::size_t n_good = n - n_bad;
  if (n_bad == 0 || n_good == 0) throw Error("auroc needs both genuine and mislabeled rows");
  for (double v : trust) {
    if (std::isnan(v)) throw Error("auroc: NaN score");
  }

  std::vector<std::size_t> order = iota_indices(n);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trust(static_cast<Eigen::Index>(a)) < trust(static_cast<Eigen::Index>(b));
  });
  // Rank sum of genuine rows, ties sharing the average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && trust(static_cast<Eigen::Index>(order[j + 1])) == trust(static_cast<Eigen::Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (!is_mislabeled[order[t]]) rank_sum += avg;
    }
    i = j + 1;
  }
  const double g = static_cast<double>(n_good);
  const double u = rank_sum - g * (g + 1.0) / 2.0;
  return u / (g * static_cast<double>(n_bad));
}

double class_balance(std::span<const int> labels, int n_classes) {
  const auto counts = class_counts(labels, n_classes);
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi == 0) return 0.0;
  return static_cast<double>(*lo) / static_cast<double>(*hi);
}

std::optional<double> normalized_loss(double loss, double loss_none, double loss_silver) {
  if (!std::isfinite(loss) || !std::isfinite(loss_none) || !std::isfinite(loss_silver)) {
    throw Error("normalized_loss needs finite losses");
  }
  const double span = loss_none - loss_silver;
  if (std::abs(span) < 1e-9) return std::nullopt;
  return 100.0 + 100.0 * (loss - loss_silver) / span;
}

}  // namespace labelprobe
