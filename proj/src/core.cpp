#include "labelprobe/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace labelprobe {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

int infer_classes(std::span<const int> labels) {
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  return k;
}

std::vector<std::size_t> class_counts(std::span<const int> labels, int n_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw Error("label " + std::to_string(y) + " outside [0, K)");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Labels gather(std::span<const int> labels, std::span<const std::size_t> rows) {
  Labels out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

void softmax_inplace(Eigen::Ref<Eigen::RowVectorXd> row) {
  const double top = row.maxCoeff();
  row = (row.array() - top).exp();
  row /= row.sum();
}

}  // namespace labelprobe
