#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace labelprobe {

/// Row-major dense matrix; rows are examples.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Vector of class ids in [0, K).
using Labels = std::vector<int>;

using Rng = std::mt19937_64;

inline constexpr const char* kVersion = "0.3.1";

/// Probability floor used by every log in the library.
inline constexpr double kProbClamp = 1e-12;

/// Error raised for invalid inputs and incompatible configurations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

/// SplitMix64 finaliser; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(mix_seed(master) ^ (index + 0x632be59bd9b4e019ULL));
}

/// 64-bit FNV-1a over a string.
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t value);

/// Uniform draw in [0, 1) that does not depend on the standard library's
/// distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, bound).
inline std::size_t uniform_index(Rng& rng, std::size_t bound) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(bound));
}

/// Box-Muller standard normal.
double standard_normal(Rng& rng);

/// Fisher-Yates shuffle driven by uniform_index, portable across toolchains.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

std::vector<std::size_t> iota_indices(std::size_t n);

/// Number of classes implied by a label vector (max + 1).
int infer_classes(std::span<const int> labels);

std::vector<std::size_t> class_counts(std::span<const int> labels, int n_classes);

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows);
Labels gather(std::span<const int> labels, std::span<const std::size_t> rows);

/// Numerically stable softmax of a single row of scores.
void softmax_inplace(Eigen::Ref<Eigen::RowVectorXd> row);

}  // namespace labelprobe
