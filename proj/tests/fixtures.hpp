#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "labelprobe/dataset.hpp"
#include "labelprobe/noise.hpp"
#include "labelprobe/synth.hpp"

namespace fixtures {

using namespace labelprobe;

inline Dataset blobs(std::size_t n, int k, std::uint64_t seed, double radius = 4.0) {
  BlobsConfig cfg;
  cfg.n = n;
  cfg.n_classes = k;
  cfg.radius = radius;
  cfg.seed = seed;
  return make_blobs(cfg);
}

inline Dataset ncar(const Dataset& ds, double rate, std::uint64_t seed) {
  NoiseSpec spec;
  spec.kind = NoiseKind::ncar;
  spec.rate = rate;
  spec.seed = seed;
  return apply_noise(ds, spec);
}

inline Partition partition(const Dataset& ds, std::uint64_t seed, ValidationKind kind = ValidationKind::clean) {
  const SplitTags tags = split(ds, {0.6, 0.2, 0.2}, seed, kind);
  return make_partition(ds, tags, FeatureMapKind::standardize, seed + 1);
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("labelprobe-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace fixtures
