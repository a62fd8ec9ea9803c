#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/dataset.hpp"
#include "labelprobe/detector.hpp"
#include "labelprobe/noise.hpp"
#include "labelprobe/pipeline.hpp"
#include "labelprobe/synth.hpp"

namespace labelprobe::cli {

namespace fs = std::filesystem;

inline constexpr const char* kWorkersEnv = "LABELPROBE_WORKERS";

struct DatasetSource {
  std::string name;
  std::optional<fs::path> csv;
  CsvSchema schema;
  std::string synthetic;  // "blobs" or "rules" when no csv
  RuleTaskConfig task;    // task.blobs doubles as the blobs config
  FeatureMapKind feature_map = FeatureMapKind::standardize;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
};

struct ExperimentConfig {
  nlohmann::json resolved;  // document after overrides, without `out`
  std::string hash;
  std::uint64_t seed = 0;
  fs::path out;

  DatasetSource dataset;
  std::optional<NoiseSpec> noise;  // nullopt: labels used as given
  nlohmann::json detector;
  BaseModelSpec estimator;
  SearchConfig search;

  // benchmark matrix
  std::vector<nlohmann::json> bench_detectors;
  std::vector<std::string> bench_noise;
  std::vector<ValidationKind> bench_validation;
  std::vector<Handler> bench_handlers;
};

/// Checks every key and name. The master seed is mandatory unless given.
ExperimentConfig resolve_config(const nlohmann::json& doc, std::optional<std::uint64_t> seed = std::nullopt,
                                std::optional<fs::path> out = std::nullopt);

ModelProbingDetector build_detector(const nlohmann::json& block, std::uint64_t default_seed);

Dataset load_source(const DatasetSource& src, std::uint64_t master_seed);
/// `noise_kind` empty uses the configured noise.
Dataset noisy_dataset(const ExperimentConfig& cfg, const std::string& noise_kind = "");

nlohmann::json provenance(const ExperimentConfig& cfg, std::string_view command);
std::vector<std::string> provenance_comments(const ExperimentConfig& cfg, std::string_view command);

int cmd_inject_noise(const ExperimentConfig& cfg);
int cmd_detect(const ExperimentConfig& cfg);
int cmd_pipeline(const ExperimentConfig& cfg);
int cmd_benchmark(const ExperimentConfig& cfg, unsigned workers);
int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out);

/// --workers, else the environment variable, else 1.
unsigned resolve_workers(std::optional<unsigned> flag);

}  // namespace labelprobe::cli
