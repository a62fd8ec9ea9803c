#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/pipeline.hpp"

namespace labelprobe {

/// Each baseline is searched on its own; random runs the full quantile grid.
struct Baselines {
  SearchResult none;
  SearchResult random;
  SearchResult silver;
  SearchResult gold;
};

/// none: all noisy rows; random: uniform scores through the pipeline;
/// silver: rows whose noisy label is right; gold: every row, clean labels.
Baselines compute_baselines(const Partition& part, const BaseModelSpec& estimator, const SearchConfig& cfg,
                            const TrialCache* cache = nullptr, const TrialSink& sink = {});

/// Selected test loss of every baseline under one validation kind.
struct BaselineLosses {
  double none = 0.0;
  double random = 0.0;
  double silver = 0.0;
  double gold = 0.0;
};

BaselineLosses baseline_losses(const Baselines& b, ValidationKind kind);

struct MetricReport {
  std::string dataset;
  std::string detector;
  std::string detector_fingerprint;
  std::string handler;
  std::string mode;
  std::string validation_kind;
  std::optional<double> detection_auroc;
  double class_balance_train = 0.0;
  double class_balance_filtered = 0.0;
  double class_balance_test = 0.0;
  bool missing_class = false;  // some class count hit zero
  double selected_q = 0.0;
  std::size_t n_trusted = 0;
  std::size_t n_untrusted = 0;
  double test_loss = 0.0;
  std::optional<double> normalized;
  BaselineLosses baselines;
  std::optional<double> normalized_random;
  std::optional<double> normalized_gold;

  nlohmann::json to_json() const;
  static std::vector<std::string> csv_header();
  std::vector<std::string> csv_row() const;
};

/// Picks the pipeline and baseline trials under `kind` and normalizes the
/// pipeline's test loss between silver (100) and none (200). The AUROC is
/// that of the selected detector draw.
MetricReport make_report(const Partition& part, const SearchResult& pipeline, const Baselines& baselines,
                         ValidationKind kind);

}  // namespace labelprobe
