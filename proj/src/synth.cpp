#include "labelprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace labelprobe {

namespace {

Matrix blob_centres(int n_classes, int n_features, double radius) {
  Matrix centres = Matrix::Zero(n_classes, n_features);
  for (int c = 0; c < n_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / n_classes;
    centres(c, 0) = radius * std::cos(angle);
    if (n_features > 1) centres(c, 1) = radius * std::sin(angle);
  }
  return centres;
}

/// Class counts by largest remainder so priors are met exactly.
std::vector<std::size_t> prior_counts(std::size_t n, const std::vector<double>& priors) {
  double total = 0.0;
  for (double p : priors) total += p;
  std::vector<std::size_t> counts(priors.size());
  std::vector<std::pair<double, std::size_t>> rest;
  std::size_t used = 0;
  for (std::size_t c = 0; c < priors.size(); ++c) {
    const double exact = static_cast<double>(n) * priors[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    used += counts[c];
    rest.emplace_back(-(exact - std::floor(exact)), c);
  }
  std::sort(rest.begin(), rest.end());
  for (std::size_t i = 0; used < n; ++i, ++used) ++counts[rest[i % rest.size()].second];
  return counts;
}

}  // namespace

Dataset make_blobs(const BlobsConfig& cfg) {
  if (cfg.n_classes < 2) throw Error("blobs need at least two classes");
  if (cfg.n_features < 1) throw Error("blobs need at least one feature");
  std::vector<double> priors = cfg.priors;
  if (priors.empty()) priors.assign(static_cast<std::size_t>(cfg.n_classes), 1.0);
  if (priors.size() != static_cast<std::size_t>(cfg.n_classes)) throw Error("blobs: one prior per class");
  for (double p : priors) {
    if (!(p > 0.0)) throw Error("blobs: priors must be positive");
  }

  Rng rng(derive_seed(cfg.seed, 0xb10b));
  Labels labels;
  const auto counts = prior_counts(cfg.n, priors);
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  shuffle(labels, rng);

  const Matrix centres = blob_centres(cfg.n_classes, cfg.n_features, cfg.radius);
  Dataset ds;
  ds.n_classes = cfg.n_classes;
  ds.features.resize(static_cast<Eigen::Index>(cfg.n), cfg.n_features);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (int j = 0; j < cfg.n_features; ++j) {
      ds.features(static_cast<Eigen::Index>(i), j) = centres(labels[i], j) + cfg.spread * standard_normal(rng);
    }
    ds.example_ids.push_back(std::to_string(i));
  }
  for (int j = 0; j < cfg.n_features; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  ds.noisy_labels = labels;
  ds.clean_labels = labels;
  return ds;
}

Dataset make_rule_task(const RuleTaskConfig& cfg) {
  if (cfg.n_rules < 1) throw Error("rule task needs at least one rule");
  Dataset ds = make_blobs(cfg.blobs);
  const int k = cfg.blobs.n_classes;
  const int d = cfg.blobs.n_features;
  const Matrix centres = blob_centres(k, d, cfg.blobs.radius);
  Rng rng(derive_seed(cfg.blobs.seed, 0x21e5));

  Matrix rule_centre(cfg.n_rules, d);
  std::vector<int> rule_class(static_cast<std::size_t>(cfg.n_rules));
  std::vector<double> rule_radius(static_cast<std::size_t>(cfg.n_rules));
  for (int r = 0; r < cfg.n_rules; ++r) {
    if (r < k) {
      Eigen::RowVectorXd shift(d);
      for (int j = 0; j < d; ++j) shift(j) = standard_normal(rng);
      shift *= cfg.displacement / std::max(shift.norm(), 1e-12);
      rule_class[static_cast<std::size_t>(r)] = r;
      rule_centre.row(r) = centres.row(r) + shift;
      rule_radius[static_cast<std::size_t>(r)] = cfg.rule_radius;
    } else {
      const int voted = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k)));
      const int victim = (voted + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k - 1)))) % k;
      rule_class[static_cast<std::size_t>(r)] = voted;
      rule_centre.row(r) = 0.35 * centres.row(voted) + 0.65 * centres.row(victim);
      rule_radius[static_cast<std::size_t>(r)] = cfg.confuser_radius;
    }
  }

  ds.rules = RuleVotes::Constant(static_cast<Eigen::Index>(ds.size()), cfg.n_rules, kAbstain);
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (int r = 0; r < cfg.n_rules; ++r) {
      if ((ds.features.row(i) - rule_centre.row(r)).norm() < rule_radius[static_cast<std::size_t>(r)]) {
        ds.rules(i, r) = rule_class[static_cast<std::size_t>(r)];
      }
    }
  }
  return ds;
}

}  // namespace labelprobe
