#include "labelprobe/detector.hpp"

#include <algorithm>
#include <cmath>

namespace labelprobe {

namespace {

struct PresetRow {
  const char* name;
  ModelFamily family;
  const char* ensemble;
  ProbeKind probe;
  AggregatorKind aggregate;
  double alpha = 0.0;  // 0 keeps the family default
  double learning_rate = 0.0;
};

const std::vector<PresetRow>& preset_rows() {
  static const std::vector<PresetRow> rows{
      {"aum", ModelFamily::gbt, "progressive", ProbeKind::margin, AggregatorKind::sum},
      {"forget", ModelFamily::gbt, "progressive", ProbeKind::accuracy, AggregatorKind::forget_count},
      {"small_loss", ModelFamily::klm, "none", ProbeKind::logloss, AggregatorKind::sum},
      {"cleanlab", ModelFamily::klm, "kfold:5", ProbeKind::adjusted_confidence, AggregatorKind::oob_mean},
      {"consensus", ModelFamily::klm, "bootstrap:20", ProbeKind::accuracy, AggregatorKind::oob_mean},
      {"vosg", ModelFamily::klm, "progressive", ProbeKind::input_gradient, AggregatorKind::variance},
      {"tracin", ModelFamily::klm, "progressive", ProbeKind::grad_norm_sq, AggregatorKind::sum},
      {"agra", ModelFamily::klm, "none", ProbeKind::grad_cosine, AggregatorKind::sum, 1e-1, 5e-3},
      {"self_influence", ModelFamily::klm, "none", ProbeKind::self_influence, AggregatorKind::sum},
      {"knn_edit", ModelFamily::knn, "loo", ProbeKind::accuracy, AggregatorKind::oob_mean},
  };
  return rows;
}

}  // namespace

ModelProbingDetector::ModelProbingDetector(BaseModelSpec model, EnsembleStrategy ensemble, ProbeKind probe,
                                           AggregatorKind aggregate, std::uint64_t seed)
    : model_(std::move(model)), ensemble_(ensemble), probe_(probe), aggregate_(aggregate), seed_(seed) {
  validate();
}

void ModelProbingDetector::validate() const {
  ensemble_.validate();
  check_probe_capabilities(probe_, model_.family);
  const AggregatorInfo& agg = aggregator_info(aggregate_);
  effective_orientation(probe_, aggregate_);
  if (agg.needs_masks && !ensemble_.has_masks()) {
    throw Error("aggregator '" + to_string(aggregate_) + "' needs in-bag masks, which ensemble '" +
                ensemble_.to_string() + "' does not provide (use bootstrap, kfold or loo)");
  }
  if (agg.needs_binary && !probe_info(probe_).binary) {
    throw Error("aggregator '" + to_string(aggregate_) + "' needs a binary probe; '" + to_string(probe_) +
                "' is not (use accuracy)");
  }
  if (agg.needs_order && !ensemble_.ordered()) {
    throw Error("aggregator '" + to_string(aggregate_) + "' needs an ordered ensemble (use progressive)");
  }
}

ModelProbingDetector ModelProbingDetector::with_seed(std::uint64_t seed) const {
  ModelProbingDetector d = *this;
  d.seed_ = seed;
  d.model_.seed = derive_seed(seed, 1);
  d.ensemble_.seed = derive_seed(seed, 2);
  return d;
}

ModelProbingDetector ModelProbingDetector::with_model(const BaseModelSpec& model) const {
  ModelProbingDetector d = *this;
  d.model_ = model;
  d.validate();
  return d;
}

Orientation ModelProbingDetector::orientation() const { return effective_orientation(probe_, aggregate_); }

std::vector<std::string> ModelProbingDetector::warnings() const {
  std::vector<std::string> out;
  if (probe_ == ProbeKind::input_gradient && model_.family == ModelFamily::gbt) {
    out.push_back("input gradients of gbt models are zero almost everywhere; klm is the intended family");
  }
  if (aggregate_ == AggregatorKind::variance && ensemble_.kind == EnsembleKind::none) {
    out.push_back("variance over a single-member ensemble is identically zero");
  }
  return out;
}

std::string ModelProbingDetector::canonical() const {
  std::string ens = ensemble_.to_string();
  if (ensemble_.kind == EnsembleKind::bootstrap || ensemble_.kind == EnsembleKind::kfold) {
    ens += "(seed=" + std::to_string(ensemble_.seed) + ")";
  }
  return "model=" + model_.canonical() + ";ensemble=" + ens + ";probe=" + to_string(probe_) +
         ";aggregate=" + to_string(aggregate_) + ";seed=" + std::to_string(seed_);
}

std::string ModelProbingDetector::fingerprint() const { return hex64(fnv1a(canonical())); }

std::size_t impute_median(Vector& scores) {
  std::vector<double> finite;
  std::size_t missing = 0;
  for (double v : scores) {
    if (std::isnan(v)) ++missing;
    else finite.push_back(v);
  }
  if (missing == 0) return 0;
  if (finite.empty()) throw Error("no row received a defined score; the ensemble leaves nothing out-of-bag");
  std::sort(finite.begin(), finite.end());
  const std::size_t h = finite.size() / 2;
  const double median = finite.size() % 2 ? finite[h] : 0.5 * (finite[h - 1] + finite[h]);
  for (double& v : scores) {
    if (std::isnan(v)) v = median;
  }
  return missing;
}

TrustScores ModelProbingDetector::trust_scores(const Matrix& x, std::span<const int> y, int n_classes,
                                               std::span<const std::size_t> fit_rows) const {
  validate();
  ProbeStream stream = probe_model(ensemble_, model_, x, y, n_classes, probe_, fit_rows);
  TrustScores out;
  out.scores = labelprobe::aggregate(aggregate_, stream);
  out.imputed = impute_median(out.scores);
  if (orientation() == Orientation::suspicion) out.scores = -out.scores;
  // Negating zero yields -0, which would print differently.
  for (double& v : out.scores) v += 0.0;
  if (!out.scores.allFinite()) throw Error("trust scores contain non-finite values");
  out.fingerprint = fingerprint();
  out.seed = seed_;
  return out;
}

nlohmann::json ModelProbingDetector::to_json() const {
  nlohmann::json doc{{"model", model_.to_json()},
                     {"ensemble", ensemble_.to_string()},
                     {"ensemble_seed", ensemble_.seed},
                     {"probe", to_string(probe_)},
                     {"aggregate", to_string(aggregate_)},
                     {"seed", seed_},
                     {"fingerprint", fingerprint()}};
  if (!preset_.empty()) doc["preset"] = preset_;
  return doc;
}

ModelProbingDetector ModelProbingDetector::from_json(const nlohmann::json& doc) {
  EnsembleStrategy ens = EnsembleStrategy::parse(doc.at("ensemble").get<std::string>());
  ens.seed = doc.value("ensemble_seed", std::uint64_t{0});
  ModelProbingDetector d(BaseModelSpec::from_json(doc.at("model")), ens,
                         parse_probe(doc.at("probe").get<std::string>()),
                         parse_aggregator(doc.at("aggregate").get<std::string>()), doc.value("seed", std::uint64_t{0}));
  d.preset_ = doc.value("preset", std::string());
  return d;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& row : preset_rows()) out.emplace_back(row.name);
    return out;
  }();
  return names;
}

ModelProbingDetector preset(std::string_view name, std::uint64_t seed) {
  for (const auto& row : preset_rows()) {
    if (name != row.name) continue;
    BaseModelSpec model = BaseModelSpec::defaults(row.family);
    if (row.alpha > 0.0) model.alpha = row.alpha;
    if (row.learning_rate > 0.0) model.learning_rate = row.learning_rate;
    ModelProbingDetector d(model, EnsembleStrategy::parse(row.ensemble), row.probe, row.aggregate);
    d.preset_ = row.name;
    return d.with_seed(seed);
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw Error("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

TrustScores iterative_refine(const ModelProbingDetector& det, const Matrix& x, std::span<const int> y,
                             int n_classes, int rounds, double keep_fraction) {
  if (rounds < 1) throw Error("iterative_refine needs rounds >= 1");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw Error("keep_fraction must lie in (0, 1]");
  const std::size_t n = y.size();
  TrustScores scores = det.trust_scores(x, y, n_classes);
  for (int r = 1; r < rounds; ++r) {
    const auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(n)));
    if (keep < static_cast<std::size_t>(n_classes)) {
      throw Error("keep_fraction leaves " + std::to_string(keep) + " rows, fewer than the class count");
    }
    std::vector<std::size_t> order = iota_indices(n);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.scores(static_cast<Eigen::Index>(a)) >
                                                                scores.scores(static_cast<Eigen::Index>(b)); });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    const auto counts = class_counts(gather(y, order), n_classes);
    for (int c = 0; c < n_classes; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        throw Error("keep_fraction empties class " + std::to_string(c) + " in round " + std::to_string(r + 1));
      }
    }
    scores = det.trust_scores(x, y, n_classes, order);
  }
  return scores;
}

}  // namespace labelprobe
