#include "labelprobe/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "models_internal.hpp"

namespace labelprobe {

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::klm: return "klm";
    case ModelFamily::gbt: return "gbt";
    case ModelFamily::knn: return "knn";
  }
  return "klm";
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "klm") return ModelFamily::klm;
  if (name == "gbt") return ModelFamily::gbt;
  if (name == "knn") return ModelFamily::knn;
  throw Error("unknown model family '" + std::string(name) + "' (expected klm, gbt or knn)");
}

BaseModelSpec BaseModelSpec::klm_defaults() {
  BaseModelSpec s;
  s.family = ModelFamily::klm;
  s.learning_rate = 0.05;
  s.tol = 1e-3;
  return s;
}

BaseModelSpec BaseModelSpec::gbt_defaults() {
  BaseModelSpec s;
  s.family = ModelFamily::gbt;
  s.learning_rate = 0.1;
  s.tol = 0.0;
  s.l2 = 1.0;
  s.max_depth = 3;
  return s;
}

BaseModelSpec BaseModelSpec::knn_defaults() {
  BaseModelSpec s;
  s.family = ModelFamily::knn;
  s.k = 5;
  s.early_stopping = false;
  return s;
}

BaseModelSpec BaseModelSpec::defaults(ModelFamily family) {
  switch (family) {
    case ModelFamily::klm: return klm_defaults();
    case ModelFamily::gbt: return gbt_defaults();
    case ModelFamily::knn: return knn_defaults();
  }
  return klm_defaults();
}

std::string BaseModelSpec::canonical() const {
  std::ostringstream out;
  out.precision(17);
  out << to_string(family) << "(seed=" << seed;
  switch (family) {
    case ModelFamily::klm:
      out << ",alpha=" << alpha << ",lr=" << learning_rate
          << ",kernel=" << (kernel == KernelKind::rbf ? "rbf" : "linear")
          << ",D=" << n_components;
      break;
    case ModelFamily::gbt:
      out << ",l2=" << l2 << ",lr=" << learning_rate << ",depth=" << max_depth
          << ",mcw=" << min_child_weight;
      break;
    case ModelFamily::knn:
      out << ",k=" << k;
      break;
  }
  if (family != ModelFamily::knn) {
    out << ",max_iter=" << max_iter << ",es=" << early_stopping << ",patience=" << patience
        << ",vf=" << validation_fraction << ",tol=" << tol;
  }
  out << ")";
  return out.str();
}

nlohmann::json BaseModelSpec::to_json() const {
  return {{"family", to_string(family)},
          {"seed", seed},
          {"learning_rate", learning_rate},
          {"max_iter", max_iter},
          {"early_stopping", early_stopping},
          {"patience", patience},
          {"validation_fraction", validation_fraction},
          {"tol", tol},
          {"alpha", alpha},
          {"kernel", kernel == KernelKind::rbf ? "rbf" : "linear"},
          {"n_components", n_components},
          {"l2", l2},
          {"max_depth", max_depth},
          {"min_child_weight", min_child_weight},
          {"k", k}};
}

BaseModelSpec BaseModelSpec::from_json(const nlohmann::json& doc) {
  BaseModelSpec s = defaults(parse_model_family(doc.at("family").get<std::string>()));
  s.seed = doc.value("seed", s.seed);
  s.learning_rate = doc.value("learning_rate", s.learning_rate);
  s.max_iter = doc.value("max_iter", s.max_iter);
  s.early_stopping = doc.value("early_stopping", s.early_stopping);
  s.patience = doc.value("patience", s.patience);
  s.validation_fraction = doc.value("validation_fraction", s.validation_fraction);
  s.tol = doc.value("tol", s.tol);
  s.alpha = doc.value("alpha", s.alpha);
  s.kernel = doc.value("kernel", std::string("rbf")) == "linear" ? KernelKind::linear : KernelKind::rbf;
  s.n_components = doc.value("n_components", s.n_components);
  s.l2 = doc.value("l2", s.l2);
  s.max_depth = doc.value("max_depth", s.max_depth);
  s.min_child_weight = doc.value("min_child_weight", s.min_child_weight);
  s.k = doc.value("k", s.k);
  return s;
}

namespace {

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
}

}  // namespace

BaseModelSpec sample_hyperparameters(const BaseModelSpec& base, Rng& rng) {
  BaseModelSpec s = base;
  switch (base.family) {
    case ModelFamily::klm:
      s.alpha = log_uniform(rng, 1e-5, 1e-1);
      s.learning_rate = log_uniform(rng, 1e-3, 1.0);
      break;
    case ModelFamily::gbt:
      s.l2 = 100.0 * uniform01(rng);
      s.learning_rate = log_uniform(rng, 1e-5, 1e-1);
      break;
    case ModelFamily::knn:
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------

void FittedModel::check_dims(const Matrix& x) const {
  if (x.cols() != n_features_) {
    throw Error("model expects " + std::to_string(n_features_) + " features, got " +
                std::to_string(x.cols()));
  }
}

Matrix FittedModel::predict_proba(const Matrix& x) const {
  Matrix p = decision_scores(x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) softmax_inplace(p.row(i));
  return p;
}

Eigen::RowVectorXd finite_difference_input_gradient(const FittedModel& model,
                                                    const Eigen::RowVectorXd& x, int cls) {
  const auto d = x.size();
  Matrix probes(2 * d, d);
  Eigen::RowVectorXd steps(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    steps(j) = 1e-3 * (1.0 + std::abs(x(j)));
    probes.row(2 * j) = x;
    probes.row(2 * j + 1) = x;
    probes(2 * j, j) += steps(j);
    probes(2 * j + 1, j) -= steps(j);
  }
  const Matrix p = model.predict_proba(probes);
  Eigen::RowVectorXd grad(d);
  for (Eigen::Index j = 0; j < d; ++j) grad(j) = (p(2 * j, cls) - p(2 * j + 1, cls)) / (2.0 * steps(j));
  return grad;
}

Eigen::RowVectorXd FittedModel::input_gradient(const Eigen::RowVectorXd& x, int cls) const {
  return finite_difference_input_gradient(*this, x, cls);
}

Matrix FittedModel::input_gradients(const Matrix& x, std::span<const int> classes) const {
  check_dims(x);
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix grads(n, d);
  // Batched central differences: two perturbed copies of x per coordinate.
  for (Eigen::Index j = 0; j < d; ++j) {
    Matrix plus = x;
    Matrix minus = x;
    Vector steps(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      steps(i) = 1e-3 * (1.0 + std::abs(x(i, j)));
      plus(i, j) += steps(i);
      minus(i, j) -= steps(i);
    }
    const Matrix pp = predict_proba(plus);
    const Matrix pm = predict_proba(minus);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = classes[static_cast<std::size_t>(i)];
      grads(i, j) = (pp(i, c) - pm(i, c)) / (2.0 * steps(i));
    }
  }
  return grads;
}

MatrixKey MatrixKey::of(const Matrix& x) {
  MatrixKey key;
  key.rows = x.rows();
  key.cols = x.cols();
  key.digest = fnv1a(std::string_view(reinterpret_cast<const char*>(x.data()),
                                      static_cast<std::size_t>(x.size()) * sizeof(double)));
  return key;
}

ModelPtr ModelStream::next() {
  if (!state_) return nullptr;
  ModelPtr m = state_->next();
  if (m) {
    ++produced_;
  } else {
    state_.reset();
  }
  return m;
}

double log_loss(const Matrix& proba, std::span<const int> y) {
  if (static_cast<std::size_t>(proba.rows()) != y.size()) throw Error("log_loss: size mismatch");
  if (y.empty()) throw Error("log_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    total -= std::log(std::max(proba(static_cast<Eigen::Index>(i), y[i]), kProbClamp));
  }
  return total / static_cast<double>(y.size());
}

namespace detail {

void validate_training_input(const Matrix& x, std::span<const int> y, int n_classes) {
  if (x.rows() == 0) throw Error("cannot fit on an empty feature matrix");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error("feature rows differ from label count");
  if (!x.allFinite()) throw Error("training features contain NaN or Inf");
  for (int v : y) {
    if (v < 0 || v >= n_classes) throw Error("label " + std::to_string(v) + " outside [0, K)");
  }
}

void validate_spec(const BaseModelSpec& spec) {
  if (spec.family != ModelFamily::knn && spec.max_iter < 1) throw Error("max_iter must be at least 1");
  if (spec.family == ModelFamily::knn && spec.k < 1) throw Error("knn needs k >= 1");
  if (spec.learning_rate < 0.0) throw Error("learning rate must be non-negative");
  if (spec.alpha < 0.0 || spec.l2 < 0.0) throw Error("regularisation must be non-negative");
  if (spec.family == ModelFamily::gbt && spec.max_depth < 1) throw Error("gbt max_depth must be at least 1");
}

HoldoutSplit carve_holdout(std::span<const int> y, int n_classes, const BaseModelSpec& spec) {
  HoldoutSplit split;
  const std::size_t n = y.size();
  if (!spec.early_stopping || spec.validation_fraction <= 0.0) {
    split.train = iota_indices(n);
    return split;
  }
  Rng rng(derive_seed(spec.seed, 0x401d));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(y[i])].push_back(i);
  for (auto& rows : by_class) {
    shuffle(rows, rng);
    const auto take = static_cast<std::size_t>(
        std::llround(spec.validation_fraction * static_cast<double>(rows.size())));
    for (std::size_t r = 0; r < rows.size(); ++r) (r < take ? split.holdout : split.train).push_back(rows[r]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.holdout.begin(), split.holdout.end());
  std::set<int> train_classes;
  for (std::size_t r : split.train) train_classes.insert(y[r]);
  if (split.holdout.empty() || train_classes.size() < 2) {
    split.train = iota_indices(n);
    split.holdout.clear();
  }
  return split;
}

bool EarlyStopper::update(double loss) {
  if (loss < best - tol) {
    best = loss;
    stale = 0;
  } else {
    ++stale;
  }
  return stale >= patience;
}

}  // namespace detail

ModelPtr fit(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes) {
  detail::validate_spec(spec);
  detail::validate_training_input(x, y, n_classes);
  if (spec.family == ModelFamily::gbt) return detail::fit_gbt(spec, x, y, n_classes);
  // klm and knn snapshots are cheap; fit drains the stream so the two paths
  // share one training loop.
  ModelStream stream = staged_fit(spec, x, y, n_classes);
  ModelPtr last;
  while (ModelPtr m = stream.next()) last = std::move(m);
  return last;
}

ModelStream staged_fit(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y,
                       int n_classes) {
  detail::validate_spec(spec);
  detail::validate_training_input(x, y, n_classes);
  switch (spec.family) {
    case ModelFamily::klm: return ModelStream(detail::make_klm_stream(spec, x, y, n_classes));
    case ModelFamily::gbt: return ModelStream(detail::make_gbt_stream(spec, x, y, n_classes));
    case ModelFamily::knn: return ModelStream(detail::make_knn_stream(spec, x, y, n_classes));
  }
  throw Error("unsupported model family");
}

Vector parameter_gradient(const FittedModel& model, const Eigen::RowVectorXd& x, int y) {
  const auto* klm = dynamic_cast<const KlmModel*>(&model);
  if (!klm) throw Error("parameter gradients require a klm model, got " + to_string(model.family()));
  return klm->parameter_gradient(x, y);
}

ModelPtr model_from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != "labelprobe.model") throw Error("not a labelprobe model document");
  if (doc.value("version", 0) != 1) throw Error("unsupported model document version");
  switch (parse_model_family(doc.at("family").get<std::string>())) {
    case ModelFamily::klm: return KlmModel::from_json(doc);
    case ModelFamily::gbt: return GbtModel::from_json(doc);
    case ModelFamily::knn: return KnnModel::from_json(doc);
  }
  throw Error("unsupported model family");
}

}  // namespace labelprobe
