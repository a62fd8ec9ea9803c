#include <algorithm>
#include <cmath>

#include "labelprobe/models.hpp"
#include "models_internal.hpp"

namespace labelprobe {

namespace {

Eigen::RowVectorXd to_row(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

KlmModel::KlmModel(FeatureMap map, Matrix weights, Eigen::RowVectorXd bias, double alpha, double lr,
                   int n_features)
    : FittedModel(static_cast<int>(weights.rows()), n_features),
      map_(std::move(map)),
      weights_(std::move(weights)),
      bias_(std::move(bias)),
      alpha_(alpha),
      learning_rate_(lr) {}

Matrix KlmModel::features(const Matrix& x) const {
  check_dims(x);
  return map_.transform(x);
}

const Matrix& KlmModel::features_cached(const Matrix& x, Matrix& storage) const {
  if (feature_cache_ && feature_cache_->first == MatrixKey::of(x)) return feature_cache_->second;
  storage = features(x);
  return storage;
}

Matrix KlmModel::decision_scores(const Matrix& x) const {
  Matrix storage;
  const Matrix& phi = features_cached(x, storage);
  Matrix z = phi * weights_.transpose();
  z.rowwise() += bias_;
  return z;
}

Eigen::RowVectorXd KlmModel::input_gradient(const Eigen::RowVectorXd& x, int cls) const {
  if (x.size() != n_features_) throw Error("input_gradient: dimension mismatch");
  Matrix jac;  // C x d, d z / d x
  Eigen::RowVectorXd z;
  if (map_.kind == FeatureMapKind::random_fourier) {
    Eigen::RowVectorXd u = x * map_.omega + map_.phase;
    const double scale = std::sqrt(2.0 / map_.n_components);
    const Eigen::RowVectorXd phi = scale * u.array().cos().matrix();
    const Eigen::RowVectorXd dphi = -scale * u.array().sin().matrix();
    z = phi * weights_.transpose() + bias_;
    jac = (weights_.array().rowwise() * dphi.array()).matrix() * map_.omega.transpose();
  } else {
    const Eigen::RowVectorXd phi = map_.transform(Matrix(x));
    z = phi * weights_.transpose() + bias_;
    jac = weights_;
    jac.array().rowwise() /= map_.scales.array();
  }
  softmax_inplace(z);
  const Eigen::RowVectorXd mean_jac = z * jac;
  return z(cls) * (jac.row(cls) - mean_jac);
}

Matrix KlmModel::input_gradients(const Matrix& x, std::span<const int> classes) const {
  check_dims(x);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = input_gradient(x.row(i), classes[static_cast<std::size_t>(i)]);
  }
  return out;
}

Vector KlmModel::parameter_gradient(const Eigen::RowVectorXd& x, int y) const {
  return parameter_gradients(x, std::span<const int>(&y, 1)).row(0).transpose();
}

Matrix KlmModel::parameter_gradients(const Matrix& x, std::span<const int> y, bool with_penalty) const {
  Matrix storage;
  const Matrix& phi = features_cached(x, storage);
  const auto n = phi.rows();
  const auto d = phi.cols();
  const auto c = weights_.rows();
  Matrix z = phi * weights_.transpose();
  z.rowwise() += bias_;
  Matrix grads(n, c * (d + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    softmax_inplace(z.row(i));
    for (Eigen::Index k = 0; k < c; ++k) {
      const double r = z(i, k) - (k == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
      grads.row(i).segment(k * (d + 1), d) = r * phi.row(i);
      if (with_penalty) grads.row(i).segment(k * (d + 1), d) += alpha_ * weights_.row(k);
      grads(i, k * (d + 1) + d) = r;
    }
  }
  return grads;
}

Matrix KlmModel::gauss_newton(const Matrix& x) const {
  Matrix storage;
  const Matrix& phi = features_cached(x, storage);
  const auto n = phi.rows();
  const auto d = phi.cols();
  const auto c = weights_.rows();
  Matrix aug(n, d + 1);
  aug.leftCols(d) = phi;
  aug.col(d).setOnes();
  Matrix p = phi * weights_.transpose();
  p.rowwise() += bias_;
  for (Eigen::Index i = 0; i < n; ++i) softmax_inplace(p.row(i));

  const auto block = d + 1;
  Matrix h = Matrix::Zero(c * block, c * block);
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index b = a; b < c; ++b) {
      // Softmax output curvature for the (a, b) class pair.
      Vector s = (a == b) ? Vector(p.col(a).array() * (1.0 - p.col(a).array()))
                          : Vector(-(p.col(a).array() * p.col(b).array()));
      const Matrix blk = aug.transpose() * (s.asDiagonal() * aug) / static_cast<double>(n);
      h.block(a * block, b * block, block, block) = blk;
      if (a != b) h.block(b * block, a * block, block, block) = blk.transpose();
    }
  }
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index j = 0; j < d; ++j) h(a * block + j, a * block + j) += alpha_;
  }
  return h;
}

double KlmModel::example_loss(const Matrix& weights, const Eigen::RowVectorXd& bias, double alpha,
                              const Eigen::RowVectorXd& phi, int y) {
  const Eigen::RowVectorXd z = phi * weights.transpose() + bias;
  const double top = z.maxCoeff();
  const double lse = top + std::log((z.array() - top).exp().sum());
  return lse - z(y) + 0.5 * alpha * weights.squaredNorm();
}

nlohmann::json KlmModel::to_json() const {
  nlohmann::json doc;
  doc["format"] = "labelprobe.model";
  doc["version"] = 1;
  doc["family"] = "klm";
  doc["n_classes"] = n_classes_;
  doc["n_features"] = n_features_;
  doc["alpha"] = alpha_;
  doc["learning_rate"] = learning_rate_;
  doc["iterations"] = meta_.iterations;
  doc["feature_map"] = map_.to_json();
  std::vector<std::vector<double>> w;
  for (Eigen::Index i = 0; i < weights_.rows(); ++i) {
    w.emplace_back(weights_.row(i).data(), weights_.row(i).data() + weights_.cols());
  }
  doc["weights"] = w;
  doc["bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
  return doc;
}

std::shared_ptr<KlmModel> KlmModel::from_json(const nlohmann::json& doc) {
  const auto rows = doc.at("weights").get<std::vector<std::vector<double>>>();
  const int c = doc.at("n_classes").get<int>();
  if (static_cast<int>(rows.size()) != c) throw Error("klm document: weight rows differ from n_classes");
  Matrix w(c, rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) w.row(static_cast<Eigen::Index>(i)) = to_row(rows[i]);
  auto model = std::make_shared<KlmModel>(FeatureMap::from_json(doc.at("feature_map")), std::move(w),
                                          to_row(doc.at("bias").get<std::vector<double>>()),
                                          doc.at("alpha").get<double>(),
                                          doc.at("learning_rate").get<double>(),
                                          doc.at("n_features").get<int>());
  TrainingMeta meta;
  meta.iterations = doc.value("iterations", 0);
  model->set_meta(std::move(meta));
  return model;
}

// ---------------------------------------------------------------------------

namespace detail {

namespace {

class KlmStream final : public StreamState {
 public:
  KlmStream(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes)
      : spec_(spec), n_classes_(n_classes), n_features_(static_cast<int>(x.cols())), y_(y.begin(), y.end()),
        rng_(derive_seed(spec.seed, 0x56d)) {
    if (spec.kernel == KernelKind::rbf) {
      map_ = fit_random_fourier(x, spec.n_components, derive_seed(spec.seed, 0xff7));
    } else {
      map_.kind = FeatureMapKind::identity;
      map_.means = Eigen::RowVectorXd::Zero(x.cols());
      map_.scales = Eigen::RowVectorXd::Ones(x.cols());
    }
    cache_ = std::make_shared<const std::pair<MatrixKey, Matrix>>(MatrixKey::of(x), map_.transform(x));
    split_ = carve_holdout(y_, n_classes, spec);
    order_ = split_.train;
    const auto dim = cache_->second.cols();
    weights_ = Matrix::Zero(n_classes, dim);
    bias_ = Eigen::RowVectorXd::Zero(n_classes);
    stopper_.tol = spec.tol;
    stopper_.patience = spec.patience;
  }

  ModelPtr next() override {
    if (done_ || meta_.iterations >= spec_.max_iter) return nullptr;
    const double train_loss = run_epoch();
    ++meta_.iterations;
    meta_.train_loss.push_back(train_loss);
    if (!split_.holdout.empty()) {
      const double loss = holdout_loss();
      meta_.holdout_loss.push_back(loss);
      if (stopper_.update(loss)) done_ = true;
    }
    auto model = std::make_shared<KlmModel>(map_, weights_, bias_, spec_.alpha, spec_.learning_rate,
                                            n_features_);
    model->set_meta(meta_);
    model->attach_feature_cache(cache_);
    return model;
  }

 private:
  double run_epoch() {
    shuffle(order_, rng_);
    const Matrix& phi = cache_->second;
    const auto c = weights_.rows();
    const auto d = weights_.cols();
    const double eta = spec_.learning_rate;
    const double decay = 1.0 - eta * spec_.alpha;
    std::vector<double> z(static_cast<std::size_t>(c));
    double loss = 0.0;
    for (std::size_t row : order_) {
      const double* f = phi.row(static_cast<Eigen::Index>(row)).data();
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < c; ++k) {
        const double* w = weights_.row(k).data();
        double acc = bias_(k);
        for (Eigen::Index j = 0; j < d; ++j) acc += w[j] * f[j];
        z[static_cast<std::size_t>(k)] = acc;
        top = std::max(top, acc);
      }
      double total = 0.0;
      for (auto& v : z) {
        v = std::exp(v - top);
        total += v;
      }
      const int label = y_[row];
      loss -= std::log(std::max(z[static_cast<std::size_t>(label)] / total, kProbClamp));
      for (Eigen::Index k = 0; k < c; ++k) {
        const double g = z[static_cast<std::size_t>(k)] / total - (k == label ? 1.0 : 0.0);
        double* w = weights_.row(k).data();
        for (Eigen::Index j = 0; j < d; ++j) w[j] = w[j] * decay - eta * g * f[j];
        bias_(k) -= eta * g;
      }
    }
    return loss / static_cast<double>(order_.size()) + 0.5 * spec_.alpha * weights_.squaredNorm();
  }

  double holdout_loss() const {
    const Matrix& phi = cache_->second;
    double loss = 0.0;
    for (std::size_t row : split_.holdout) {
      Eigen::RowVectorXd z = phi.row(static_cast<Eigen::Index>(row)) * weights_.transpose() + bias_;
      softmax_inplace(z);
      loss -= std::log(std::max(z(y_[row]), kProbClamp));
    }
    return loss / static_cast<double>(split_.holdout.size());
  }

  BaseModelSpec spec_;
  int n_classes_;
  int n_features_;
  Labels y_;
  Rng rng_;
  FeatureMap map_;
  std::shared_ptr<const std::pair<MatrixKey, Matrix>> cache_;
  HoldoutSplit split_;
  std::vector<std::size_t> order_;
  Matrix weights_;
  Eigen::RowVectorXd bias_;
  EarlyStopper stopper_;
  TrainingMeta meta_;
  bool done_ = false;
};

}  // namespace

std::unique_ptr<StreamState> make_klm_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes) {
  return std::make_unique<KlmStream>(spec, x, y, n_classes);
}

}  // namespace detail

}  // namespace labelprobe
