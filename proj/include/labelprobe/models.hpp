#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labelprobe/core.hpp"
#include "labelprobe/dataset.hpp"

namespace labelprobe {

enum class ModelFamily { klm, gbt, knn };

std::string to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view name);

enum class KernelKind { rbf, linear };

/// Hyperparameters for one base model. Fields not used by a family are
/// ignored by it but still part of the canonical description.
struct BaseModelSpec {
  ModelFamily family = ModelFamily::klm;
  std::uint64_t seed = 0;

  // shared by klm and gbt
  double learning_rate = 0.05;
  int max_iter = 1000;
  bool early_stopping = true;
  int patience = 5;
  double validation_fraction = 0.1;
  /// Minimum holdout log-loss decrease counted as an improvement.
  double tol = 1e-3;

  // klm
  double alpha = 1e-4;
  KernelKind kernel = KernelKind::rbf;
  int n_components = 100;

  // gbt
  double l2 = 1.0;
  int max_depth = 3;
  double min_child_weight = 1e-3;

  // knn
  int k = 5;

  static BaseModelSpec klm_defaults();
  static BaseModelSpec gbt_defaults();
  static BaseModelSpec knn_defaults();
  static BaseModelSpec defaults(ModelFamily family);

  /// Stable textual form used in fingerprints; only fields the family reads.
  std::string canonical() const;
  nlohmann::json to_json() const;
  static BaseModelSpec from_json(const nlohmann::json& doc);
};

/// Draws the searched hyperparameters of `base` from the family's space:
/// klm alpha ~ logU[1e-5, 1e-1], learning rate ~ logU[1e-3, 1];
/// gbt l2 ~ U[0, 100], learning rate ~ logU[1e-5, 1e-1]. knn is not searched.
BaseModelSpec sample_hyperparameters(const BaseModelSpec& base, Rng& rng);

/// Training trace kept with every fitted model.
struct TrainingMeta {
  int iterations = 0;
  std::vector<double> holdout_loss;
  std::vector<double> train_loss;
};

/// A trained classifier. Instances are immutable once constructed.
class FittedModel {
 public:
  virtual ~FittedModel() = default;

  virtual ModelFamily family() const = 0;
  int n_classes() const { return n_classes_; }
  int n_features() const { return n_features_; }

  /// Raw per-class scores: logits for klm/gbt, probabilities for knn.
  virtual Matrix decision_scores(const Matrix& x) const = 0;
  virtual Matrix predict_proba(const Matrix& x) const;
  virtual bool has_logits() const { return true; }

  /// d p_c(x) / d x for one row.
  virtual Eigen::RowVectorXd input_gradient(const Eigen::RowVectorXd& x, int cls) const;
  /// Row i holds d p_{classes[i]}(x_i) / d x_i.
  virtual Matrix input_gradients(const Matrix& x, std::span<const int> classes) const;
  virtual bool analytic_input_gradient() const { return false; }

  virtual double learning_rate() const { return 0.0; }
  const TrainingMeta& meta() const { return meta_; }
  void set_meta(TrainingMeta meta) { meta_ = std::move(meta); }

  virtual nlohmann::json to_json() const = 0;

 protected:
  FittedModel(int n_classes, int n_features) : n_classes_(n_classes), n_features_(n_features) {}
  void check_dims(const Matrix& x) const;

  int n_classes_;
  int n_features_;
  TrainingMeta meta_;
};

using ModelPtr = std::shared_ptr<const FittedModel>;

/// Central finite differences with step 1e-3 * (1 + |x_j|).
Eigen::RowVectorXd finite_difference_input_gradient(const FittedModel& model,
                                                    const Eigen::RowVectorXd& x, int cls);

/// Key identifying a matrix by shape and content; used by prediction caches.
struct MatrixKey {
  Eigen::Index rows = -1;
  Eigen::Index cols = -1;
  std::uint64_t digest = 0;

  static MatrixKey of(const Matrix& x);
  bool operator==(const MatrixKey&) const = default;
};

// ---------------------------------------------------------------------------

/// Multinomial softmax regression over an optional random-Fourier map,
/// trained by per-example SGD with constant learning rate and l2 penalty.
class KlmModel final : public FittedModel {
 public:
  KlmModel(FeatureMap map, Matrix weights, Eigen::RowVectorXd bias, double alpha, double lr,
           int n_features);

  ModelFamily family() const override { return ModelFamily::klm; }
  Matrix decision_scores(const Matrix& x) const override;
  Eigen::RowVectorXd input_gradient(const Eigen::RowVectorXd& x, int cls) const override;
  Matrix input_gradients(const Matrix& x, std::span<const int> classes) const override;
  bool analytic_input_gradient() const override { return true; }
  double learning_rate() const override { return learning_rate_; }

  const Matrix& weights() const { return weights_; }
  const Eigen::RowVectorXd& bias() const { return bias_; }
  double alpha() const { return alpha_; }
  const FeatureMap& feature_map() const { return map_; }
  int n_parameters() const { return static_cast<int>(weights_.size() + bias_.size()); }

  /// Feature-space representation phi(x), n x D.
  Matrix features(const Matrix& x) const;

  /// Gradient of -log p_y(x) + alpha/2 ||W||^2 w.r.t. [w_0, b_0, w_1, b_1, ...].
  Vector parameter_gradient(const Eigen::RowVectorXd& x, int y) const;
  /// One gradient per row, n x n_parameters. Without the penalty each row
  /// is the gradient of the example's log-loss alone.
  Matrix parameter_gradients(const Matrix& x, std::span<const int> y, bool with_penalty = true) const;
  /// Gauss-Newton matrix of the mean regularised log-loss over `x`.
  Matrix gauss_newton(const Matrix& x) const;

  /// Loss whose gradient parameter_gradient returns, at given parameters.
  static double example_loss(const Matrix& weights, const Eigen::RowVectorXd& bias, double alpha,
                             const Eigen::RowVectorXd& phi, int y);

  nlohmann::json to_json() const override;
  static std::shared_ptr<KlmModel> from_json(const nlohmann::json& doc);

  void attach_feature_cache(std::shared_ptr<const std::pair<MatrixKey, Matrix>> cache) {
    feature_cache_ = std::move(cache);
  }

 private:
  const Matrix& features_cached(const Matrix& x, Matrix& storage) const;

  FeatureMap map_;
  Matrix weights_;  // C x D
  Eigen::RowVectorXd bias_;
  double alpha_;
  double learning_rate_;
  std::shared_ptr<const std::pair<MatrixKey, Matrix>> feature_cache_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(const double* row) const;
  int depth() const;
};

/// Trees of a gradient boosted model: round-major, one tree per class.
struct TreeEnsemble {
  int n_classes = 0;
  Eigen::RowVectorXd init;  // log class priors
  std::vector<RegressionTree> trees;
};

/// A prefix of a boosted ensemble; snapshot t holds the first t rounds.
class GbtModel final : public FittedModel {
 public:
  GbtModel(std::shared_ptr<const TreeEnsemble> ensemble, int rounds, double lr, int n_features);

  ModelFamily family() const override { return ModelFamily::gbt; }
  Matrix decision_scores(const Matrix& x) const override;
  double learning_rate() const override { return learning_rate_; }

  int rounds() const { return rounds_; }
  std::size_t tree_count() const { return static_cast<std::size_t>(rounds_) * static_cast<std::size_t>(n_classes_); }
  const TreeEnsemble& ensemble() const { return *ensemble_; }

  nlohmann::json to_json() const override;
  static std::shared_ptr<GbtModel> from_json(const nlohmann::json& doc);

  void attach_score_cache(MatrixKey key, Matrix scores) {
    cache_key_ = key;
    cached_scores_ = std::move(scores);
  }

 private:
  std::shared_ptr<const TreeEnsemble> ensemble_;
  int rounds_;
  double learning_rate_;
  std::optional<MatrixKey> cache_key_;
  Matrix cached_scores_;
};

class KdTree;

struct NeighbourCache {
  MatrixKey key;
  std::vector<std::vector<std::size_t>> neighbours;  // ordered by (distance, index)
};

/// k-nearest-neighbour vote over stored training rows (Euclidean distance,
/// ties broken toward the lower stored index).
class KnnModel final : public FittedModel {
 public:
  KnnModel(std::shared_ptr<const KdTree> index, Labels labels, int k, int n_classes, int n_features);

  ModelFamily family() const override { return ModelFamily::knn; }
  Matrix decision_scores(const Matrix& x) const override;
  Matrix predict_proba(const Matrix& x) const override;
  bool has_logits() const override { return false; }
  int k() const { return k_; }
  std::size_t n_stored() const { return labels_.size(); }

  /// The k+1 nearest stored rows of every row of `x`, shared by the
  /// leave-one-out views below.
  std::shared_ptr<const NeighbourCache> neighbour_cache(const Matrix& x) const;

  /// Exactly the model refitted without stored row `row`.
  std::shared_ptr<const KnnModel> without_row(std::size_t row,
                                              std::shared_ptr<const NeighbourCache> cache) const;

  nlohmann::json to_json() const override;
  static std::shared_ptr<KnnModel> from_json(const nlohmann::json& doc);

 private:
  std::shared_ptr<const KdTree> index_;
  Labels labels_;
  int k_;
  std::optional<std::size_t> skip_;
  std::shared_ptr<const NeighbourCache> cache_;
};

// ---------------------------------------------------------------------------

class StreamState {
 public:
  virtual ~StreamState() = default;
  virtual ModelPtr next() = 0;
};

/// Lazy sequence of model snapshots, one per training iteration. Only one
/// mutable training state exists per stream.
class ModelStream {
 public:
  explicit ModelStream(std::unique_ptr<StreamState> state) : state_(std::move(state)) {}

  /// nullptr once the stream is exhausted.
  ModelPtr next();
  std::size_t produced() const { return produced_; }

 private:
  std::unique_ptr<StreamState> state_;
  std::size_t produced_ = 0;
};

/// Trains a model. `n_classes` fixes the output width even when `y` misses
/// some classes.
ModelPtr fit(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes);

/// Snapshots of the same training run fit() performs; the last one predicts
/// exactly as fit() does.
ModelStream staged_fit(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y,
                       int n_classes);

/// klm only; throws for other families.
Vector parameter_gradient(const FittedModel& model, const Eigen::RowVectorXd& x, int y);

ModelPtr model_from_json(const nlohmann::json& doc);

double log_loss(const Matrix& proba, std::span<const int> y);

}  // namespace labelprobe
