#include <algorithm>
#include <cmath>
#include <numeric>

#include "labelprobe/models.hpp"
#include "models_internal.hpp"

namespace labelprobe {

double RegressionTree::predict(const double* row) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
    node = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

int RegressionTree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TreeNode& nd = nodes[i];
    if (nd.feature < 0) continue;
    level[static_cast<std::size_t>(nd.left)] = level[i] + 1;
    level[static_cast<std::size_t>(nd.right)] = level[i] + 1;
    deepest = std::max(deepest, level[i] + 1);
  }
  return deepest;
}

GbtModel::GbtModel(std::shared_ptr<const TreeEnsemble> ensemble, int rounds, double lr, int n_features)
    : FittedModel(ensemble->n_classes, n_features),
      ensemble_(std::move(ensemble)),
      rounds_(rounds),
      learning_rate_(lr) {
  if (tree_count() > ensemble_->trees.size()) throw Error("gbt snapshot exceeds trained rounds");
}

Matrix GbtModel::decision_scores(const Matrix& x) const {
  check_dims(x);
  if (cache_key_ && *cache_key_ == MatrixKey::of(x)) return cached_scores_;
  const auto n = x.rows();
  const int c = n_classes_;
  Matrix raw(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* row = x.row(i).data();
    for (int k = 0; k < c; ++k) raw(i, k) = ensemble_->init(k);
    for (int t = 0; t < rounds_; ++t) {
      for (int k = 0; k < c; ++k) {
        raw(i, k) += ensemble_->trees[static_cast<std::size_t>(t * c + k)].predict(row);
      }
    }
  }
  return raw;
}

nlohmann::json GbtModel::to_json() const {
  nlohmann::json doc;
  doc["format"] = "labelprobe.model";
  doc["version"] = 1;
  doc["family"] = "gbt";
  doc["n_classes"] = n_classes_;
  doc["n_features"] = n_features_;
  doc["learning_rate"] = learning_rate_;
  doc["rounds"] = rounds_;
  doc["init"] = std::vector<double>(ensemble_->init.data(), ensemble_->init.data() + ensemble_->init.size());
  auto& trees = doc["trees"] = nlohmann::json::array();
  for (std::size_t t = 0; t < tree_count(); ++t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& nd : ensemble_->trees[t].nodes) {
      nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.value});
    }
    trees.push_back(std::move(nodes));
  }
  return doc;
}

std::shared_ptr<GbtModel> GbtModel::from_json(const nlohmann::json& doc) {
  auto ens = std::make_shared<TreeEnsemble>();
  ens->n_classes = doc.at("n_classes").get<int>();
  const auto init = doc.at("init").get<std::vector<double>>();
  ens->init = Eigen::Map<const Eigen::RowVectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
  for (const auto& tree : doc.at("trees")) {
    RegressionTree rt;
    for (const auto& nd : tree) {
      rt.nodes.push_back({nd.at(0).get<int>(), nd.at(1).get<double>(), nd.at(2).get<int>(),
                          nd.at(3).get<int>(), nd.at(4).get<double>()});
    }
    ens->trees.push_back(std::move(rt));
  }
  const int rounds = doc.at("rounds").get<int>();
  auto model = std::make_shared<GbtModel>(ens, rounds, doc.at("learning_rate").get<double>(),
                                          doc.at("n_features").get<int>());
  TrainingMeta meta;
  meta.iterations = rounds;
  model->set_meta(std::move(meta));
  return model;
}

namespace detail {

namespace {

/// Second-order regression tree grown level by level. Split search walks
/// each feature's presorted order once per level.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::vector<std::size_t>>& sorted,
              const BaseModelSpec& spec)
      : x_(x), sorted_(sorted), spec_(spec) {}

  RegressionTree build(const std::vector<double>& grad, const std::vector<double>& hess) const {
    const std::size_t n = grad.size();
    RegressionTree tree;
    tree.nodes.emplace_back();
    std::vector<int> node_of(n, 0);
    std::vector<int> frontier{0};
    std::vector<double> node_g(1, 0.0), node_h(1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      node_g[0] += grad[i];
      node_h[0] += hess[i];
    }
    const double lambda = spec_.l2;

    for (int depth = 0; depth < spec_.max_depth && !frontier.empty(); ++depth) {
      const std::size_t n_nodes = tree.nodes.size();
      std::vector<char> active(n_nodes, 0);
      for (int nd : frontier) active[static_cast<std::size_t>(nd)] = 1;
      std::vector<double> best_gain(n_nodes, 1e-12);
      std::vector<int> best_feature(n_nodes, -1);
      std::vector<double> best_threshold(n_nodes, 0.0);
      std::vector<double> gl(n_nodes), hl(n_nodes), last(n_nodes);
      std::vector<std::size_t> count(n_nodes);

      for (std::size_t f = 0; f < sorted_.size(); ++f) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t r : sorted_[f]) {
          const auto nd = static_cast<std::size_t>(node_of[r]);
          if (!active[nd]) continue;
          const double v = x_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
          if (count[nd] > 0 && v > last[nd]) {
            const double gr = node_g[nd] - gl[nd];
            const double hr = node_h[nd] - hl[nd];
            if (hl[nd] >= spec_.min_child_weight && hr >= spec_.min_child_weight) {
              const double gain = gl[nd] * gl[nd] / (hl[nd] + lambda) + gr * gr / (hr + lambda) -
                                  node_g[nd] * node_g[nd] / (node_h[nd] + lambda);
              if (gain > best_gain[nd]) {
                best_gain[nd] = gain;
                best_feature[nd] = static_cast<int>(f);
                double mid = 0.5 * (last[nd] + v);
                if (!(mid < v)) mid = last[nd];
                best_threshold[nd] = mid;
              }
            }
          }
          gl[nd] += grad[r];
          hl[nd] += hess[r];
          last[nd] = v;
          ++count[nd];
        }
      }

      std::vector<int> next_frontier;
      for (int nd : frontier) {
        const auto u = static_cast<std::size_t>(nd);
        if (best_feature[u] < 0) continue;
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        TreeNode& parent = tree.nodes[u];
        parent.feature = best_feature[u];
        parent.threshold = best_threshold[u];
        parent.left = left;
        parent.right = left + 1;
        next_frontier.push_back(left);
        next_frontier.push_back(left + 1);
      }
      node_g.assign(tree.nodes.size(), 0.0);
      node_h.assign(tree.nodes.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        int nd = node_of[i];
        const TreeNode& parent = tree.nodes[static_cast<std::size_t>(nd)];
        if (parent.feature >= 0 && active[static_cast<std::size_t>(nd)]) {
          nd = x_(static_cast<Eigen::Index>(i), parent.feature) <= parent.threshold ? parent.left : parent.right;
          node_of[i] = nd;
        }
        node_g[static_cast<std::size_t>(nd)] += grad[i];
        node_h[static_cast<std::size_t>(nd)] += hess[i];
      }
      frontier = std::move(next_frontier);
    }

    std::vector<double> g(tree.nodes.size(), 0.0), h(tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      g[static_cast<std::size_t>(node_of[i])] += grad[i];
      h[static_cast<std::size_t>(node_of[i])] += hess[i];
    }
    for (std::size_t u = 0; u < tree.nodes.size(); ++u) {
      TreeNode& nd = tree.nodes[u];
      if (nd.feature >= 0) continue;
      const double denom = std::max(h[u] + lambda, spec_.min_child_weight);
      nd.value = -spec_.learning_rate * g[u] / denom;
    }
    return tree;
  }

 private:
  const Matrix& x_;
  const std::vector<std::vector<std::size_t>>& sorted_;
  const BaseModelSpec& spec_;
};

struct GbtFit {
  std::shared_ptr<const TreeEnsemble> ensemble;
  TrainingMeta meta;
};

double rows_log_loss(const Matrix& raw, std::span<const int> y, std::span<const std::size_t> rows) {
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::RowVectorXd p = raw.row(static_cast<Eigen::Index>(i));
    softmax_inplace(p);
    loss -= std::log(std::max(p(y[rows[i]]), kProbClamp));
  }
  return loss / static_cast<double>(rows.size());
}

GbtFit train_gbt(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes) {
  const HoldoutSplit split = carve_holdout(y, n_classes, spec);
  const Matrix xt = gather_rows(x, split.train);
  const Matrix xh = gather_rows(x, split.holdout);
  const Labels yt = gather(y, split.train);
  const std::size_t n = split.train.size();

  std::vector<std::vector<std::size_t>> sorted(static_cast<std::size_t>(x.cols()));
  for (std::size_t f = 0; f < sorted.size(); ++f) {
    sorted[f] = iota_indices(n);
    std::stable_sort(sorted[f].begin(), sorted[f].end(), [&](std::size_t a, std::size_t b) {
      return xt(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(f)) <
             xt(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f));
    });
  }

  auto ens = std::make_shared<TreeEnsemble>();
  ens->n_classes = n_classes;
  const auto counts = class_counts(yt, n_classes);
  ens->init.resize(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    const double prior = static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(n);
    ens->init(k) = std::log(std::max(prior, kProbClamp));
  }

  Matrix raw_train = ens->init.replicate(static_cast<Eigen::Index>(n), 1);
  Matrix raw_hold = ens->init.replicate(xh.rows(), 1);
  TreeBuilder builder(xt, sorted, spec);
  EarlyStopper stopper{spec.tol, spec.patience};
  TrainingMeta meta;
  std::vector<double> grad(n), hess(n);
  Matrix proba(static_cast<Eigen::Index>(n), n_classes);

  for (int round = 0; round < spec.max_iter; ++round) {
    proba = raw_train;
    for (Eigen::Index i = 0; i < proba.rows(); ++i) softmax_inplace(proba.row(i));
    meta.train_loss.push_back(rows_log_loss(raw_train, yt, iota_indices(n)));
    for (int k = 0; k < n_classes; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = proba(static_cast<Eigen::Index>(i), k);
        grad[i] = p - (yt[i] == k ? 1.0 : 0.0);
        hess[i] = std::max(p * (1.0 - p), 1e-16);
      }
      RegressionTree tree = builder.build(grad, hess);
      for (std::size_t i = 0; i < n; ++i) raw_train(static_cast<Eigen::Index>(i), k) += tree.predict(xt.row(static_cast<Eigen::Index>(i)).data());
      for (Eigen::Index i = 0; i < xh.rows(); ++i) raw_hold(i, k) += tree.predict(xh.row(i).data());
      ens->trees.push_back(std::move(tree));
    }
    ++meta.iterations;
    if (!split.holdout.empty()) {
      const double loss = rows_log_loss(raw_hold, y, split.holdout);
      meta.holdout_loss.push_back(loss);
      if (stopper.update(loss)) break;
    }
  }
  return {std::move(ens), std::move(meta)};
}

/// Boosting trains all rounds up front; snapshots are prefixes of the same
/// trees with raw scores for the training matrix accumulated round by round.
class GbtStream final : public StreamState {
 public:
  GbtStream(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes)
      : fit_(train_gbt(spec, x, y, n_classes)), x_(x), key_(MatrixKey::of(x)), lr_(spec.learning_rate) {
    raw_ = fit_.ensemble->init.replicate(x.rows(), 1);
  }

  ModelPtr next() override {
    if (round_ >= fit_.meta.iterations) return nullptr;
    const int c = fit_.ensemble->n_classes;
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      const double* row = x_.row(i).data();
      for (int k = 0; k < c; ++k) {
        raw_(i, k) += fit_.ensemble->trees[static_cast<std::size_t>(round_ * c + k)].predict(row);
      }
    }
    ++round_;
    auto model = std::make_shared<GbtModel>(fit_.ensemble, round_, lr_, static_cast<int>(x_.cols()));
    TrainingMeta meta = fit_.meta;
    meta.iterations = round_;
    meta.holdout_loss.resize(std::min(meta.holdout_loss.size(), static_cast<std::size_t>(round_)));
    meta.train_loss.resize(std::min(meta.train_loss.size(), static_cast<std::size_t>(round_)));
    model->set_meta(std::move(meta));
    model->attach_score_cache(key_, raw_);
    return model;
  }

 private:
  GbtFit fit_;
  Matrix x_;
  MatrixKey key_;
  double lr_;
  Matrix raw_;
  int round_ = 0;
};

}  // namespace

ModelPtr fit_gbt(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes) {
  GbtFit fit = train_gbt(spec, x, y, n_classes);
  auto model = std::make_shared<GbtModel>(fit.ensemble, fit.meta.iterations, spec.learning_rate,
                                          static_cast<int>(x.cols()));
  model->set_meta(std::move(fit.meta));
  return model;
}

std::unique_ptr<StreamState> make_gbt_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes) {
  return std::make_unique<GbtStream>(spec, x, y, n_classes);
}

}  // namespace detail

}  // namespace labelprobe
