#include <algorithm>
#include <limits>
#include <queue>

#include "labelprobe/models.hpp"
#include "models_internal.hpp"

namespace labelprobe {

/// Static kd-tree over the stored rows. Queries return neighbours ordered by
/// (distance, index) so ties resolve toward the lower stored index.
class KdTree {
 public:
  using Hit = std::pair<double, std::size_t>;

  explicit KdTree(Matrix points) : points_(std::move(points)) {
    order_ = iota_indices(static_cast<std::size_t>(points_.rows()));
    if (!order_.empty()) build(0, order_.size());
  }

  const Matrix& points() const { return points_; }
  std::size_t size() const { return order_.size(); }

  /// Up to k nearest rows to `q`, skipping stored row `skip`.
  std::vector<Hit> query(const double* q, std::size_t k,
                         std::size_t skip = std::numeric_limits<std::size_t>::max()) const {
    std::priority_queue<Hit> heap;
    if (!nodes_.empty() && k > 0) search(0, q, k, skip, heap);
    std::vector<Hit> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back(heap.top());
      heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 16;

  struct Node {
    std::size_t begin = 0, end = 0;
    int dim = -1;
    double split = 0.0;
    int left = -1, right = -1;
    Eigen::RowVectorXd lo, hi;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Eigen::RowVectorXd::Constant(points_.cols(), std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::size_t i = begin; i < end; ++i) {
      node.lo = node.lo.cwiseMin(points_.row(static_cast<Eigen::Index>(order_[i])));
      node.hi = node.hi.cwiseMax(points_.row(static_cast<Eigen::Index>(order_[i])));
    }
    if (end - begin > kLeafSize && points_.cols() > 0) {
      Eigen::Index dim = 0;
      const double spread = (node.hi - node.lo).maxCoeff(&dim);
      if (spread > 0.0) {
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t a, std::size_t b) {
                           return points_(static_cast<Eigen::Index>(a), dim) <
                                  points_(static_cast<Eigen::Index>(b), dim);
                         });
        node.dim = static_cast<int>(dim);
        node.split = points_(static_cast<Eigen::Index>(order_[mid]), dim);
        nodes_[static_cast<std::size_t>(id)] = node;
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[static_cast<std::size_t>(id)].left = left;
        nodes_[static_cast<std::size_t>(id)].right = right;
        return id;
      }
    }
    nodes_[static_cast<std::size_t>(id)] = std::move(node);
    return id;
  }

  double box_distance(const Node& node, const double* q) const {
    double d = 0.0;
    for (Eigen::Index j = 0; j < points_.cols(); ++j) {
      double gap = 0.0;
      if (q[j] < node.lo(j)) gap = node.lo(j) - q[j];
      else if (q[j] > node.hi(j)) gap = q[j] - node.hi(j);
      d += gap * gap;
    }
    return d;
  }

  void search(int id, const double* q, std::size_t k, std::size_t skip,
              std::priority_queue<Hit>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (heap.size() == k && box_distance(node, q) > heap.top().first) return;
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t r = order_[i];
        if (r == skip) continue;
        double d = 0.0;
        for (Eigen::Index j = 0; j < points_.cols(); ++j) {
          const double diff = points_(static_cast<Eigen::Index>(r), j) - q[j];
          d += diff * diff;
        }
        const Hit hit{d, r};
        if (heap.size() < k) {
          heap.push(hit);
        } else if (hit < heap.top()) {
          heap.pop();
          heap.push(hit);
        }
      }
      return;
    }
    const bool go_left = q[node.dim] <= node.split;
    search(go_left ? node.left : node.right, q, k, skip, heap);
    search(go_left ? node.right : node.left, q, k, skip, heap);
  }

  Matrix points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

KnnModel::KnnModel(std::shared_ptr<const KdTree> index, Labels labels, int k, int n_classes, int n_features)
    : FittedModel(n_classes, n_features), index_(std::move(index)), labels_(std::move(labels)), k_(k) {
  if (k_ < 1) throw Error("knn needs k >= 1");
  if (labels_.size() != index_->size()) throw Error("knn labels do not match stored rows");
}

Matrix KnnModel::decision_scores(const Matrix& x) const { return predict_proba(x); }

Matrix KnnModel::predict_proba(const Matrix& x) const {
  check_dims(x);
  const std::size_t skip = skip_.value_or(std::numeric_limits<std::size_t>::max());
  const bool cached = cache_ && cache_->key == MatrixKey::of(x);
  Matrix proba = Matrix::Zero(x.rows(), n_classes_);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::size_t used = 0;
    if (cached) {
      for (std::size_t r : cache_->neighbours[static_cast<std::size_t>(i)]) {
        if (r == skip) continue;
        if (used == static_cast<std::size_t>(k_)) break;
        proba(i, labels_[r]) += 1.0;
        ++used;
      }
    } else {
      for (const auto& hit : index_->query(x.row(i).data(), static_cast<std::size_t>(k_), skip)) {
        proba(i, labels_[hit.second]) += 1.0;
        ++used;
      }
    }
    if (used > 0) proba.row(i) /= static_cast<double>(used);
  }
  return proba;
}

std::shared_ptr<const NeighbourCache> KnnModel::neighbour_cache(const Matrix& x) const {
  check_dims(x);
  auto cache = std::make_shared<NeighbourCache>();
  cache->key = MatrixKey::of(x);
  cache->neighbours.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto& list = cache->neighbours[static_cast<std::size_t>(i)];
    for (const auto& hit : index_->query(x.row(i).data(), static_cast<std::size_t>(k_) + 1)) {
      list.push_back(hit.second);
    }
  }
  return cache;
}

std::shared_ptr<const KnnModel> KnnModel::without_row(std::size_t row,
                                                      std::shared_ptr<const NeighbourCache> cache) const {
  if (row >= labels_.size()) throw Error("knn: row out of range");
  auto view = std::make_shared<KnnModel>(*this);
  view->skip_ = row;
  view->cache_ = std::move(cache);
  return view;
}

nlohmann::json KnnModel::to_json() const {
  nlohmann::json doc;
  doc["format"] = "labelprobe.model";
  doc["version"] = 1;
  doc["family"] = "knn";
  doc["n_classes"] = n_classes_;
  doc["n_features"] = n_features_;
  doc["k"] = k_;
  doc["labels"] = labels_;
  const Matrix& pts = index_->points();
  doc["points"] = std::vector<double>(pts.data(), pts.data() + pts.size());
  if (skip_) doc["skip"] = *skip_;
  return doc;
}

std::shared_ptr<KnnModel> KnnModel::from_json(const nlohmann::json& doc) {
  const int d = doc.at("n_features").get<int>();
  const auto labels = doc.at("labels").get<Labels>();
  const auto flat = doc.at("points").get<std::vector<double>>();
  if (flat.size() != labels.size() * static_cast<std::size_t>(d)) throw Error("knn model: points do not match labels");
  Matrix pts = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(labels.size()), d);
  auto index = std::make_shared<const KdTree>(std::move(pts));
  auto model = std::make_shared<KnnModel>(index, labels, doc.at("k").get<int>(), doc.at("n_classes").get<int>(), d);
  if (doc.contains("skip")) model->skip_ = doc.at("skip").get<std::size_t>();
  return model;
}

namespace detail {

namespace {

/// Snapshot t uses k = t; the index is shared.
class KnnStream final : public StreamState {
 public:
  KnnStream(const BaseModelSpec& spec, const Matrix& x, std::span<const int> y, int n_classes)
      : index_(std::make_shared<const KdTree>(x)),
        labels_(y.begin(), y.end()),
        k_max_(spec.k),
        n_classes_(n_classes),
        n_features_(static_cast<int>(x.cols())) {}

  ModelPtr next() override {
    if (k_ >= k_max_) return nullptr;
    ++k_;
    auto model = std::make_shared<KnnModel>(index_, labels_, k_, n_classes_, n_features_);
    TrainingMeta meta;
    meta.iterations = k_;
    model->set_meta(std::move(meta));
    return model;
  }

 private:
  std::shared_ptr<const KdTree> index_;
  Labels labels_;
  int k_max_;
  int n_classes_;
  int n_features_;
  int k_ = 0;
};

}  // namespace

std::unique_ptr<StreamState> make_knn_stream(const BaseModelSpec& spec, const Matrix& x,
                                             std::span<const int> y, int n_classes) {
  return std::make_unique<KnnStream>(spec, x, y, n_classes);
}

}  // namespace detail

}  // namespace labelprobe
