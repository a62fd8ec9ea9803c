#include "labelprobe/noise.hpp"

#include <algorithm>

namespace labelprobe {

Labels inject_ncar(std::span<const int> labels, int n_classes, double rate, std::uint64_t seed,
                   bool allow_self_flip) {
  if (n_classes < 2) throw Error("NCAR noise needs at least 2 classes");
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("noise rate must lie in [0, 1]");
  Rng rng(seed);
  Labels out(labels.begin(), labels.end());
  for (int& y : out) {
    if (y < 0 || y >= n_classes) throw Error("label " + std::to_string(y) + " outside [0, K)");
    // Draw unconditionally so the stream does not depend on earlier outcomes.
    const bool flip = uniform01(rng) < rate;
    if (allow_self_flip) {
      const auto c = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_classes)));
      if (flip) y = c;
    } else {
      const auto c = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_classes - 1)));
      if (flip) y = c >= y ? c + 1 : c;
    }
  }
  return out;
}

WeakLabels aggregate_weak_labels(const RuleVotes& votes, int n_classes, std::uint64_t seed) {
  Rng rng(seed);
  WeakLabels out;
  const auto n = votes.rows();
  out.labels.assign(static_cast<std::size_t>(n), kAbstain);
  out.covered.assign(static_cast<std::size_t>(n), false);
  std::vector<int> tally(static_cast<std::size_t>(n_classes));
  std::vector<int> winners;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(tally.begin(), tally.end(), 0);
    int total = 0;
    for (Eigen::Index j = 0; j < votes.cols(); ++j) {
      const int v = votes(i, j);
      if (v == kAbstain) continue;
      if (v < 0 || v >= n_classes) throw Error("rule vote " + std::to_string(v) + " outside [0, K)");
      ++tally[static_cast<std::size_t>(v)];
      ++total;
    }
    if (total == 0) continue;
    const int best = *std::max_element(tally.begin(), tally.end());
    winners.clear();
    for (int c = 0; c < n_classes; ++c) {
      if (tally[static_cast<std::size_t>(c)] == best) winners.push_back(c);
    }
    const auto row = static_cast<std::size_t>(i);
    out.labels[row] = winners.size() == 1 ? winners[0] : winners[uniform_index(rng, winners.size())];
    out.covered[row] = true;
  }
  return out;
}

nlohmann::json TransitionMatrix::to_json() const {
  nlohmann::json doc;
  doc["row_labels"] = row_labels;
  doc["column_labels"] = column_labels;
  auto& rows = doc["values"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::vector<double> row(values.row(i).data(), values.row(i).data() + values.cols());
    rows.push_back(row);
  }
  return doc;
}

TransitionMatrix estimate_transition_matrix(std::span<const int> noisy, std::span<const int> clean,
                                            int n_classes, bool with_unlabeled_row) {
  if (noisy.size() != clean.size()) throw Error("noisy and clean label vectors differ in length");
  const int rows = n_classes + (with_unlabeled_row ? 1 : 0);
  Matrix counts = Matrix::Zero(rows, n_classes);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const int y = clean[i];
    if (y < 0 || y >= n_classes) throw Error("clean label " + std::to_string(y) + " outside [0, K)");
    int r = noisy[i];
    if (r == kAbstain) {
      if (!with_unlabeled_row) throw Error("uncovered example without an unlabeled row");
      r = n_classes;
    } else if (r < 0 || r >= n_classes) {
      throw Error("noisy label " + std::to_string(r) + " outside [0, K)");
    }
    counts(r, y) += 1.0;
  }
  TransitionMatrix t;
  t.values = counts;
  for (int j = 0; j < n_classes; ++j) {
    const double total = counts.col(j).sum();
    if (total == 0.0) throw Error("true class " + std::to_string(j) + " has no examples");
    t.values.col(j) /= total;
    t.column_labels.push_back(std::to_string(j));
  }
  for (int i = 0; i < n_classes; ++i) t.row_labels.push_back(std::to_string(i));
  if (with_unlabeled_row) t.row_labels.emplace_back("unlabeled");
  return t;
}

Dataset apply_noise(const Dataset& ds, const NoiseSpec& spec, std::vector<bool>* covered,
                    TransitionMatrix* transition) {
  const Labels truth = ds.noisy_labels;
  if (spec.kind == NoiseKind::ncar) {
    Dataset out = ds;
    out.clean_labels = truth;
    out.noisy_labels = inject_ncar(truth, ds.n_classes, spec.rate, spec.seed, spec.allow_self_flip);
    if (covered) covered->assign(ds.size(), true);
    if (transition) *transition = estimate_transition_matrix(out.noisy_labels, truth, ds.n_classes, false);
    return out;
  }
  if (ds.rules.cols() == 0) throw Error("rules noise requires rule columns");
  const WeakLabels weak = aggregate_weak_labels(ds.rules, ds.n_classes, spec.seed);
  if (transition) *transition = estimate_transition_matrix(weak.labels, truth, ds.n_classes, true);
  if (covered) *covered = weak.covered;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (weak.covered[i]) keep.push_back(i);
  }
  Dataset out = ds.subset(keep);
  out.clean_labels = gather(truth, keep);
  out.noisy_labels = gather(weak.labels, keep);
  return out;
}

}  // namespace labelprobe
