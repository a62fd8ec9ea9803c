#include "labelprobe/ensemble.hpp"

#include <charconv>
#include <memory>

#include "models_internal.hpp"

namespace labelprobe {

namespace {

int parse_count(std::string_view text, std::string_view what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error("ensemble " + std::string(what) + " count '" + std::string(text) + "' is not an integer");
  }
  return value;
}

std::vector<std::size_t> rows_where(const std::vector<char>& mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return rows;
}

BaseModelSpec member_spec(const BaseModelSpec& spec, std::size_t member) {
  BaseModelSpec s = spec;
  s.seed = derive_seed(spec.seed, member + 1);
  return s;
}

}  // namespace

EnsembleStrategy EnsembleStrategy::bootstrap(int n_models, std::uint64_t seed) {
  EnsembleStrategy s;
  s.kind = EnsembleKind::bootstrap;
  s.n_models = n_models;
  s.seed = seed;
  return s;
}

EnsembleStrategy EnsembleStrategy::kfold(int k, std::uint64_t seed) {
  EnsembleStrategy s;
  s.kind = EnsembleKind::kfold;
  s.k = k;
  s.seed = seed;
  return s;
}

EnsembleStrategy EnsembleStrategy::loo() {
  EnsembleStrategy s;
  s.kind = EnsembleKind::loo;
  return s;
}

EnsembleStrategy EnsembleStrategy::progressive() {
  EnsembleStrategy s;
  s.kind = EnsembleKind::progressive;
  return s;
}

EnsembleStrategy EnsembleStrategy::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  EnsembleStrategy s;
  if (head == "none") {
    s.kind = EnsembleKind::none;
  } else if (head == "loo") {
    s.kind = EnsembleKind::loo;
  } else if (head == "progressive") {
    s.kind = EnsembleKind::progressive;
  } else if (head == "bootstrap") {
    s.kind = EnsembleKind::bootstrap;
    if (!arg.empty()) s.n_models = parse_count(arg, "bootstrap");
  } else if (head == "kfold") {
    s.kind = EnsembleKind::kfold;
    if (!arg.empty()) s.k = parse_count(arg, "kfold");
  } else {
    throw Error("unknown ensemble '" + std::string(text) +
                "' (expected none, bootstrap:<n>, kfold:<k>, loo or progressive)");
  }
  if (!arg.empty() && s.kind != EnsembleKind::bootstrap && s.kind != EnsembleKind::kfold) {
    throw Error("ensemble '" + std::string(head) + "' takes no argument");
  }
  s.validate();
  return s;
}

std::string EnsembleStrategy::to_string() const {
  switch (kind) {
    case EnsembleKind::none: return "none";
    case EnsembleKind::bootstrap: return "bootstrap:" + std::to_string(n_models);
    case EnsembleKind::kfold: return "kfold:" + std::to_string(k);
    case EnsembleKind::loo: return "loo";
    case EnsembleKind::progressive: return "progressive";
  }
  return "?";
}

void EnsembleStrategy::validate() const {
  if (kind == EnsembleKind::bootstrap && n_models < 1) throw Error("bootstrap needs at least one model");
  if (kind == EnsembleKind::kfold && k < 2) throw Error("kfold needs k >= 2");
}

std::optional<ProbeMember> ProbeStream::next() {
  if (done_) return std::nullopt;
  auto member = producer_();
  if (!member) {
    done_ = true;
    expected_ = produced_;
    producer_ = nullptr;
    return std::nullopt;
  }
  ++produced_;
  return member;
}

std::vector<int> kfold_assignment(std::span<const int> y, int n_classes, int k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6b66));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < y.size(); ++i) by_class[static_cast<std::size_t>(y[i])].push_back(i);
  std::vector<int> fold(y.size(), 0);
  std::size_t next = 0;
  for (auto& rows : by_class) {
    shuffle(rows, rng);
    for (std::size_t r : rows) fold[r] = static_cast<int>(next++ % static_cast<std::size_t>(k));
  }
  return fold;
}

std::vector<char> bootstrap_mask(std::size_t n, std::uint64_t seed, std::size_t member,
                                 std::vector<std::size_t>* draws) {
  Rng rng(derive_seed(seed, member));
  std::vector<char> mask(n, 0);
  if (draws) draws->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = uniform_index(rng, n);
    mask[r] = 1;
    if (draws) draws->push_back(r);
  }
  return mask;
}

ProbeStream probe_model(const EnsembleStrategy& strategy, const BaseModelSpec& spec, const Matrix& x,
                        std::span<const int> y, int n_classes, ProbeKind probe,
                        std::span<const std::size_t> fit_rows) {
  strategy.validate();
  detail::validate_training_input(x, y, n_classes);
  check_probe_capabilities(probe, spec.family);
  const std::size_t n = y.size();
  const int width = probe_width(probe, static_cast<int>(x.cols()));
  // The stream may outlive the caller's buffers.
  auto data = std::make_shared<const std::pair<Matrix, Labels>>(x, Labels(y.begin(), y.end()));
  auto pool = std::make_shared<const std::vector<std::size_t>>(
      fit_rows.empty() ? iota_indices(n) : std::vector<std::size_t>(fit_rows.begin(), fit_rows.end()));
  for (std::size_t r : *pool) {
    if (r >= n) throw Error("probe_model: fit row " + std::to_string(r) + " out of range");
  }
  const std::size_t m = pool->size();
  const bool full = fit_rows.empty();
  const Matrix xs = full ? Matrix() : gather_rows(x, *pool);
  const Labels ys = full ? Labels() : gather(y, *pool);
  const Matrix& x_fit = full ? x : xs;
  const std::span<const int> y_fit = full ? y : std::span<const int>(ys);
  detail::validate_training_input(x_fit, y_fit, n_classes);

  auto probe_full = [data, probe](const FittedModel& model, std::size_t index) {
    return run_probe(probe, model, data->first, data->second, index);
  };
  // Mask over all n rows from a mask over the fit pool.
  auto lift = [pool, n](const std::vector<char>& local) {
    std::vector<char> mask(n, 0);
    for (std::size_t j = 0; j < local.size(); ++j) mask[(*pool)[j]] = local[j];
    return mask;
  };
  auto fit_local = [data, pool, n_classes](const BaseModelSpec& s, const std::vector<std::size_t>& local) {
    std::vector<std::size_t> rows(local.size());
    for (std::size_t j = 0; j < local.size(); ++j) rows[j] = (*pool)[local[j]];
    return fit(s, gather_rows(data->first, rows), gather(data->second, rows), n_classes);
  };

  switch (strategy.kind) {
    case EnsembleKind::none: {
      auto fired = std::make_shared<bool>(false);
      return ProbeStream(
          [=]() -> std::optional<ProbeMember> {
            if (*fired) return std::nullopt;
            *fired = true;
            const ModelPtr model = fit_local(spec, iota_indices(m));
            return ProbeMember{probe_full(*model, 0), lift(std::vector<char>(m, 1))};
          },
          1, n, width);
    }
    case EnsembleKind::bootstrap: {
      auto member = std::make_shared<std::size_t>(0);
      return ProbeStream(
          [=]() -> std::optional<ProbeMember> {
            const std::size_t t = *member;
            if (t >= static_cast<std::size_t>(strategy.n_models)) return std::nullopt;
            ++*member;
            std::vector<std::size_t> draws;
            const auto mask = bootstrap_mask(m, strategy.seed, t, &draws);
            const ModelPtr model = fit_local(member_spec(spec, t), draws);
            return ProbeMember{probe_full(*model, t), lift(mask)};
          },
          static_cast<std::size_t>(strategy.n_models), n, width);
    }
    case EnsembleKind::kfold: {
      if (static_cast<std::size_t>(strategy.k) > m) throw Error("kfold: k exceeds the number of rows");
      auto folds = std::make_shared<const std::vector<int>>(kfold_assignment(y_fit, n_classes, strategy.k, strategy.seed));
      auto member = std::make_shared<std::size_t>(0);
      return ProbeStream(
          [=]() -> std::optional<ProbeMember> {
            const std::size_t t = *member;
            if (t >= static_cast<std::size_t>(strategy.k)) return std::nullopt;
            ++*member;
            std::vector<char> mask(m);
            for (std::size_t j = 0; j < m; ++j) mask[j] = (*folds)[j] != static_cast<int>(t);
            const ModelPtr model = fit_local(member_spec(spec, t), rows_where(mask));
            return ProbeMember{probe_full(*model, t), lift(mask)};
          },
          static_cast<std::size_t>(strategy.k), n, width);
    }
    case EnsembleKind::loo: {
      if (m > strategy.loo_cap) {
        throw Error("loo with " + std::to_string(m) + " rows exceeds the cap of " +
                    std::to_string(strategy.loo_cap) + "; use kfold instead");
      }
      auto member = std::make_shared<std::size_t>(0);
      // knn refits are exact views of one index; other families refit.
      std::shared_ptr<const KnnModel> knn;
      std::shared_ptr<const NeighbourCache> cache;
      if (spec.family == ModelFamily::knn) {
        knn = std::dynamic_pointer_cast<const KnnModel>(fit(spec, x_fit, y_fit, n_classes));
        cache = knn->neighbour_cache(x);
      }
      return ProbeStream(
          [=]() -> std::optional<ProbeMember> {
            const std::size_t t = *member;
            if (t >= m) return std::nullopt;
            ++*member;
            std::vector<char> mask(m, 1);
            mask[t] = 0;
            if (knn) return ProbeMember{probe_full(*knn->without_row(t, cache), t), lift(mask)};
            const ModelPtr model = fit_local(member_spec(spec, t), rows_where(mask));
            return ProbeMember{probe_full(*model, t), lift(mask)};
          },
          m, n, width);
    }
    case EnsembleKind::progressive: {
      auto stream = std::make_shared<ModelStream>(staged_fit(spec, x_fit, y_fit, n_classes));
      auto mask = std::make_shared<const std::vector<char>>(lift(std::vector<char>(m, 1)));
      return ProbeStream(
          [=]() -> std::optional<ProbeMember> {
            const ModelPtr model = stream->next();
            if (!model) return std::nullopt;
            return ProbeMember{probe_full(*model, stream->produced() - 1), *mask};
          },
          std::nullopt, n, width);
    }
  }
  throw Error("unknown ensemble kind");
}

std::size_t member_count(const EnsembleStrategy& strategy, std::size_t n, const BaseModelSpec& spec,
                         const Matrix* x, std::span<const int> y, int n_classes) {
  switch (strategy.kind) {
    case EnsembleKind::none: return 1;
    case EnsembleKind::bootstrap: return static_cast<std::size_t>(strategy.n_models);
    case EnsembleKind::kfold: return static_cast<std::size_t>(strategy.k);
    case EnsembleKind::loo: return n;
    case EnsembleKind::progressive:
      if (x == nullptr) return static_cast<std::size_t>(spec.family == ModelFamily::knn ? spec.k : spec.max_iter);
      return static_cast<std::size_t>(fit(spec, *x, y, n_classes)->meta().iterations);
  }
  return 0;
}

}  // namespace labelprobe
