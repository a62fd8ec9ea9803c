#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "labelprobe/models.hpp"
#include "labelprobe/probe.hpp"

namespace labelprobe {

enum class EnsembleKind { none, bootstrap, kfold, loo, progressive };

struct EnsembleStrategy {
  EnsembleKind kind = EnsembleKind::none;
  int n_models = 50;  // bootstrap
  int k = 5;          // kfold
  std::uint64_t seed = 0;
  std::size_t loo_cap = 2000;

  static EnsembleStrategy none() { return {}; }
  static EnsembleStrategy bootstrap(int n_models, std::uint64_t seed = 0);
  static EnsembleStrategy kfold(int k, std::uint64_t seed = 0);
  static EnsembleStrategy loo();
  static EnsembleStrategy progressive();

  /// `none`, `bootstrap:<n>`, `kfold:<k>`, `loo`, `progressive`.
  static EnsembleStrategy parse(std::string_view text);
  std::string to_string() const;

  bool has_masks() const { return kind == EnsembleKind::bootstrap || kind == EnsembleKind::kfold || kind == EnsembleKind::loo; }
  bool ordered() const { return kind == EnsembleKind::progressive; }
  void validate() const;
};

struct ProbeMember {
  ProbeMatrix matrix;
  std::optional<std::vector<char>> in_bag;  // length n
};

/// Lazy sequence of probe matrices; at most one member model is alive.
class ProbeStream {
 public:
  using Producer = std::function<std::optional<ProbeMember>()>;

  ProbeStream(Producer producer, std::optional<std::size_t> expected, std::size_t n_rows, int width)
      : producer_(std::move(producer)), expected_(expected), n_rows_(n_rows), width_(width) {}

  std::optional<ProbeMember> next();
  std::size_t produced() const { return produced_; }
  /// Known up front for independent strategies; for progressive streams
  /// only after exhaustion.
  std::optional<std::size_t> expected_members() const { return expected_; }
  std::size_t n_rows() const { return n_rows_; }
  int width() const { return width_; }

 private:
  Producer producer_;
  std::optional<std::size_t> expected_;
  std::size_t n_rows_;
  int width_;
  std::size_t produced_ = 0;
  bool done_ = false;
};

/// Fold id of every row; stratified by label and shuffled under `seed`.
std::vector<int> kfold_assignment(std::span<const int> y, int n_classes, int k, std::uint64_t seed);

/// In-bag mask of bootstrap member `member` (n draws with replacement).
std::vector<char> bootstrap_mask(std::size_t n, std::uint64_t seed, std::size_t member,
                                 std::vector<std::size_t>* draws = nullptr);

/// Members train on `fit_rows` (all rows when empty) and probe every row;
/// rows outside `fit_rows` are out-of-bag for every member.
ProbeStream probe_model(const EnsembleStrategy& strategy, const BaseModelSpec& spec, const Matrix& x,
                        std::span<const int> y, int n_classes, ProbeKind probe,
                        std::span<const std::size_t> fit_rows = {});

/// bootstrap n_models, kfold k, loo n; for progressive, the iteration cap,
/// or the iterations actually run when training data is supplied.
std::size_t member_count(const EnsembleStrategy& strategy, std::size_t n, const BaseModelSpec& spec,
                         const Matrix* x = nullptr, std::span<const int> y = {}, int n_classes = 0);

}  // namespace labelprobe
