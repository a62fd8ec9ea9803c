#pragma once

#include <string>
#include <vector>

#include "labelprobe/ensemble.hpp"

namespace labelprobe {

enum class AggregatorKind { sum, mean, oob_mean, variance, forget_count, vote, in_out_diff };

/// How an aggregator changes the probe's orientation. `invert` flips it:
/// in-bag minus out-of-bag accuracy grows with memorisation.
enum class OrientationEffect { preserve, suspicion, invert };

struct AggregatorInfo {
  AggregatorKind kind;
  std::string_view name;
  OrientationEffect effect;
  bool needs_masks = false;
  bool needs_binary = false;
  bool needs_order = false;
};

const AggregatorInfo& aggregator_info(AggregatorKind kind);
const std::vector<AggregatorKind>& all_aggregators();
std::string to_string(AggregatorKind kind);
AggregatorKind parse_aggregator(std::string_view name);

/// Orientation of the aggregated scores; throws for a signed probe under an
/// aggregator that needs a direction.
Orientation effective_orientation(ProbeKind probe, AggregatorKind agg);

/// forget_count counts 0 -> 1 transitions between consecutive members; a row
/// that is never 1 gets the member count, above any achievable count.
///
/// Streaming reducer; rows that are undefined (never out-of-bag, or never on
/// both sides) come out as NaN.
class Aggregator {
 public:
  Aggregator(AggregatorKind kind, std::size_t n_rows, int width);

  void consume(const ProbeMember& member);
  Vector finish() const;
  std::size_t members() const { return members_; }

 private:
  AggregatorKind kind_;
  std::size_t n_;
  int p_;
  std::size_t members_ = 0;
  Matrix a_, b_, c_, d_;  // per-kind running state
};

Vector aggregate(AggregatorKind kind, ProbeStream& stream);

}  // namespace labelprobe
