#include "labelprobe/aggregate.hpp"

#include <array>

namespace labelprobe {

namespace {

constexpr std::array<AggregatorInfo, 7> kAggregators{{
    {AggregatorKind::sum, "sum", OrientationEffect::preserve, false, false, false},
    {AggregatorKind::mean, "mean", OrientationEffect::preserve, false, false, false},
    {AggregatorKind::oob_mean, "oob_mean", OrientationEffect::preserve, true, false, false},
    {AggregatorKind::variance, "variance", OrientationEffect::suspicion, false, false, false},
    {AggregatorKind::forget_count, "forget_count", OrientationEffect::suspicion, false, true, true},
    {AggregatorKind::vote, "vote", OrientationEffect::preserve, false, true, false},
    {AggregatorKind::in_out_diff, "in_out_diff", OrientationEffect::invert, true, false, false},
}};

}  // namespace

const AggregatorInfo& aggregator_info(AggregatorKind kind) { return kAggregators[static_cast<std::size_t>(kind)]; }

const std::vector<AggregatorKind>& all_aggregators() {
  static const std::vector<AggregatorKind> kinds = [] {
    std::vector<AggregatorKind> out;
    for (const auto& a : kAggregators) out.push_back(a.kind);
    return out;
  }();
  return kinds;
}

std::string to_string(AggregatorKind kind) { return std::string(aggregator_info(kind).name); }

AggregatorKind parse_aggregator(std::string_view name) {
  for (const auto& a : kAggregators) {
    if (a.name == name) return a.kind;
  }
  std::string known;
  for (const auto& a : kAggregators) known += (known.empty() ? "" : ", ") + std::string(a.name);
  throw Error("unknown aggregator '" + std::string(name) + "' (known: " + known + ")");
}

Orientation effective_orientation(ProbeKind probe, AggregatorKind agg) {
  const Orientation base = probe_info(probe).orientation;
  const OrientationEffect effect = aggregator_info(agg).effect;
  if (effect == OrientationEffect::suspicion) return Orientation::suspicion;
  if (base == Orientation::signed_values) {
    throw Error("aggregator '" + to_string(agg) + "' needs a directed probe but '" + to_string(probe) +
                "' is signed; use variance");
  }
  if (effect == OrientationEffect::invert) {
    return base == Orientation::trust ? Orientation::suspicion : Orientation::trust;
  }
  return base;
}

Aggregator::Aggregator(AggregatorKind kind, std::size_t n_rows, int width)
    : kind_(kind), n_(n_rows), p_(width) {
  const auto n = static_cast<Eigen::Index>(n_rows);
  a_ = Matrix::Zero(n, width);
  switch (kind) {
    case AggregatorKind::oob_mean:
      c_ = Matrix::Zero(n, 1);
      break;
    case AggregatorKind::variance:
      b_ = Matrix::Zero(n, width);
      break;
    case AggregatorKind::forget_count:
      b_ = Matrix::Zero(n, 1);
      c_ = Matrix::Zero(n, 1);
      break;
    case AggregatorKind::in_out_diff:
      b_ = Matrix::Zero(n, width);
      c_ = Matrix::Zero(n, 1);
      d_ = Matrix::Zero(n, 1);
      break;
    default:
      break;
  }
}

void Aggregator::consume(const ProbeMember& member) {
  const Matrix& v = member.matrix.values;
  if (static_cast<std::size_t>(v.rows()) != n_ || v.cols() != p_) {
    throw Error("aggregator '" + to_string(kind_) + "': member has shape " + std::to_string(v.rows()) + "x" +
                std::to_string(v.cols()) + ", expected " + std::to_string(n_) + "x" + std::to_string(p_));
  }
  const AggregatorInfo& info = aggregator_info(kind_);
  if (info.needs_masks && (!member.in_bag || member.in_bag->size() != n_)) {
    throw Error("aggregator '" + to_string(kind_) + "' needs in-bag masks");
  }
  if (info.needs_binary && !(v.array() == 0.0 || v.array() == 1.0).all()) {
    throw Error("aggregator '" + to_string(kind_) + "' needs a binary probe");
  }
  const auto n = static_cast<Eigen::Index>(n_);
  ++members_;
  switch (kind_) {
    case AggregatorKind::sum:
    case AggregatorKind::mean:
    case AggregatorKind::vote:
      a_ += v;
      break;
    case AggregatorKind::oob_mean:
      for (Eigen::Index i = 0; i < n; ++i) {
        if ((*member.in_bag)[static_cast<std::size_t>(i)]) continue;
        a_.row(i) += v.row(i);
        c_(i, 0) += 1.0;
      }
      break;
    case AggregatorKind::variance: {
      // Welford update per (row, column).
      const double m = static_cast<double>(members_);
      const Matrix delta = v - a_;
      a_ += delta / m;
      b_.array() += delta.array() * (v - a_).array();
      break;
    }
    case AggregatorKind::forget_count:
      if (members_ > 1) b_.array() += ((a_.array() == 0.0) && (v.array() == 1.0)).cast<double>();
      c_ = c_.cwiseMax(v);
      a_ = v;
      break;
    case AggregatorKind::in_out_diff:
      for (Eigen::Index i = 0; i < n; ++i) {
        if ((*member.in_bag)[static_cast<std::size_t>(i)]) {
          a_.row(i) += v.row(i);
          c_(i, 0) += 1.0;
        } else {
          b_.row(i) += v.row(i);
          d_(i, 0) += 1.0;
        }
      }
      break;
  }
}

Vector Aggregator::finish() const {
  const auto n = static_cast<Eigen::Index>(n_);
  const double p = static_cast<double>(p_);
  Vector out(n);
  if (members_ == 0) {
    out.setConstant(missing_value());
    return out;
  }
  const double m = static_cast<double>(members_);
  switch (kind_) {
    case AggregatorKind::sum:
      out = a_.rowwise().sum();
      break;
    case AggregatorKind::mean:
    case AggregatorKind::vote:
      out = a_.rowwise().sum() / (m * p);
      break;
    case AggregatorKind::oob_mean:
      for (Eigen::Index i = 0; i < n; ++i) {
        out(i) = c_(i, 0) > 0.0 ? a_.row(i).sum() / (c_(i, 0) * p) : missing_value();
      }
      break;
    case AggregatorKind::variance:
      out = b_.rowwise().sum() / (m * p);
      break;
    case AggregatorKind::forget_count:
      // Never-learned rows outrank any achievable count.
      for (Eigen::Index i = 0; i < n; ++i) out(i) = c_(i, 0) > 0.0 ? b_(i, 0) : m;
      break;
    case AggregatorKind::in_out_diff:
      for (Eigen::Index i = 0; i < n; ++i) {
        out(i) = (c_(i, 0) > 0.0 && d_(i, 0) > 0.0)
                     ? a_.row(i).sum() / (c_(i, 0) * p) - b_.row(i).sum() / (d_(i, 0) * p)
                     : missing_value();
      }
      break;
  }
  return out;
}

Vector aggregate(AggregatorKind kind, ProbeStream& stream) {
  Aggregator agg(kind, stream.n_rows(), stream.width());
  while (auto member = stream.next()) agg.consume(*member);
  if (agg.members() == 0) throw Error("aggregator '" + to_string(kind) + "': empty probe stream");
  return agg.finish();
}

}  // namespace labelprobe
