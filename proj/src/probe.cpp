#include "labelprobe/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace labelprobe {

namespace {

constexpr std::array<ProbeInfo, 10> kProbes{{
    {ProbeKind::accuracy, "accuracy", Orientation::trust, true, false, false},
    {ProbeKind::self_confidence, "self_confidence", Orientation::trust, false, false, false},
    {ProbeKind::adjusted_confidence, "adjusted_confidence", Orientation::trust, false, false, false},
    {ProbeKind::margin, "margin", Orientation::trust, false, false, false},
    {ProbeKind::logloss, "logloss", Orientation::suspicion, false, false, false},
    {ProbeKind::l2_onehot, "l2_onehot", Orientation::suspicion, false, false, false},
    {ProbeKind::input_gradient, "input_gradient", Orientation::signed_values, false, false, true},
    {ProbeKind::grad_norm_sq, "grad_norm_sq", Orientation::suspicion, false, true, false},
    {ProbeKind::grad_cosine, "grad_cosine", Orientation::trust, false, true, false},
    {ProbeKind::self_influence, "self_influence", Orientation::suspicion, false, true, false},
}};

int argmax_low(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return best;
}

const KlmModel& require_klm(const FittedModel& model, ProbeKind kind) {
  const auto* klm = dynamic_cast<const KlmModel*>(&model);
  if (klm == nullptr) {
    throw Error("probe '" + to_string(kind) + "' needs parameter gradients, which only klm models provide");
  }
  return *klm;
}

Matrix column(const Vector& v) { return Matrix(v); }

}  // namespace

std::string to_string(Orientation o) {
  switch (o) {
    case Orientation::trust: return "trust";
    case Orientation::suspicion: return "suspicion";
    case Orientation::signed_values: return "signed";
  }
  return "?";
}

const ProbeInfo& probe_info(ProbeKind kind) { return kProbes[static_cast<std::size_t>(kind)]; }

const std::vector<ProbeKind>& all_probes() {
  static const std::vector<ProbeKind> kinds = [] {
    std::vector<ProbeKind> out;
    for (const auto& p : kProbes) out.push_back(p.kind);
    return out;
  }();
  return kinds;
}

std::string to_string(ProbeKind kind) { return std::string(probe_info(kind).name); }

ProbeKind parse_probe(std::string_view name) {
  for (const auto& p : kProbes) {
    if (p.name == name) return p.kind;
  }
  std::string known;
  for (const auto& p : kProbes) known += (known.empty() ? "" : ", ") + std::string(p.name);
  throw Error("unknown probe '" + std::string(name) + "' (known: " + known + ")");
}

int probe_width(ProbeKind kind, int n_features) { return kind == ProbeKind::input_gradient ? n_features : 1; }

void check_probe_capabilities(ProbeKind kind, ModelFamily family) {
  const ProbeInfo& info = probe_info(kind);
  if (info.needs_parameter_gradients && family != ModelFamily::klm) {
    throw Error("probe '" + to_string(kind) + "' needs parameter gradients, which " + to_string(family) +
                " models do not provide");
  }
}

Vector self_influence_from(const Matrix& grads, const Matrix& hessian, double damping) {
  if (hessian.rows() != grads.cols() || hessian.cols() != grads.cols()) {
    throw Error("self influence: hessian is " + std::to_string(hessian.rows()) + "x" +
                std::to_string(hessian.cols()) + " but gradients have " + std::to_string(grads.cols()) +
                " entries");
  }
  Matrix damped = hessian;
  damped.diagonal().array() += damping;
  Eigen::LLT<Matrix> llt(damped);
  if (llt.info() != Eigen::Success) throw Error("self influence: damped hessian is not positive definite");
  const Matrix half = llt.matrixL().solve(grads.transpose());
  return half.colwise().squaredNorm().transpose();
}

Vector leave_one_out_cosine(const Matrix& grads) {
  const auto n = grads.rows();
  Vector out = Vector::Zero(n);
  if (n < 2) return out;
  const Eigen::RowVectorXd total = grads.colwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd rest = (total - grads.row(i)) / static_cast<double>(n - 1);
    const double denom = grads.row(i).norm() * rest.norm();
    if (denom > 0.0) out(i) = std::clamp(grads.row(i).dot(rest) / denom, -1.0, 1.0);
  }
  return out;
}

ProbeMatrix run_probe(ProbeKind kind, const FittedModel& model, const Matrix& x, std::span<const int> y,
                      std::size_t model_index) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw Error("probe: " + std::to_string(x.rows()) + " rows but " + std::to_string(y.size()) + " labels");
  }
  check_probe_capabilities(kind, model.family());
  for (int label : y) {
    if (label < 0 || label >= model.n_classes()) throw Error("probe: label " + std::to_string(label) + " out of range");
  }
  const auto n = x.rows();
  const auto at = [&](Eigen::Index i) { return y[static_cast<std::size_t>(i)]; };
  ProbeMatrix out;
  out.probe = kind;
  out.model_index = model_index;

  switch (kind) {
    case ProbeKind::accuracy: {
      const Matrix p = model.predict_proba(x);
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = argmax_low(p.row(i)) == at(i) ? 1.0 : 0.0;
      out.values = column(v);
      break;
    }
    case ProbeKind::self_confidence: {
      const Matrix p = model.predict_proba(x);
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = p(i, at(i));
      out.values = column(v);
      break;
    }
    case ProbeKind::adjusted_confidence: {
      const Matrix p = model.predict_proba(x);
      Vector v(n);
      std::vector<double> sum(static_cast<std::size_t>(model.n_classes()), 0.0);
      std::vector<double> count(sum.size(), 0.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = p(i, at(i));
        sum[static_cast<std::size_t>(at(i))] += v(i);
        count[static_cast<std::size_t>(at(i))] += 1.0;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(at(i));
        v(i) -= sum[c] / count[c];
      }
      out.values = column(v);
      break;
    }
    case ProbeKind::margin: {
      const Matrix z = model.has_logits() ? model.decision_scores(x) : model.predict_proba(x);
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double other = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < model.n_classes(); ++c) {
          if (c != at(i)) other = std::max(other, z(i, c));
        }
        v(i) = z(i, at(i)) - other;
      }
      out.values = column(v);
      break;
    }
    case ProbeKind::logloss: {
      const Matrix p = model.predict_proba(x);
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = -std::log(std::max(p(i, at(i)), kProbClamp));
      out.values = column(v);
      break;
    }
    case ProbeKind::l2_onehot: {
      Matrix p = model.predict_proba(x);
      for (Eigen::Index i = 0; i < n; ++i) p(i, at(i)) -= 1.0;
      out.values = column(p.rowwise().norm());
      break;
    }
    case ProbeKind::input_gradient:
      out.values = model.input_gradients(x, y);
      break;
    case ProbeKind::grad_norm_sq: {
      const KlmModel& klm = require_klm(model, kind);
      out.values = column(klm.parameter_gradients(x, y).rowwise().squaredNorm() * klm.learning_rate());
      break;
    }
    case ProbeKind::grad_cosine: {
      const KlmModel& klm = require_klm(model, kind);
      out.values = column(leave_one_out_cosine(klm.parameter_gradients(x, y, false)));
      break;
    }
    case ProbeKind::self_influence: {
      const KlmModel& klm = require_klm(model, kind);
      out.values = column(self_influence_from(klm.parameter_gradients(x, y), klm.gauss_newton(x)));
      break;
    }
  }

  if (out.values.rows() != n || out.values.cols() != probe_width(kind, model.n_features())) {
    throw Error("probe '" + to_string(kind) + "' produced a wrongly shaped matrix");
  }
  if (!out.values.allFinite()) throw Error("probe '" + to_string(kind) + "' produced non-finite values");
  return out;
}

}  // namespace labelprobe
