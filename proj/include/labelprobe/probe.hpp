#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "labelprobe/core.hpp"
#include "labelprobe/models.hpp"

namespace labelprobe {

enum class ProbeKind {
  accuracy,
  self_confidence,
  adjusted_confidence,
  margin,
  logloss,
  l2_onehot,
  input_gradient,
  grad_norm_sq,
  grad_cosine,
  self_influence,
};

/// `signed_values` probes carry no direction until aggregated.
enum class Orientation { trust, suspicion, signed_values };

std::string to_string(Orientation o);

struct ProbeInfo {
  ProbeKind kind;
  std::string_view name;
  Orientation orientation;
  bool binary = false;
  bool needs_parameter_gradients = false;
  bool needs_input_gradients = false;
};

const ProbeInfo& probe_info(ProbeKind kind);
const std::vector<ProbeKind>& all_probes();
std::string to_string(ProbeKind kind);
ProbeKind parse_probe(std::string_view name);

/// Output width p: the input dimension for input_gradient, else 1.
int probe_width(ProbeKind kind, int n_features);

/// Throws naming the missing capability when `family` cannot serve `kind`.
void check_probe_capabilities(ProbeKind kind, ModelFamily family);

struct ProbeMatrix {
  Matrix values;  // n x p
  ProbeKind probe = ProbeKind::accuracy;
  std::size_t model_index = 0;
};

ProbeMatrix run_probe(ProbeKind kind, const FittedModel& model, const Matrix& x, std::span<const int> y,
                      std::size_t model_index = 0);

constexpr double kSelfInfluenceDamping = 1e-3;

/// g_i^T (H + damping I)^{-1} g_i for each row g_i of `grads`.
Vector self_influence_from(const Matrix& grads, const Matrix& hessian,
                           double damping = kSelfInfluenceDamping);

/// cos(g_i, mean of the other rows); 0 where either vector vanishes.
Vector leave_one_out_cosine(const Matrix& grads);

}  // namespace labelprobe
