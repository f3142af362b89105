#pragma once

#include "fedcm/types.hpp"

#include <optional>
#include <variant>

namespace fedcm {

struct PseudoInverseSolve {
  double rel_tol = linalg::kDefaultPinvTol;
};
/// (Sigma_obs + eps I)^{-1}; falls back to the pseudoinverse if still singular.
struct RidgedSolve {
  double eps = 1e-8;
};
using InversionRule = std::variant<PseudoInverseSolve, RidgedSolve>;

struct ProjectedGradientOptions {
  std::size_t max_iterations = 10000;
  double tolerance = 1e-9;  // on the gradient-mapping norm
};

struct PluginConfig {
  InversionRule inversion = PseudoInverseSolve{};
  bool psd_projection = false;
  std::optional<double> constraint_radius;
  ProjectedGradientOptions pgd{};

  void validate() const;
};

struct CropResult {
  Vector theta;
  bool rank_deficient = false;
  bool pinv_fallback = false;
};

/// theta_hat = (Sigma_hat_obs)^{-1} gamma_hat_obs under the configured rule.
/// Works for any pattern, including patterns absent from training.
CropResult crop_predictor(const MomentPair& moments, const FeaturePattern& pattern, const PluginConfig& cfg = {});

struct BallSolution {
  Vector theta;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// argmin_{||theta|| <= radius} theta^T A theta - 2 b^T theta by projected
/// gradient descent with step 1 / max|eig(A)|. A may be indefinite; the
/// descent is restarted from 0, L * b / ||b|| and +-L * v_min and the best
/// stationary point is kept.
BallSolution minimize_quadratic_on_ball(const Matrix& a, const Vector& b, double radius,
                                        const ProjectedGradientOptions& opt = {});

BallSolution constrained_crop_predictor(const MomentPair& moments, const FeaturePattern& pattern, double radius,
                                        const ProjectedGradientOptions& opt = {});

enum class PluginStatus { Ok, PseudoInverseFallback, Unidentifiable };
const char* to_string(PluginStatus s);

/// True iff every (l, j) pair inside the pattern is covered by the moments.
bool pattern_covered(const MomentPair& moments, const FeaturePattern& pattern);

struct PluginFit {
  ClientwisePredictor predictor;
  std::map<ClientId, PluginStatus> status;
};

PluginFit build_clientwise_plugin(const MomentPair& moments, std::span<const ClientSpec> clients,
                                  const PluginConfig& cfg = {});

/// Adds a client (e.g. K+1 with an unseen pattern) to an existing fit.
PluginStatus add_plugin_client(PluginFit& fit, const MomentPair& moments, const ClientSpec& client,
                               const PluginConfig& cfg = {});

}  // namespace fedcm
