#pragma once

#include "fedcm/impute.hpp"
#include "fedcm/types.hpp"

#include <optional>
#include <variant>

namespace fedcm {

struct NoTruncation {};
struct FixedM {
  double value = 0.0;
};
/// M_hat = max_i |Y_i| over the training outcomes.
struct EstimatedM {};
using Truncation = std::variant<NoTruncation, FixedM, EstimatedM>;

struct ClosedFormSolver {};
struct FedAvgSolver {
  std::size_t rounds = 1000;
  std::size_t local_steps = 1;
  /// Stable for step_size < 2 / (lambda_max(Sigma_hat^I) + lambda).
  double step_size = 0.1;
};
using RidgeSolver = std::variant<ClosedFormSolver, FedAvgSolver>;

struct RidgeConfig {
  double lambda = 0.0;
  Truncation trunc = NoTruncation{};
  RidgeSolver solver = ClosedFormSolver{};

  void validate() const;
};

struct RidgeFit {
  Vector theta;
  /// Set when lambda = 0 and Sigma_hat^I was singular (min-norm solution).
  bool pinv_used = false;
};

/// (sigma + lambda I)^{-1} gamma; pseudoinverse at lambda = 0.
RidgeFit ridge_from_moments(const Matrix& sigma, const Vector& gamma, double lambda,
                            double rel_tol = linalg::kDefaultPinvTol);

/// Sum of x_i y_i over the listed rows, in order.
Vector cross_moment_sum(const Matrix& rows, const Vector& y, std::span<const std::size_t> which);

/// Empirical (Sigma_hat^I, gamma_hat^I) of the imputed sample, accumulated per
/// client and folded in client-id order.
MomentPair imputed_moments(const ImputedDataset& data);

RidgeFit ridge_closed_form(const ImputedDataset& data, double lambda);

/// (1/2n) sum (y_i - theta^T x_i)^2 + (lambda/2) ||theta||^2.
double ridge_objective(const ImputedDataset& data, const Vector& theta, double lambda);

/// 2 / (lambda_max(Sigma_hat^I) + lambda).
double fedavg_step_limit(const ImputedDataset& data, double lambda);

/// `steps` full-batch gradient steps on one shard, gradient
/// (1/n_k) X^T (X theta - y) + lambda theta. An empty shard returns `theta`.
Vector local_ridge_steps(const Matrix& x, const Vector& y, Vector theta, double lambda, std::size_t steps,
                         double step_size);

struct FedAvgResult {
  Vector theta;
  std::vector<double> objective;  // objective[0] at theta = 0, then one per round
  CommLog log;
  std::size_t rounds_run = 0;
  bool diverged = false;
};

/// Rows of each client copied out in dataset order, indexed by client id.
struct ClientShard {
  Matrix x;
  Vector y;
};
std::vector<ClientShard> split_shards(const ImputedDataset& data);

/// FedAvg on the ridge objective from theta = 0. Clients step on their local
/// average loss, the server averages with weights n_k / n. Aborts once the
/// objective has increased for `divergence_window` consecutive rounds.
FedAvgResult fedavg_ridge(const ImputedDataset& data, double lambda, const FedAvgSolver& solver,
                          std::size_t divergence_window = 10);

/// T_M(t) = max(-M, min(t, M)).
double truncate(double t, double m);

double estimate_M(const Dataset& data);
double estimate_M(const ImputedDataset& data);

/// Resolves a truncation setting to a level; EstimatedM reads the training outcomes.
std::optional<double> resolve_truncation(const Truncation& trunc, const Dataset& data);

/// Impute-then-regress deployment: f(x_obs, k) = T_M(theta^T phi(x_obs, k)).
class ItrPredictor {
 public:
  ItrPredictor(ImputationMap imputer, Vector theta, std::optional<double> m);

  const ImputationMap& imputer() const { return imputer_; }
  const Vector& theta() const { return theta_; }
  std::optional<double> trunc_M() const { return m_; }

  /// theta_obs + S_k^T theta_mis.
  Vector effective_coefficients(const FeaturePattern& pattern) const;
  double predict(const FeaturePattern& pattern, const Vector& x_obs) const;
  /// Per-client effective coefficients; throws if a pattern is not covered.
  ClientwisePredictor to_clientwise(std::span<const ClientSpec> clients) const;

 private:
  ImputationMap imputer_;
  Vector theta_;
  std::optional<double> m_;
};

ItrPredictor itr_predictor(ImputationMap imputer, Vector theta, std::optional<double> m = std::nullopt);

enum class RhoSource { True, Empirical };

/// Per-client ridge on the client's own samples with lambda_k = lambda / rho_k,
/// rho_k either the configured weight or n_k / n. Empty clients get the zero
/// predictor.
ClientwisePredictor local_learning(const Dataset& data, double lambda, RhoSource rho_source,
                                   std::optional<double> m = std::nullopt);

}  // namespace fedcm
