#pragma once

#include "fedcm/impute.hpp"
#include "fedcm/popgen.hpp"
#include "fedcm/types.hpp"

#include <optional>

namespace fedcm {

/// Both representations of the best linear coefficient on obs(k):
/// Sigma_obs^+ gamma_obs, and theta*_obs + Sigma_obs^+ Sigma_{obs,mis} theta*_mis.
struct LocalCoefficients {
  Vector from_gamma;
  Vector from_theta;
  double discrepancy = 0.0;
  bool rank_deficient = false;
};
LocalCoefficients local_coefficient_forms(const Matrix& sigma, const Vector& theta_star, const FeaturePattern& pattern);

/// theta*^(k). Throws std::logic_error if the two forms disagree on an
/// invertible Sigma_obs.
Vector best_local_coefficients(const Matrix& sigma, const Vector& theta_star, const FeaturePattern& pattern);
Vector best_local_coefficients(const PopulationSpec& pop, const FeaturePattern& pattern);

/// V_k = Sigma_mis - Sigma_{mis,obs} Sigma_obs^+ Sigma_{obs,mis}.
Matrix schur_complement(const Matrix& sigma, const FeaturePattern& pattern);

/// sigma^2 + theta*_mis^T V_k theta*_mis.
double oracle_local_risk(const PopulationSpec& pop, const FeaturePattern& pattern);
/// sum_k rho_k R*^(k).
double oracle_global_risk(const PopulationSpec& pop, std::span<const ClientSpec> clients);
/// The client-wise oracle {theta*^(k)}.
ClientwisePredictor oracle_predictor(const PopulationSpec& pop, std::span<const ClientSpec> clients);

/// sum_j mu_j / (mu_j + lambda). Eigenvalues below `rank_tol * mu_max` count
/// as zero, so lambda = 0 returns the numerical rank.
double effective_dimension(const Matrix& sigma, double lambda, double rank_tol = linalg::kDefaultPinvTol);

/// inf_theta ||theta - theta_ref||^2_Sigma + lambda ||theta||^2
/// = sum_j lambda mu_j / (mu_j + lambda) (v_j^T theta_ref)^2.
double ridge_bias(const Matrix& sigma, const Vector& theta_ref, double lambda);

struct ImputedPopulation {
  Matrix sigma;        // Sigma^I = E[X~ X~^T]
  Vector gamma;        // E[X~ Y]
  Vector theta_prime;  // best linear coefficient on X~
  double risk = 0.0;   // R*(F_I) = E Y^2 - theta'^T Sigma^I theta'
};

/// Closed form for Zero and OptimalLinear (population Sigma); throws
/// std::invalid_argument for ICE.
ImputedPopulation imputed_population_covariance(const PopulationSpec& pop, std::span<const ClientSpec> clients,
                                                ImputerKind kind);

struct BoundReport {
  double r_star_global = 0.0;       // R*(F_lin)
  std::vector<double> r_star_local;  // R*^(k)
  double r_star_imputed = 0.0;       // R*(F_I), the reference of the bound
  double bias = 0.0;                 // B_lambda^I
  double d_eff = 0.0;                // d_lambda^I
  double bound_value = 0.0;          // R*(F_I) + B + 8 M^2 d / n
  std::optional<double> mc_risk;
  std::optional<double> mc_stderr;
  bool satisfied = false;

  /// Records a Monte Carlo estimate; satisfied iff risk <= bound + 3 stderr.
  void attach_mc(double risk, double stderr_value);
};

BoundReport itr_bound(const PopulationSpec& pop, std::span<const ClientSpec> clients, ImputerKind kind,
                      double lambda, std::size_t n, double m);

struct LocalBoundTerms {
  double e0 = 0.0;                 // sum_k rho_k (1 - rho_k)^n E Y^2
  double sum_d = 0.0;              // sum_k d^(k)_{lambda_k}
  double sum_risk_bias = 0.0;      // sum_k rho_k (R*^(k) + B^(k)_{lambda_k})
  std::vector<double> d_local;     // d^(k)_{lambda_k}
  std::vector<double> bias_local;  // B^(k)_{lambda_k}
  double lower = 0.0;
  double upper = 0.0;
};

/// lambda_k = lambda / rho_k; clients with rho_k = 0 are skipped.
LocalBoundTerms local_bound_terms(const PopulationSpec& pop, std::span<const ClientSpec> clients, double lambda,
                                  std::size_t n, double m);

/// lambda / tau^2 + (1 - tau) / tau.
double typical_case_lambda_prime(double lambda, double tau);

struct McRisk {
  double risk = 0.0;
  double std_error = 0.0;
  std::vector<double> client_risk;  // conditional mean per client (nan if no draw)
  std::vector<std::size_t> client_draws;
};

/// Mean squared error of `predictor` on n_mc fresh draws (H, X, Y).
McRisk monte_carlo_risk(const ClientwisePredictor& predictor, const PopulationSpec& pop,
                        std::span<const ClientSpec> clients, std::size_t n_mc, Rng& rng);

/// Exact risk of an untruncated client-wise linear predictor.
double population_risk(const ClientwisePredictor& predictor, const PopulationSpec& pop,
                       std::span<const ClientSpec> clients);

}  // namespace fedcm
