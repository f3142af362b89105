#include "fedcm/risk.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedcm {

LocalCoefficients local_coefficient_forms(const Matrix& sigma, const Vector& theta_star, const FeaturePattern& pattern) {
  if (static_cast<std::size_t>(sigma.rows()) != pattern.dim() || theta_star.size() != sigma.rows())
    throw std::invalid_argument("best_local_coefficients: dimension mismatch");
  LocalCoefficients out;
  if (pattern.empty()) {
    out.from_gamma = Vector(0);
    out.from_theta = Vector(0);
    return out;
  }
  const auto& obs = pattern.observed();
  const auto mis = pattern.missing();
  const auto p = linalg::pinv(sigma(obs, obs));
  const Vector gamma = sigma * theta_star;
  out.from_gamma = p.value * gamma(obs);
  out.from_theta = theta_star(obs);
  if (!mis.empty()) out.from_theta += p.value * (sigma(obs, mis) * theta_star(mis));
  out.discrepancy = (out.from_gamma - out.from_theta).cwiseAbs().maxCoeff();
  out.rank_deficient = p.rank_deficient;
  return out;
}

Vector best_local_coefficients(const Matrix& sigma, const Vector& theta_star, const FeaturePattern& pattern) {
  auto forms = local_coefficient_forms(sigma, theta_star, pattern);
  if (!forms.rank_deficient && !pattern.empty()) {
    const auto& obs = pattern.observed();
    const double scale = std::max(1.0, theta_star.norm()) *
                         std::max(1.0, sigma.norm() * linalg::pinv(sigma(obs, obs)).value.norm());
    if (forms.discrepancy > 1e-10 * scale)
      throw std::logic_error("best_local_coefficients: the two representations disagree");
  }
  return std::move(forms.from_gamma);
}

Vector best_local_coefficients(const PopulationSpec& pop, const FeaturePattern& pattern) {
  return best_local_coefficients(pop.sigma(), pop.theta_star(), pattern);
}

Matrix schur_complement(const Matrix& sigma, const FeaturePattern& pattern) {
  if (static_cast<std::size_t>(sigma.rows()) != pattern.dim())
    throw std::invalid_argument("schur_complement: dimension mismatch");
  const auto& obs = pattern.observed();
  const auto mis = pattern.missing();
  Matrix v = sigma(mis, mis);
  if (!obs.empty() && !mis.empty())
    v -= sigma(mis, obs) * linalg::pinv(sigma(obs, obs)).value * sigma(obs, mis);
  return linalg::symmetrize(v);
}

double oracle_local_risk(const PopulationSpec& pop, const FeaturePattern& pattern) {
  const auto mis = pattern.missing();
  if (mis.empty()) return pop.noise_variance();
  const Vector t = pop.theta_star()(mis);
  return pop.noise_variance() + t.dot(schur_complement(pop.sigma(), pattern) * t);
}

double oracle_global_risk(const PopulationSpec& pop, std::span<const ClientSpec> clients) {
  validate_federation(clients);
  double r = 0.0;
  for (const auto& c : clients) r += c.rho * oracle_local_risk(pop, c.pattern);
  return r;
}

ClientwisePredictor oracle_predictor(const PopulationSpec& pop, std::span<const ClientSpec> clients) {
  ClientwisePredictor out;
  for (const auto& c : clients) out.thetas[c.id] = best_local_coefficients(pop, c.pattern);
  return out;
}

double effective_dimension(const Matrix& sigma, double lambda, double rank_tol) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("effective_dimension: lambda must be >= 0");
  if (sigma.size() == 0) return 0.0;
  const Vector mu = linalg::sym_eig(sigma).values;
  const double top = std::max(mu.maxCoeff(), 0.0);
  double sum = 0.0;
  for (Index j = 0; j < mu.size(); ++j) {
    if (mu(j) <= rank_tol * top) continue;
    sum += mu(j) / (mu(j) + lambda);
  }
  return sum;
}

double ridge_bias(const Matrix& sigma, const Vector& theta_ref, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ridge_bias: lambda must be >= 0");
  if (sigma.rows() != theta_ref.size()) throw std::invalid_argument("ridge_bias: dimension mismatch");
  if (lambda == 0.0 || sigma.size() == 0) return 0.0;
  const auto eig = linalg::sym_eig(sigma);
  const Vector c = eig.vectors.transpose() * theta_ref;
  double sum = 0.0;
  for (Index j = 0; j < c.size(); ++j) {
    const double mu = std::max(eig.values(j), 0.0);
    sum += lambda * mu / (mu + lambda) * c(j) * c(j);
  }
  return sum;
}

ImputedPopulation imputed_population_covariance(const PopulationSpec& pop, std::span<const ClientSpec> clients,
                                                ImputerKind kind) {
  validate_federation(clients);
  const auto d = static_cast<Index>(pop.dim());
  const Vector gamma = population_gamma(pop);
  ImputedPopulation out;
  switch (kind) {
    case ImputerKind::Zero: {
      const Matrix pi = co_observation_matrix(clients);
      out.sigma = pi.cwiseProduct(pop.sigma());
      out.gamma = pi.diagonal().cwiseProduct(gamma);
      out.theta_prime = linalg::pinv(out.sigma).value * out.gamma;
      break;
    }
    case ImputerKind::OptimalLinear: {
      const auto map = fit_optimal_imputer(pop.sigma(), clients, CovarianceSource::Population);
      out.sigma = Matrix::Zero(d, d);
      out.gamma = Vector::Zero(d);
      for (const auto& c : clients) {
        const Matrix p = map.completion_operator(c.pattern);
        out.sigma += c.rho * (p * pop.sigma() * p.transpose());
        out.gamma += c.rho * (p * gamma);
      }
      out.sigma = linalg::symmetrize(out.sigma);
      out.theta_prime = pop.theta_star();
      break;
    }
    case ImputerKind::ICE:
      throw std::invalid_argument("imputed_population_covariance: no closed form for ICE");
  }
  out.risk = pop.outcome_second_moment() - out.theta_prime.dot(out.sigma * out.theta_prime);
  return out;
}

void BoundReport::attach_mc(double risk, double stderr_value) {
  mc_risk = risk;
  mc_stderr = stderr_value;
  satisfied = risk <= bound_value + 3.0 * stderr_value;
}

BoundReport itr_bound(const PopulationSpec& pop, std::span<const ClientSpec> clients, ImputerKind kind,
                      double lambda, std::size_t n, double m) {
  if (n == 0) throw std::invalid_argument("itr_bound: n must be >= 1");
  BoundReport r;
  for (const auto& c : clients) r.r_star_local.push_back(oracle_local_risk(pop, c.pattern));
  r.r_star_global = oracle_global_risk(pop, clients);
  const auto imp = imputed_population_covariance(pop, clients, kind);
  r.r_star_imputed = imp.risk;
  r.bias = ridge_bias(imp.sigma, imp.theta_prime, lambda);
  r.d_eff = effective_dimension(imp.sigma, lambda);
  r.bound_value = r.r_star_imputed + r.bias + 8.0 * m * m * r.d_eff / static_cast<double>(n);
  return r;
}

LocalBoundTerms local_bound_terms(const PopulationSpec& pop, std::span<const ClientSpec> clients, double lambda,
                                  std::size_t n, double m) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("local_bound_terms: lambda must be >= 0");
  if (n == 0) throw std::invalid_argument("local_bound_terms: n must be >= 1");
  const double ey2 = pop.outcome_second_moment();
  LocalBoundTerms t;
  for (const auto& c : clients) {
    if (!(c.rho > 0.0)) {
      t.d_local.push_back(0.0);
      t.bias_local.push_back(0.0);
      continue;
    }
    t.e0 += c.rho * std::pow(1.0 - c.rho, static_cast<double>(n)) * ey2;
    const double lambda_k = lambda / c.rho;
    double dk = 0.0;
    double bk = 0.0;
    if (!c.pattern.empty()) {
      const auto& obs = c.pattern.observed();
      const Matrix s_obs = pop.sigma()(obs, obs);
      dk = effective_dimension(s_obs, lambda_k);
      bk = ridge_bias(s_obs, best_local_coefficients(pop, c.pattern), lambda_k);
    }
    t.d_local.push_back(dk);
    t.bias_local.push_back(bk);
    t.sum_d += dk;
    t.sum_risk_bias += c.rho * (oracle_local_risk(pop, c.pattern) + bk);
  }
  t.lower = t.e0;
  t.upper = t.e0 + 16.0 * m * m / static_cast<double>(n) * t.sum_d + t.sum_risk_bias;
  return t;
}

double typical_case_lambda_prime(double lambda, double tau) {
  if (!(tau > 0.0) || tau > 1.0) throw std::invalid_argument("typical_case_lambda_prime: tau must be in (0, 1]");
  return lambda / (tau * tau) + (1.0 - tau) / tau;
}

McRisk monte_carlo_risk(const ClientwisePredictor& predictor, const PopulationSpec& pop,
                        std::span<const ClientSpec> clients, std::size_t n_mc, Rng& rng) {
  if (n_mc < 2) throw std::invalid_argument("monte_carlo_risk: n_mc must be >= 2");
  predictor.check_against(clients);
  const ClientSampler sampler(clients);
  const auto d = static_cast<Index>(pop.dim());
  Vector z(d), x(d);
  double y = 0.0;

  McRisk out;
  std::vector<double> client_sum(clients.size(), 0.0);
  out.client_draws.assign(clients.size(), 0);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const ClientId k = sampler(rng);
    draw_complete(pop, rng, z, x, y);
    const Vector x_obs = x(clients[k].pattern.observed());
    const double r = y - predictor.predict(k, x_obs);
    const double loss = r * r;
    client_sum[k] += loss;
    ++out.client_draws[k];
    const double delta = loss - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (loss - mean);
  }
  out.risk = mean;
  out.std_error = std::sqrt(m2 / static_cast<double>(n_mc - 1) / static_cast<double>(n_mc));
  out.client_risk.resize(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k)
    out.client_risk[k] = out.client_draws[k] ? client_sum[k] / static_cast<double>(out.client_draws[k])
                                             : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double population_risk(const ClientwisePredictor& predictor, const PopulationSpec& pop,
                       std::span<const ClientSpec> clients) {
  predictor.check_against(clients);
  const Vector gamma = population_gamma(pop);
  const double ey2 = pop.outcome_second_moment();
  double r = 0.0;
  for (const auto& c : clients) {
    const auto& obs = c.pattern.observed();
    const Vector& t = predictor.theta(c.id);
    double rk = ey2;
    if (!obs.empty()) rk += t.dot(pop.sigma()(obs, obs) * t) - 2.0 * t.dot(gamma(obs));
    r += c.rho * rk;
  }
  return r;
}

}  // namespace fedcm
