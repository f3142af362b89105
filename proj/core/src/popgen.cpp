#include "fedcm/popgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedcm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

PopulationSpec::PopulationSpec(Matrix sigma, Vector theta_star, NoiseLaw noise, DesignLaw design)
    : theta_star_(std::move(theta_star)), noise_(noise), design_(design) {
  const Index d = theta_star_.size();
  if (sigma.rows() != d || sigma.cols() != d)
    throw std::invalid_argument("PopulationSpec: sigma must be d x d with d = len(theta_star)");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("PopulationSpec: sigma is not symmetric");
  sigma_ = linalg::symmetrize(sigma);
  if (d > 0 && linalg::min_eigenvalue(sigma_) < -1e-10)
    throw std::invalid_argument("PopulationSpec: sigma is not positive semidefinite");
  std::visit(overloaded{[](const GaussianNoise& g) {
                          if (!(g.variance >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
                        },
                        [](const UniformNoise& u) {
                          if (!(u.half_width >= 0.0)) throw std::invalid_argument("noise half-width must be >= 0");
                        }},
             noise_);
  sigma_sqrt_ = linalg::psd_sqrt(sigma_);
}

double PopulationSpec::noise_variance() const {
  return std::visit(overloaded{[](const GaussianNoise& g) { return g.variance; },
                               [](const UniformNoise& u) { return u.half_width * u.half_width / 3.0; }},
                    noise_);
}

double PopulationSpec::outcome_second_moment() const {
  return noise_variance() + theta_star_.dot(sigma_ * theta_star_);
}

std::optional<double> PopulationSpec::outcome_bound() const {
  if (!std::holds_alternative<SphereDesign>(design_) || !std::holds_alternative<UniformNoise>(noise_))
    return std::nullopt;
  const double radius = std::sqrt(static_cast<double>(dim()));
  return radius * (sigma_sqrt_ * theta_star_).norm() + std::get<UniformNoise>(noise_).half_width;
}

Vector population_gamma(const PopulationSpec& pop) { return pop.sigma() * pop.theta_star(); }

Matrix identity_covariance(std::size_t d) { return Matrix::Identity(static_cast<Index>(d), static_cast<Index>(d)); }

Matrix equicorrelated_covariance(std::size_t d, double r) {
  const auto n = static_cast<Index>(d);
  Matrix s = Matrix::Constant(n, n, r);
  s.diagonal().setOnes();
  return s;
}

Matrix toeplitz_covariance(std::size_t d, double r) {
  const auto n = static_cast<Index>(d);
  Matrix s(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) s(i, j) = std::pow(r, static_cast<double>(std::abs(i - j)));
  return s;
}

std::vector<FeaturePattern> draw_bernoulli_patterns(std::size_t k, std::size_t d, double tau, Rng& rng) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("draw_bernoulli_patterns: tau must lie in (0, 1]");
  if (k == 0) throw std::invalid_argument("draw_bernoulli_patterns: K must be >= 1");
  std::vector<FeaturePattern> out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<Index> obs;
    for (std::size_t j = 0; j < d; ++j)
      if (uniform01(rng) < tau) obs.push_back(static_cast<Index>(j));
    out.emplace_back(d, std::move(obs));
  }
  return out;
}

Matrix co_observation_matrix(std::span<const ClientSpec> clients) {
  validate_federation(clients);
  const auto d = static_cast<Index>(clients.front().pattern.dim());
  Matrix pi = Matrix::Zero(d, d);
  for (const auto& c : clients) {
    const Vector m = c.pattern.mask_vector();
    pi.noalias() += c.rho * m * m.transpose();
  }
  return pi;
}

ClientSampler::ClientSampler(std::span<const ClientSpec> clients) {
  validate_federation(clients);
  double acc = 0.0;
  for (const auto& c : clients) {
    acc += c.rho;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

ClientId ClientSampler::operator()(Rng& rng) const {
  const double u = uniform01(rng);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<ClientId>(it - cumulative_.begin());
}

void draw_complete(const PopulationSpec& pop, Rng& rng, Vector& z, Vector& x, double& y) {
  const auto d = static_cast<Index>(pop.dim());
  z.resize(d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < d; ++j) z(j) = normal(rng);
  if (std::holds_alternative<SphereDesign>(pop.design())) {
    const double norm = z.norm();
    if (norm > 0.0) z *= std::sqrt(static_cast<double>(d)) / norm;
  }
  x.noalias() = pop.sigma_sqrt() * z;
  double eps = 0.0;
  if (const auto* g = std::get_if<GaussianNoise>(&pop.noise())) {
    eps = std::sqrt(g->variance) * normal(rng);
  } else {
    const double a = std::get<UniformNoise>(pop.noise()).half_width;
    eps = a * (2.0 * uniform01(rng) - 1.0);
  }
  y = x.dot(pop.theta_star()) + eps;
}

Dataset sample_dataset(const PopulationSpec& pop, std::vector<ClientSpec> clients, std::size_t n, Rng& rng) {
  validate_federation(clients);
  if (clients.front().pattern.dim() != pop.dim())
    throw std::invalid_argument("sample_dataset: client patterns and population disagree on d");
  const ClientSampler pick(clients);
  std::vector<MaskedSample> samples;
  samples.reserve(n);
  Vector z, x;
  double y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const ClientId h = pick(rng);
    draw_complete(pop, rng, z, x, y);
    samples.push_back({h, x(clients[h].pattern.observed()), y});
  }
  return {std::move(clients), std::move(samples)};
}

}  // namespace fedcm
