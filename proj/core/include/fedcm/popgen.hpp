#pragma once

#include "fedcm/rng.hpp"
#include "fedcm/types.hpp"

#include <optional>
#include <variant>

namespace fedcm {

struct GaussianNoise {
  double variance = 1.0;
};
/// Uniform on [-half_width, half_width].
struct UniformNoise {
  double half_width = 1.0;
};
using NoiseLaw = std::variant<GaussianNoise, UniformNoise>;

/// X = Sigma^{1/2} z with z ~ N(0, I).
struct GaussianDesign {};
/// X = Sigma^{1/2} s with s uniform on the sphere of radius sqrt(d), so that
/// E[X X^T] = Sigma and ||X|| is bounded.
struct SphereDesign {};
using DesignLaw = std::variant<GaussianDesign, SphereDesign>;

/// Ground truth (Sigma, theta_star, noise law, design law). gamma is derived
/// as Sigma * theta_star.
class PopulationSpec {
 public:
  PopulationSpec(Matrix sigma, Vector theta_star, NoiseLaw noise = GaussianNoise{},
                 DesignLaw design = GaussianDesign{});

  std::size_t dim() const { return static_cast<std::size_t>(theta_star_.size()); }
  const Matrix& sigma() const { return sigma_; }
  const Matrix& sigma_sqrt() const { return sigma_sqrt_; }
  const Vector& theta_star() const { return theta_star_; }
  const NoiseLaw& noise() const { return noise_; }
  const DesignLaw& design() const { return design_; }

  double noise_variance() const;
  /// E[Y^2] = sigma^2 + theta_star^T Sigma theta_star.
  double outcome_second_moment() const;
  /// Almost-sure bound on |Y|; only finite for SphereDesign with UniformNoise:
  /// sqrt(d) * ||Sigma^{1/2} theta_star|| + half_width.
  std::optional<double> outcome_bound() const;

 private:
  Matrix sigma_;
  Matrix sigma_sqrt_;
  Vector theta_star_;
  NoiseLaw noise_;
  DesignLaw design_;
};

Vector population_gamma(const PopulationSpec& pop);

Matrix identity_covariance(std::size_t d);
/// Unit diagonal, off-diagonal r. PSD for r in [-1/(d-1), 1].
Matrix equicorrelated_covariance(std::size_t d, double r);
/// Sigma_ij = r^|i-j|.
Matrix toeplitz_covariance(std::size_t d, double r);

/// Each (client, feature) pair observed independently with probability tau.
/// Empty patterns are kept.
std::vector<FeaturePattern> draw_bernoulli_patterns(std::size_t k, std::size_t d, double tau, Rng& rng);

/// Pi_lj = sum_k rho_k 1{l in obs(k)} 1{j in obs(k)}.
Matrix co_observation_matrix(std::span<const ClientSpec> clients);

/// Categorical sampler over client weights (inverse CDF on one uniform draw).
class ClientSampler {
 public:
  explicit ClientSampler(std::span<const ClientSpec> clients);
  ClientId operator()(Rng& rng) const;

 private:
  std::vector<double> cumulative_;
};

/// Draws one complete (X, Y) pair into caller-owned storage. `z` is scratch.
void draw_complete(const PopulationSpec& pop, Rng& rng, Vector& z, Vector& x, double& y);

/// n i.i.d. samples: H ~ Categorical(rho), then (X, Y) independently of H,
/// keeping only ([X]_obs(H), Y, H).
Dataset sample_dataset(const PopulationSpec& pop, std::vector<ClientSpec> clients, std::size_t n, Rng& rng);

}  // namespace fedcm
