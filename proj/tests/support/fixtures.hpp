#pragma once

#include "fedcm/popgen.hpp"
#include "fedcm/rng.hpp"
#include "fedcm/types.hpp"

#include <random>
#include <vector>

namespace fedcm::fixture {

inline Vector normal_vector(Index d, Rng& rng) {
  std::normal_distribution<double> z;
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = z(rng);
  return v;
}

/// A A^T / d + floor I with Gaussian A.
inline Matrix random_spd(Index d, Rng& rng, double floor = 0.2) {
  std::normal_distribution<double> z;
  Matrix a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = z(rng);
  Matrix s = a * a.transpose() / static_cast<double>(d) + floor * Matrix::Identity(d, d);
  return (s + s.transpose()) / 2.0;
}

/// Non-empty random subset of {0..d-1}; `allow_full` controls whether all d may be observed.
inline FeaturePattern random_pattern(std::size_t d, Rng& rng, bool allow_full = true) {
  std::bernoulli_distribution coin(0.5);
  for (;;) {
    std::vector<Index> obs;
    for (std::size_t j = 0; j < d; ++j)
      if (coin(rng)) obs.push_back(static_cast<Index>(j));
    if (obs.empty()) continue;
    if (!allow_full && obs.size() == d) continue;
    return {d, obs};
  }
}

inline std::vector<double> random_rho(std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> w(k);
  double total = 0.0;
  for (auto& x : w) total += (x = u(rng));
  for (auto& x : w) x /= total;
  // absorb rounding into the last weight so the sum is 1 within 1e-12
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) head += w[i];
  w.back() = 1.0 - head;
  return w;
}

inline std::vector<ClientSpec> random_federation(std::size_t k, std::size_t d, Rng& rng) {
  std::vector<FeaturePattern> pats;
  for (std::size_t i = 0; i < k; ++i) pats.push_back(random_pattern(d, rng));
  return make_clients(pats, random_rho(k, rng));
}

inline PopulationSpec random_population(std::size_t d, Rng& rng, double noise_var = 1.0) {
  return PopulationSpec(random_spd(static_cast<Index>(d), rng), normal_vector(static_cast<Index>(d), rng),
                        GaussianNoise{noise_var});
}

inline std::vector<FeaturePattern> patterns_1b(std::size_t d, const std::vector<std::vector<std::size_t>>& sets) {
  std::vector<FeaturePattern> out;
  for (const auto& s : sets) out.push_back(FeaturePattern::from_one_based(d, s));
  return out;
}

/// The two-client illustration: obs(1) = {1,3}, obs(2) = {2,3,4} in d = 4.
inline std::vector<ClientSpec> two_client_illustration(double rho1 = 0.5) {
  return make_clients(patterns_1b(4, {{1, 3}, {2, 3, 4}}), {rho1, 1.0 - rho1});
}

inline std::vector<Index> observed_of(const ClientSpec& c) { return c.pattern.observed(); }

}  // namespace fedcm::fixture
