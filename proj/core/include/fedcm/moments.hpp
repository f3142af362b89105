#pragma once

#include "fedcm/types.hpp"

#include <cstdint>

namespace fedcm {

/// Zero-imputed local sufficient statistics of one client, kept as sums so
/// that aggregation is exact and order-independent up to the fixed fold order.
struct LocalMoments {
  ClientId client = 0;
  FeaturePattern pattern;
  Matrix sum_xx;  // d x d, sum_i (M x_i)(M x_i)^T
  Vector sum_xy;  // d,     sum_i (M x_i) y_i
  std::size_t count = 0;

  /// Sigma_hat_k = sum_xx / n_k (zero matrix when n_k = 0).
  Matrix sigma() const;
  Vector gamma() const;
};

LocalMoments local_zero_imputed_moments(std::span<const MaskedSample> samples, const FeaturePattern& pattern,
                                        ClientId client = 0);
/// One LocalMoments per client, in client-id order, including empty clients.
std::vector<LocalMoments> local_moments_by_client(const Dataset& data);

/// Weighted average with weights n_k / n, folded in the given order.
MomentPair aggregate_zero_imputed(std::span<const LocalMoments> locals);

/// Sigma_hat / Pi and gamma_hat / diag(Pi), entrywise; zero-filled and marked
/// uncovered where Pi_lj = 0.
MomentPair debias_moments(const MomentPair& zero, const Matrix& pi);

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct CoObservationCounts {
  CountMatrix pair_counts;  // N_lj = #{i : l, j in obs(H_i)}
  std::size_t n = 0;
};

struct EmpiricalCoobservation {
  Matrix pi_hat;  // N / n
  CoObservationCounts counts;
};

EmpiricalCoobservation empirical_coobservation(const Dataset& data);
/// Server-side counts from registered patterns and client sample sizes.
CoObservationCounts coobservation_counts(std::span<const LocalMoments> locals);

/// Component-wise estimator from aggregated zero-imputed moments:
/// Sigma_cw_lj = (n / N_lj) Sigma_I0_lj, zero-filled and uncovered when N_lj = 0.
MomentPair cw_moments(const MomentPair& zero, const CoObservationCounts& counts);

/// Component-wise estimator computed directly: entry (l, j) is the average of
/// x_l x_j over the samples that observe both l and j.
MomentPair cw_moments_direct(const Dataset& data);

// ---------------------------------------------------------------- wire format

inline constexpr int kMomentPayloadVersion = 1;

/// Payload floats per client: n_k, upper-tri sum_xx (row-major), sum_xy and
/// one pattern-digest slot.
constexpr std::size_t moment_payload_floats(std::size_t d) { return 1 + d * (d + 1) / 2 + d + 1; }

std::vector<double> encode_moment_payload(const LocalMoments& local);
/// Rebuilds LocalMoments; throws if the digest slot does not match `registered`.
LocalMoments decode_moment_payload(std::span<const double> payload, const FeaturePattern& registered,
                                   ClientId client);

}  // namespace fedcm
