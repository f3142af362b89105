#include "fedcm/moments.hpp"

#include <cmath>
#include <stdexcept>

namespace fedcm {

Matrix LocalMoments::sigma() const {
  if (count == 0) return Matrix::Zero(sum_xx.rows(), sum_xx.cols());
  return sum_xx / static_cast<double>(count);
}

Vector LocalMoments::gamma() const {
  if (count == 0) return Vector::Zero(sum_xy.size());
  return sum_xy / static_cast<double>(count);
}

LocalMoments local_zero_imputed_moments(std::span<const MaskedSample> samples, const FeaturePattern& pattern,
                                        ClientId client) {
  const auto d = static_cast<Index>(pattern.dim());
  const auto& obs = pattern.observed();
  const auto p = static_cast<Index>(obs.size());
  LocalMoments out{client, pattern, Matrix::Zero(d, d), Vector::Zero(d), samples.size()};
  // Accumulate on the observed block only; unobserved rows/cols stay zero.
  for (const auto& s : samples) {
    if (s.x_obs.size() != p) throw std::invalid_argument("local_zero_imputed_moments: sample does not match pattern");
    for (Index a = 0; a < p; ++a) {
      const double xa = s.x_obs(a);
      out.sum_xy(obs[a]) += xa * s.y;
      for (Index b = a; b < p; ++b) out.sum_xx(obs[a], obs[b]) += xa * s.x_obs(b);
    }
  }
  for (Index a = 0; a < p; ++a)
    for (Index b = a + 1; b < p; ++b) out.sum_xx(obs[b], obs[a]) = out.sum_xx(obs[a], obs[b]);
  return out;
}

std::vector<LocalMoments> local_moments_by_client(const Dataset& data) {
  const auto rows = data.rows_by_client();
  std::vector<LocalMoments> out;
  out.reserve(data.num_clients());
  for (const auto& c : data.clients()) {
    std::vector<MaskedSample> shard;
    shard.reserve(rows[c.id].size());
    for (std::size_t i : rows[c.id]) shard.push_back(data.samples()[i]);
    out.push_back(local_zero_imputed_moments(shard, c.pattern, c.id));
  }
  return out;
}

MomentPair aggregate_zero_imputed(std::span<const LocalMoments> locals) {
  if (locals.empty()) throw std::invalid_argument("aggregate_zero_imputed: no local statistics");
  const Index d = locals.front().sum_xy.size();
  Matrix sxx = Matrix::Zero(d, d);
  Vector sxy = Vector::Zero(d);
  CoverageMask covered = CoverageMask::Constant(d, d, false);
  std::size_t n = 0;
  for (const auto& l : locals) {
    if (l.sum_xy.size() != d) throw std::invalid_argument("aggregate_zero_imputed: dimension mismatch");
    sxx += l.sum_xx;
    sxy += l.sum_xy;
    n += l.count;
    if (l.count > 0)
      for (Index a : l.pattern.observed())
        for (Index b : l.pattern.observed()) covered(a, b) = true;
  }
  if (n == 0) throw std::invalid_argument("aggregate_zero_imputed: total sample count is zero");
  const double inv = 1.0 / static_cast<double>(n);
  return {sxx * inv, sxy * inv, Provenance::ZeroImputed, std::move(covered), n};
}

MomentPair debias_moments(const MomentPair& zero, const Matrix& pi) {
  const auto d = static_cast<Index>(zero.dim());
  if (pi.rows() != d || pi.cols() != d) throw std::invalid_argument("debias_moments: Pi has wrong shape");
  Matrix s = Matrix::Zero(d, d);
  Vector g = Vector::Zero(d);
  CoverageMask covered = CoverageMask::Constant(d, d, false);
  for (Index l = 0; l < d; ++l) {
    if (pi(l, l) > 0.0) g(l) = zero.gamma()(l) / pi(l, l);
    for (Index j = 0; j < d; ++j) {
      if (pi(l, j) > 0.0) {
        s(l, j) = zero.sigma()(l, j) / pi(l, j);
        covered(l, j) = true;
      }
    }
  }
  return {s, g, Provenance::Debiased, std::move(covered), zero.n()};
}

EmpiricalCoobservation empirical_coobservation(const Dataset& data) {
  if (data.n() == 0) throw std::invalid_argument("empirical_coobservation: empty dataset");
  const auto d = static_cast<Index>(data.dim());
  CountMatrix counts = CountMatrix::Zero(d, d);
  const auto per_client = data.client_counts();
  for (const auto& c : data.clients()) {
    const auto nk = static_cast<std::int64_t>(per_client[c.id]);
    for (Index a : c.pattern.observed())
      for (Index b : c.pattern.observed()) counts(a, b) += nk;
  }
  Matrix pi_hat = counts.cast<double>() / static_cast<double>(data.n());
  return {std::move(pi_hat), {std::move(counts), data.n()}};
}

CoObservationCounts coobservation_counts(std::span<const LocalMoments> locals) {
  if (locals.empty()) throw std::invalid_argument("coobservation_counts: no local statistics");
  const Index d = locals.front().sum_xy.size();
  CoObservationCounts out{CountMatrix::Zero(d, d), 0};
  for (const auto& l : locals) {
    out.n += l.count;
    for (Index a : l.pattern.observed())
      for (Index b : l.pattern.observed()) out.pair_counts(a, b) += static_cast<std::int64_t>(l.count);
  }
  return out;
}

MomentPair cw_moments(const MomentPair& zero, const CoObservationCounts& counts) {
  const auto d = static_cast<Index>(zero.dim());
  if (counts.pair_counts.rows() != d || counts.pair_counts.cols() != d)
    throw std::invalid_argument("cw_moments: counts have wrong shape");
  if (counts.n == 0) throw std::invalid_argument("cw_moments: zero samples");
  const auto n = static_cast<double>(counts.n);
  Matrix s = Matrix::Zero(d, d);
  Vector g = Vector::Zero(d);
  CoverageMask covered = CoverageMask::Constant(d, d, false);
  for (Index l = 0; l < d; ++l) {
    if (counts.pair_counts(l, l) > 0) g(l) = zero.gamma()(l) * (n / static_cast<double>(counts.pair_counts(l, l)));
    for (Index j = 0; j < d; ++j) {
      const auto nlj = counts.pair_counts(l, j);
      if (nlj > 0) {
        s(l, j) = zero.sigma()(l, j) * (n / static_cast<double>(nlj));
        covered(l, j) = true;
      }
    }
  }
  return {s, g, Provenance::ComponentWise, std::move(covered), counts.n};
}

MomentPair cw_moments_direct(const Dataset& data) {
  if (data.n() == 0) throw std::invalid_argument("cw_moments_direct: empty dataset");
  const auto d = static_cast<Index>(data.dim());
  Matrix sxx = Matrix::Zero(d, d);
  Vector sxy = Vector::Zero(d);
  CountMatrix counts = CountMatrix::Zero(d, d);
  for (const auto& s : data.samples()) {
    const auto& obs = data.pattern_of(s).observed();
    const auto p = static_cast<Index>(obs.size());
    for (Index a = 0; a < p; ++a) {
      sxy(obs[a]) += s.x_obs(a) * s.y;
      for (Index b = 0; b < p; ++b) {
        sxx(obs[a], obs[b]) += s.x_obs(a) * s.x_obs(b);
        counts(obs[a], obs[b]) += 1;
      }
    }
  }
  Matrix sigma = Matrix::Zero(d, d);
  Vector gamma = Vector::Zero(d);
  CoverageMask covered = CoverageMask::Constant(d, d, false);
  for (Index l = 0; l < d; ++l) {
    if (counts(l, l) > 0) gamma(l) = sxy(l) / static_cast<double>(counts(l, l));
    for (Index j = 0; j < d; ++j) {
      if (counts(l, j) > 0) {
        sigma(l, j) = sxx(l, j) / static_cast<double>(counts(l, j));
        covered(l, j) = true;
      }
    }
  }
  return {sigma, gamma, Provenance::ComponentWise, std::move(covered), data.n()};
}

std::vector<double> encode_moment_payload(const LocalMoments& local) {
  const auto d = static_cast<std::size_t>(local.sum_xy.size());
  std::vector<double> out;
  out.reserve(moment_payload_floats(d));
  out.push_back(static_cast<double>(local.count));
  for (double v : linalg::pack_upper(local.sum_xx)) out.push_back(v);
  for (Index j = 0; j < local.sum_xy.size(); ++j) out.push_back(local.sum_xy(j));
  out.push_back(static_cast<double>(local.pattern.digest()));
  return out;
}

LocalMoments decode_moment_payload(std::span<const double> payload, const FeaturePattern& registered,
                                   ClientId client) {
  const std::size_t d = registered.dim();
  if (payload.size() != moment_payload_floats(d))
    throw std::invalid_argument("decode_moment_payload: payload length does not match layout v1");
  const std::size_t tri = d * (d + 1) / 2;
  if (static_cast<std::uint64_t>(payload.back()) != registered.digest())
    throw std::invalid_argument("decode_moment_payload: pattern digest does not match registration");
  LocalMoments out;
  out.client = client;
  out.pattern = registered;
  out.count = static_cast<std::size_t>(payload[0]);
  out.sum_xx = linalg::unpack_upper(payload.subspan(1, tri), static_cast<Index>(d));
  out.sum_xy = Eigen::Map<const Vector>(payload.data() + 1 + tri, static_cast<Index>(d));
  return out;
}

}  // namespace fedcm
