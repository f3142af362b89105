#include "fedcm/impute.hpp"

#include <cmath>
#include <stdexcept>

namespace fedcm {

const char* to_string(ImputerKind k) {
  switch (k) {
    case ImputerKind::Zero: return "zero";
    case ImputerKind::OptimalLinear: return "optimal-linear";
    case ImputerKind::ICE: return "ice";
  }
  return "unknown";
}

ImputationMap::ImputationMap(ImputerKind kind, CovarianceSource source, std::size_t round)
    : kind_(kind), source_(source), round_(round) {}

void ImputationMap::set(const FeaturePattern& pattern, Matrix s) {
  const auto mis = static_cast<Index>(pattern.dim() - pattern.size());
  const auto obs = static_cast<Index>(pattern.size());
  if (s.rows() != mis || s.cols() != obs) throw std::invalid_argument("ImputationMap::set: S has wrong shape");
  maps_[pattern] = std::move(s);
}

const Matrix& ImputationMap::operator[](const FeaturePattern& pattern) const {
  auto it = maps_.find(pattern);
  if (it == maps_.end()) throw std::out_of_range("imputation map has no entry for pattern " + pattern.to_string());
  return it->second;
}

Vector ImputationMap::complete(const Vector& x_obs, const FeaturePattern& pattern) const {
  const Matrix& s = (*this)[pattern];
  Vector out(static_cast<Index>(pattern.dim()));
  out(pattern.observed()) = x_obs;
  const auto mis = pattern.missing();
  if (!mis.empty()) out(mis) = s * x_obs;
  return out;
}

Matrix ImputationMap::completion_operator(const FeaturePattern& pattern) const {
  const Matrix& s = (*this)[pattern];
  const auto d = static_cast<Index>(pattern.dim());
  Matrix p = Matrix::Zero(d, d);
  const auto& obs = pattern.observed();
  const auto mis = pattern.missing();
  for (Index a = 0; a < static_cast<Index>(obs.size()); ++a) p(obs[a], obs[a]) = 1.0;
  for (Index r = 0; r < static_cast<Index>(mis.size()); ++r)
    for (Index a = 0; a < static_cast<Index>(obs.size()); ++a) p(mis[r], obs[a]) = s(r, a);
  return p;
}

std::vector<std::vector<std::size_t>> ImputedDataset::rows_by_client() const {
  std::vector<std::vector<std::size_t>> out(clients.size());
  for (std::size_t i = 0; i < client_ids.size(); ++i) out[client_ids[i]].push_back(i);
  return out;
}

ImputationMap fit_zero_imputer(std::span<const ClientSpec> clients) {
  ImputationMap map(ImputerKind::Zero, CovarianceSource::None);
  for (const auto& c : clients) {
    const auto mis = static_cast<Index>(c.pattern.dim() - c.pattern.size());
    map.set(c.pattern, Matrix::Zero(mis, static_cast<Index>(c.pattern.size())));
  }
  return map;
}

void add_optimal_pattern(ImputationMap& map, const Matrix& sigma, const FeaturePattern& pattern, double rel_tol) {
  if (static_cast<std::size_t>(sigma.rows()) != pattern.dim())
    throw std::invalid_argument("fit_optimal_imputer: sigma dimension mismatch");
  const auto mis = pattern.missing();
  const auto& obs = pattern.observed();
  if (obs.empty()) {
    map.set(pattern, Matrix::Zero(static_cast<Index>(mis.size()), 0));
    map.flag_empty_observed(pattern);
    return;
  }
  const Matrix s_obs = sigma(obs, obs);
  const Matrix s_mis_obs = sigma(mis, obs);
  map.set(pattern, s_mis_obs * linalg::pinv(s_obs, rel_tol).value);
}

ImputationMap fit_optimal_imputer(const Matrix& sigma, std::span<const ClientSpec> clients,
                                  CovarianceSource source, double rel_tol) {
  if (sigma.rows() != sigma.cols()) throw std::invalid_argument("fit_optimal_imputer: sigma must be square");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("fit_optimal_imputer: sigma must be symmetric");
  ImputationMap map(ImputerKind::OptimalLinear, source);
  for (const auto& c : clients)
    if (!map.covers(c.pattern)) add_optimal_pattern(map, sigma, c.pattern, rel_tol);
  return map;
}

ImputedDataset apply_imputer(const ImputationMap& map, const Dataset& data) {
  const auto n = static_cast<Index>(data.n());
  const auto d = static_cast<Index>(data.dim());
  ImputedDataset out{Matrix(n, d), Vector(n), {}, data.clients(), map};
  out.client_ids.reserve(data.n());
  for (const auto& c : data.clients())
    if (!map.covers(c.pattern)) throw std::invalid_argument("apply_imputer: map does not cover pattern " + c.pattern.to_string());
  for (Index i = 0; i < n; ++i) {
    const auto& s = data.samples()[static_cast<std::size_t>(i)];
    out.rows.row(i) = map.complete(s.x_obs, data.pattern_of(s)).transpose();
    out.y(i) = s.y;
    out.client_ids.push_back(s.client_id);
  }
  return out;
}

Matrix second_moment_sum(const Matrix& rows, std::span<const std::size_t> which) {
  const Index d = rows.cols();
  Matrix acc = Matrix::Zero(d, d);
  for (std::size_t i : which) {
    const auto r = static_cast<Index>(i);
    for (Index a = 0; a < d; ++a) {
      const double xa = rows(r, a);
      for (Index b = a; b < d; ++b) acc(a, b) += xa * rows(r, b);
    }
  }
  for (Index a = 0; a < d; ++a)
    for (Index b = a + 1; b < d; ++b) acc(b, a) = acc(a, b);
  return acc;
}

IceResult federated_ice(const Dataset& data, const IceOptions& opt, const ImputationMap& init) {
  if (data.n() == 0) throw std::invalid_argument("federated_ice: empty dataset");
  IceResult res;
  res.data = apply_imputer(init, data);
  const auto d = static_cast<Index>(data.dim());
  const std::size_t tri = static_cast<std::size_t>(linalg::upper_size(d));
  const auto by_client = res.data.rows_by_client();
  const auto n = static_cast<double>(data.n());

  for (std::size_t t = 0; t < opt.rounds; ++t) {
    Matrix total = Matrix::Zero(d, d);
    for (const auto& c : data.clients()) {
      total += second_moment_sum(res.data.rows, by_client[c.id]);
      res.log.record(t + 1, Direction::Up, tri, "ice second-moment sums, client " + std::to_string(c.id));
    }
    Matrix sigma_t = total / n;
    if (!sigma_t.allFinite()) {
      res.aborted = true;
      break;
    }
    res.log.record(t + 1, Direction::Down, tri, "ice broadcast Sigma_t");
    res.sigma_trace.push_back(sigma_t);

    ImputationMap next(ImputerKind::ICE, CovarianceSource::Empirical, t + 1);
    for (const auto& c : data.clients())
      if (!next.covers(c.pattern)) add_optimal_pattern(next, sigma_t, c.pattern, opt.rel_tol);

    double sq = 0.0;
    std::size_t cnt = 0;
    for (const auto& c : data.clients()) {
      const auto mis = c.pattern.missing();
      if (mis.empty()) continue;
      const Matrix& s = next[c.pattern];
      for (std::size_t i : by_client[c.id]) {
        const auto r = static_cast<Index>(i);
        const Vector x_obs = res.data.rows(r, c.pattern.observed()).transpose();
        const Vector fresh = s * x_obs;
        for (Index m = 0; m < static_cast<Index>(mis.size()); ++m) {
          const double diff = fresh(m) - res.data.rows(r, mis[m]);
          sq += diff * diff;
          res.data.rows(r, mis[m]) = fresh(m);
        }
        cnt += mis.size();
      }
    }
    if (!res.data.rows.allFinite()) {
      res.aborted = true;
      break;
    }
    const double rms = cnt ? std::sqrt(sq / static_cast<double>(cnt)) : 0.0;
    res.rms_change.push_back(rms);
    res.data.imputer = std::move(next);
    res.rounds_run = t + 1;
    if (opt.early_stop_rms && rms < *opt.early_stop_rms) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

}  // namespace fedcm
