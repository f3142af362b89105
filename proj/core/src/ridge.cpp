#include "fedcm/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedcm {

void RidgeConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("RidgeConfig: lambda must be >= 0");
  if (const auto* m = std::get_if<FixedM>(&trunc); m && !(m->value >= 0.0))
    throw std::invalid_argument("RidgeConfig: truncation level must be >= 0");
  if (const auto* f = std::get_if<FedAvgSolver>(&solver)) {
    if (f->rounds < 1) throw std::invalid_argument("RidgeConfig: fedavg rounds must be >= 1");
    if (f->local_steps < 1) throw std::invalid_argument("RidgeConfig: fedavg local_steps must be >= 1");
    if (!(f->step_size > 0.0)) throw std::invalid_argument("RidgeConfig: fedavg step_size must be > 0");
  }
}

RidgeFit ridge_from_moments(const Matrix& sigma, const Vector& gamma, double lambda, double rel_tol) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ridge: lambda must be >= 0");
  if (sigma.rows() != sigma.cols() || sigma.rows() != gamma.size())
    throw std::invalid_argument("ridge: dimension mismatch");
  if (gamma.size() == 0) return {Vector(0), false};
  if (lambda == 0.0) {
    auto p = linalg::pinv(sigma, rel_tol);
    return {p.value * gamma, p.rank_deficient};
  }
  Matrix a = sigma;
  a.diagonal().array() += lambda;
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Vector theta = ldlt.solve(gamma);
    if (theta.allFinite()) return {std::move(theta), false};
  }
  auto p = linalg::pinv(a, rel_tol);
  return {p.value * gamma, true};
}

Vector cross_moment_sum(const Matrix& rows, const Vector& y, std::span<const std::size_t> which) {
  Vector acc = Vector::Zero(rows.cols());
  for (std::size_t i : which) {
    const auto r = static_cast<Index>(i);
    for (Index a = 0; a < rows.cols(); ++a) acc(a) += rows(r, a) * y(r);
  }
  return acc;
}

MomentPair imputed_moments(const ImputedDataset& data) {
  if (data.n() == 0) throw std::invalid_argument("imputed_moments: empty dataset");
  const auto d = static_cast<Index>(data.dim());
  Matrix sxx = Matrix::Zero(d, d);
  Vector sxy = Vector::Zero(d);
  const auto groups = data.rows_by_client();
  for (const auto& rows : groups) {
    sxx += second_moment_sum(data.rows, rows);
    sxy += cross_moment_sum(data.rows, data.y, rows);
  }
  const auto n = static_cast<double>(data.n());
  return {sxx / n, sxy / n, Provenance::ImputedData, data.n()};
}

RidgeFit ridge_closed_form(const ImputedDataset& data, double lambda) {
  const MomentPair m = imputed_moments(data);
  return ridge_from_moments(m.sigma(), m.gamma(), lambda);
}

double ridge_objective(const ImputedDataset& data, const Vector& theta, double lambda) {
  if (data.n() == 0) throw std::invalid_argument("ridge_objective: empty dataset");
  const Vector r = data.y - data.rows * theta;
  return r.squaredNorm() / (2.0 * static_cast<double>(data.n())) + 0.5 * lambda * theta.squaredNorm();
}

double fedavg_step_limit(const ImputedDataset& data, double lambda) {
  const MomentPair m = imputed_moments(data);
  return 2.0 / (linalg::spectral_abs_max(m.sigma()) + lambda);
}

Vector local_ridge_steps(const Matrix& x, const Vector& y, Vector theta, double lambda, std::size_t steps,
                         double step_size) {
  if (x.rows() == 0) return theta;
  const double inv_nk = 1.0 / static_cast<double>(x.rows());
  for (std::size_t s = 0; s < steps; ++s) {
    const Vector resid = x * theta - y;
    const Vector grad = inv_nk * (x.transpose() * resid) + lambda * theta;
    theta -= step_size * grad;
  }
  return theta;
}

std::vector<ClientShard> split_shards(const ImputedDataset& data) {
  const auto groups = data.rows_by_client();
  std::vector<ClientShard> shards;
  shards.reserve(groups.size());
  for (const auto& rows : groups) {
    ClientShard s{Matrix(static_cast<Index>(rows.size()), data.rows.cols()), Vector(static_cast<Index>(rows.size()))};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s.x.row(static_cast<Index>(i)) = data.rows.row(static_cast<Index>(rows[i]));
      s.y(static_cast<Index>(i)) = data.y(static_cast<Index>(rows[i]));
    }
    shards.push_back(std::move(s));
  }
  return shards;
}

FedAvgResult fedavg_ridge(const ImputedDataset& data, double lambda, const FedAvgSolver& solver,
                          std::size_t divergence_window) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("fedavg_ridge: lambda must be >= 0");
  if (solver.local_steps < 1) throw std::invalid_argument("fedavg_ridge: local_steps must be >= 1");
  if (!(solver.step_size > 0.0)) throw std::invalid_argument("fedavg_ridge: step_size must be > 0");
  if (data.n() == 0) throw std::invalid_argument("fedavg_ridge: empty dataset");
  const auto d = static_cast<Index>(data.dim());
  const auto shards = split_shards(data);
  const auto n = static_cast<double>(data.n());

  FedAvgResult res;
  res.theta = Vector::Zero(d);
  res.objective.push_back(ridge_objective(data, res.theta, lambda));
  std::size_t increases = 0;
  for (std::size_t round = 1; round <= solver.rounds; ++round) {
    Vector next = Vector::Zero(d);
    for (std::size_t k = 0; k < shards.size(); ++k) {
      res.log.record(round, Direction::Down, static_cast<std::size_t>(d), "fedavg theta to client " + std::to_string(k));
      const Vector theta_k = local_ridge_steps(shards[k].x, shards[k].y, res.theta, lambda, solver.local_steps,
                                               solver.step_size);
      res.log.record(round, Direction::Up, static_cast<std::size_t>(d), "fedavg theta from client " + std::to_string(k));
      const auto nk = static_cast<double>(shards[k].x.rows());
      if (nk > 0) next += (nk / n) * theta_k;
    }
    res.theta = std::move(next);
    res.rounds_run = round;
    const double obj = ridge_objective(data, res.theta, lambda);
    increases = obj > res.objective.back() ? increases + 1 : 0;
    res.objective.push_back(obj);
    if (!std::isfinite(obj) || increases >= divergence_window) {
      res.diverged = true;
      break;
    }
  }
  return res;
}

double truncate(double t, double m) {
  if (!(m >= 0.0)) throw std::invalid_argument("truncate: M must be >= 0");
  return std::max(-m, std::min(t, m));
}

double estimate_M(const Dataset& data) {
  if (data.n() == 0) throw std::invalid_argument("estimate_M: empty dataset");
  double m = 0.0;
  for (const auto& s : data.samples()) m = std::max(m, std::abs(s.y));
  return m;
}

double estimate_M(const ImputedDataset& data) {
  if (data.n() == 0) throw std::invalid_argument("estimate_M: empty dataset");
  return data.y.cwiseAbs().maxCoeff();
}

std::optional<double> resolve_truncation(const Truncation& trunc, const Dataset& data) {
  if (const auto* f = std::get_if<FixedM>(&trunc)) return f->value;
  if (std::holds_alternative<EstimatedM>(trunc)) return estimate_M(data);
  return std::nullopt;
}

ItrPredictor::ItrPredictor(ImputationMap imputer, Vector theta, std::optional<double> m)
    : imputer_(std::move(imputer)), theta_(std::move(theta)), m_(m) {
  if (m_ && !(*m_ >= 0.0)) throw std::invalid_argument("itr_predictor: M must be >= 0");
}

Vector ItrPredictor::effective_coefficients(const FeaturePattern& pattern) const {
  if (static_cast<std::size_t>(theta_.size()) != pattern.dim())
    throw std::invalid_argument("itr_predictor: theta dimension does not match pattern");
  const Matrix& s = imputer_[pattern];
  Vector eff = crop_vector(theta_, pattern);
  const auto mis = pattern.missing();
  if (!mis.empty() && !pattern.empty()) eff += s.transpose() * theta_(mis);
  return eff;
}

double ItrPredictor::predict(const FeaturePattern& pattern, const Vector& x_obs) const {
  const double raw = theta_.dot(imputer_.complete(x_obs, pattern));
  return m_ ? truncate(raw, *m_) : raw;
}

ClientwisePredictor ItrPredictor::to_clientwise(std::span<const ClientSpec> clients) const {
  ClientwisePredictor out;
  out.trunc_M = m_;
  for (const auto& c : clients) out.thetas[c.id] = effective_coefficients(c.pattern);
  return out;
}

ItrPredictor itr_predictor(ImputationMap imputer, Vector theta, std::optional<double> m) {
  return ItrPredictor(std::move(imputer), std::move(theta), m);
}

ClientwisePredictor local_learning(const Dataset& data, double lambda, RhoSource rho_source,
                                   std::optional<double> m) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("local_learning: lambda must be >= 0");
  ClientwisePredictor out;
  out.trunc_M = m;
  const auto groups = data.rows_by_client();
  for (const auto& c : data.clients()) {
    const auto p = static_cast<Index>(c.pattern.size());
    const auto& rows = groups[c.id];
    if (rows.empty() || p == 0) {
      out.thetas[c.id] = Vector::Zero(p);
      continue;
    }
    Matrix sxx = Matrix::Zero(p, p);
    Vector sxy = Vector::Zero(p);
    for (std::size_t i : rows) {
      const auto& s = data.samples()[i];
      sxx.selfadjointView<Eigen::Lower>().rankUpdate(s.x_obs);
      sxy += s.x_obs * s.y;
    }
    const Matrix full = sxx.selfadjointView<Eigen::Lower>();
    const auto nk = static_cast<double>(rows.size());
    const double rho = rho_source == RhoSource::True ? c.rho : nk / static_cast<double>(data.n());
    out.thetas[c.id] = ridge_from_moments(full / nk, sxy / nk, lambda / rho).theta;
  }
  return out;
}

}  // namespace fedcm
