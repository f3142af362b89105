#include "fedcm/fedsim.hpp"

#include <numeric>
#include <stdexcept>

namespace fedcm {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

void ProtocolSpec::validate() const {
  if (payload_version != kMomentPayloadVersion)
    throw std::invalid_argument("ProtocolSpec: unsupported payload layout version " + std::to_string(payload_version));
  std::visit(overloaded{
                 [](const OneShotMoments&) {},
                 [](const OneShotRidge& r) {
                   if (!(r.lambda >= 0.0)) throw std::invalid_argument("ProtocolSpec: lambda must be >= 0");
                 },
                 [](const FederatedIce& i) {
                   if (!(i.rel_tol > 0.0)) throw std::invalid_argument("ProtocolSpec: ICE tolerance must be > 0");
                 },
                 [](const FedAvgRidge& f) {
                   RidgeConfig{f.lambda, NoTruncation{}, FedAvgSolver{f.rounds, f.local_steps, f.step_size}}.validate();
                 },
             },
             kind);
}

std::string ProtocolSpec::name() const {
  return std::visit(overloaded{
                        [](const OneShotMoments&) { return std::string("one-shot-moments"); },
                        [](const OneShotRidge&) { return std::string("one-shot-ridge"); },
                        [](const FederatedIce& i) { return "fed-ice(T=" + std::to_string(i.rounds) + ")"; },
                        [](const FedAvgRidge& f) { return "fedavg(R=" + std::to_string(f.rounds) + ")"; },
                    },
                    kind);
}

std::size_t payload_floats(const Payload& p) {
  return std::visit(overloaded{
                        [](const Registration&) -> std::size_t { return 0; },
                        [](const MomentUpload& m) { return m.values.size(); },
                        [](const AggregateBroadcast& b) { return b.sigma_upper.size() + b.gamma.size(); },
                        [](const RidgeStatsUpload& r) { return r.values.size(); },
                        [](const SecondMomentUpload& s) { return s.upper.size(); },
                        [](const CovarianceBroadcast& c) { return c.upper.size(); },
                        [](const ParameterMessage& m) { return m.theta.size(); },
                    },
                    p);
}

std::size_t payload_bits(const Payload& p) {
  if (const auto* r = std::get_if<Registration>(&p)) return r->mask.size() + 64;
  return 0;
}

const char* payload_name(const Payload& p) {
  return std::visit(overloaded{
                        [](const Registration&) { return "registration"; },
                        [](const MomentUpload&) { return "moment-upload"; },
                        [](const AggregateBroadcast&) { return "aggregate-broadcast"; },
                        [](const RidgeStatsUpload&) { return "ridge-stats-upload"; },
                        [](const SecondMomentUpload&) { return "second-moment-upload"; },
                        [](const CovarianceBroadcast&) { return "covariance-broadcast"; },
                        [](const ParameterMessage&) { return "parameters"; },
                    },
                    p);
}

const Payload& Transport::send(std::size_t round, Direction dir, ClientId peer, Payload payload,
                               std::string description) {
  log_.record(round, dir, payload_floats(payload), std::move(description), payload_bits(payload));
  transcript_.push_back({round, dir, peer, std::move(payload)});
  return transcript_.back().payload;
}

SimClient::SimClient(ClientSpec spec, std::vector<MaskedSample> samples)
    : spec_(std::move(spec)), samples_(std::move(samples)) {
  for (const auto& s : samples_)
    if (s.client_id != spec_.id || static_cast<std::size_t>(s.x_obs.size()) != spec_.pattern.size())
      throw std::invalid_argument("SimClient: sample does not belong to this client");
}

Registration SimClient::registration() const { return {spec_.pattern.mask(), samples_.size()}; }

MomentUpload SimClient::moment_upload() const {
  return {encode_moment_payload(local_zero_imputed_moments(samples_, spec_.pattern, spec_.id))};
}

void SimClient::impute(const ImputationMap& map) {
  const auto d = static_cast<Index>(spec_.pattern.dim());
  const auto n = static_cast<Index>(samples_.size());
  rows_.resize(n, d);
  y_.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& s = samples_[static_cast<std::size_t>(i)];
    rows_.row(i) = map.complete(s.x_obs, spec_.pattern).transpose();
    y_(i) = s.y;
  }
  imputer_ = ImputationMap(map.kind(), map.source(), map.round());
  imputer_.set(spec_.pattern, map[spec_.pattern]);
}

RidgeStatsUpload SimClient::ridge_stats_upload() const {
  const auto idx = iota_rows(samples_.size());
  RidgeStatsUpload out{linalg::pack_upper(second_moment_sum(rows_, idx))};
  const Vector sxy = cross_moment_sum(rows_, y_, idx);
  out.values.insert(out.values.end(), sxy.data(), sxy.data() + sxy.size());
  out.values.push_back(static_cast<double>(samples_.size()));
  return out;
}

SecondMomentUpload SimClient::second_moment_upload() const {
  return {linalg::pack_upper(second_moment_sum(rows_, iota_rows(samples_.size())))};
}

void SimClient::apply_ice_broadcast(const CovarianceBroadcast& msg, std::size_t round, double rel_tol) {
  const auto d = static_cast<Index>(spec_.pattern.dim());
  const Matrix sigma_t = linalg::unpack_upper(msg.upper, d);
  ImputationMap next(ImputerKind::ICE, CovarianceSource::Empirical, round);
  add_optimal_pattern(next, sigma_t, spec_.pattern, rel_tol);
  const auto mis = spec_.pattern.missing();
  if (!mis.empty()) {
    const Matrix& s = next[spec_.pattern];
    for (Index r = 0; r < rows_.rows(); ++r) {
      const Vector x_obs = rows_(r, spec_.pattern.observed()).transpose();
      const Vector fresh = s * x_obs;
      for (Index m = 0; m < static_cast<Index>(mis.size()); ++m) rows_(r, mis[m]) = fresh(m);
    }
  }
  imputer_ = std::move(next);
}

ParameterMessage SimClient::fedavg_update(const ParameterMessage& global, double lambda, std::size_t steps,
                                          double step_size) const {
  return {to_std(local_ridge_steps(rows_, y_, to_eigen(global.theta), lambda, steps, step_size))};
}

SimServer::SimServer(std::size_t dim, std::size_t num_clients)
    : dim_(dim), patterns_(num_clients), counts_(num_clients, 0) {
  const auto d = static_cast<Index>(dim);
  sxx_ = Matrix::Zero(d, d);
  sxy_ = Vector::Zero(d);
  second_ = Matrix::Zero(d, d);
  theta_acc_ = Vector::Zero(d);
}

void SimServer::accept_registration(ClientId k, const Registration& r) {
  if (k >= patterns_.size()) throw std::out_of_range("SimServer: unknown client id");
  if (r.mask.size() != dim_) throw std::invalid_argument("SimServer: registration mask has wrong dimension");
  if (patterns_[k]) throw std::invalid_argument("SimServer: client registered twice");
  patterns_[k] = FeaturePattern::from_mask(r.mask);
  counts_[k] = static_cast<std::size_t>(r.count);
  total_ += counts_[k];
}

const FeaturePattern& SimServer::registered_pattern(ClientId k) const {
  if (k >= patterns_.size() || !patterns_[k]) throw std::out_of_range("SimServer: client not registered");
  return *patterns_[k];
}

std::size_t SimServer::registered_count(ClientId k) const {
  registered_pattern(k);
  return counts_[k];
}

void SimServer::accept_moments(ClientId k, const MomentUpload& m) {
  auto local = decode_moment_payload(m.values, registered_pattern(k), k);
  if (local.count != counts_[k]) throw std::invalid_argument("SimServer: moment count differs from registration");
  locals_.push_back(std::move(local));
}

MomentPair SimServer::aggregate_moments() const { return aggregate_zero_imputed(locals_); }

CoObservationCounts SimServer::coobservation() const { return coobservation_counts(locals_); }

void SimServer::accept_ridge_stats(const RidgeStatsUpload& s) {
  const auto d = static_cast<Index>(dim_);
  const std::size_t tri = static_cast<std::size_t>(linalg::upper_size(d));
  if (s.values.size() != tri + dim_ + 1) throw std::invalid_argument("SimServer: ridge statistics have wrong length");
  const std::span<const double> v(s.values);
  sxx_ += linalg::unpack_upper(v.subspan(0, tri), d);
  sxy_ += Eigen::Map<const Vector>(v.data() + tri, d);
  stats_n_ += static_cast<std::size_t>(v.back());
}

MomentPair SimServer::imputed_moments() const {
  if (stats_n_ == 0) throw std::invalid_argument("SimServer: no samples in ridge statistics");
  const auto n = static_cast<double>(stats_n_);
  return {sxx_ / n, sxy_ / n, Provenance::ImputedData, stats_n_};
}

void SimServer::reset_second_moments() { second_.setZero(); }

void SimServer::accept_second_moments(const SecondMomentUpload& s) {
  second_ += linalg::unpack_upper(s.upper, static_cast<Index>(dim_));
}

CovarianceBroadcast SimServer::second_moment_broadcast() const {
  if (total_ == 0) throw std::invalid_argument("SimServer: no samples registered");
  const Matrix sigma_t = second_ / static_cast<double>(total_);
  if (!sigma_t.allFinite()) throw std::runtime_error("SimServer: non-finite ICE second moment");
  return {linalg::pack_upper(sigma_t)};
}

void SimServer::reset_parameters() { theta_acc_.setZero(); }

void SimServer::accept_parameters(ClientId k, const ParameterMessage& m) {
  if (m.theta.size() != dim_) throw std::invalid_argument("SimServer: parameter vector has wrong length");
  const auto nk = static_cast<double>(counts_.at(k));
  if (nk > 0) theta_acc_ += (nk / static_cast<double>(total_)) * to_eigen(m.theta);
}

Vector SimServer::averaged_parameters() const { return theta_acc_; }

ProtocolRun run_protocol(const ProtocolSpec& spec, const Dataset& data, const ServerConfig& cfg) {
  spec.validate();
  if (data.n() == 0) throw std::invalid_argument("run_protocol: empty dataset");
  const std::size_t d = data.dim();

  std::vector<SimClient> clients;
  clients.reserve(data.num_clients());
  for (const auto& c : data.clients()) clients.emplace_back(c, data.shard(c.id));
  SimServer server(d, clients.size());
  Transport net;

  for (auto& c : clients) {
    const auto& p = net.send(0, Direction::Up, c.spec().id, c.registration(),
                             "registration, client " + std::to_string(c.spec().id));
    server.accept_registration(c.spec().id, std::get<Registration>(p));
  }

  const ImputationMap init = cfg.imputer ? *cfg.imputer : fit_zero_imputer(data.clients());

  ProtocolArtifact artifact = std::visit(
      overloaded{
          [&](const OneShotMoments&) -> ProtocolArtifact {
            for (const auto& c : clients) {
              const auto& p = net.send(1, Direction::Up, c.spec().id, c.moment_upload(),
                                       "moments, client " + std::to_string(c.spec().id));
              server.accept_moments(c.spec().id, std::get<MomentUpload>(p));
            }
            MomentsArtifact out{server.aggregate_moments(), server.coobservation(), {}};
            out.cw = cw_moments(out.zero, out.counts);
            net.send(1, Direction::Down, kBroadcast,
                     AggregateBroadcast{linalg::pack_upper(out.zero.sigma()), to_std(out.zero.gamma())},
                     "aggregate moments broadcast");
            return out;
          },
          [&](const OneShotRidge& r) -> ProtocolArtifact {
            for (auto& c : clients) {
              c.impute(init);
              const auto& p = net.send(1, Direction::Up, c.spec().id, c.ridge_stats_upload(),
                                       "imputed statistics, client " + std::to_string(c.spec().id));
              server.accept_ridge_stats(std::get<RidgeStatsUpload>(p));
            }
            RidgeArtifact out{Vector(), server.imputed_moments(), false};
            auto fit = ridge_from_moments(out.imputed.sigma(), out.imputed.gamma(), r.lambda);
            out.theta = std::move(fit.theta);
            out.pinv_used = fit.pinv_used;
            net.send(1, Direction::Down, kBroadcast, ParameterMessage{to_std(out.theta)}, "ridge theta broadcast");
            return out;
          },
          [&](const FederatedIce& ice) -> ProtocolArtifact {
            for (auto& c : clients) c.impute(init);
            IceArtifact out;
            for (std::size_t t = 1; t <= ice.rounds; ++t) {
              server.reset_second_moments();
              for (const auto& c : clients) {
                const auto& p = net.send(t, Direction::Up, c.spec().id, c.second_moment_upload(),
                                         "ice second-moment sums, client " + std::to_string(c.spec().id));
                server.accept_second_moments(std::get<SecondMomentUpload>(p));
              }
              const auto& b = net.send(t, Direction::Down, kBroadcast, server.second_moment_broadcast(),
                                       "ice broadcast Sigma_t");
              const auto& cov = std::get<CovarianceBroadcast>(b);
              out.sigma_trace.push_back(linalg::unpack_upper(cov.upper, static_cast<Index>(d)));
              for (auto& c : clients) c.apply_ice_broadcast(cov, t, ice.rel_tol);
            }
            // Simulation output only: gather the client-held rows back into dataset order.
            const auto groups = data.rows_by_client();
            auto& res = out.data;
            res.rows.resize(static_cast<Index>(data.n()), static_cast<Index>(d));
            res.y.resize(static_cast<Index>(data.n()));
            res.client_ids.assign(data.n(), 0);
            res.clients = data.clients();
            res.imputer = ice.rounds ? ImputationMap(ImputerKind::ICE, CovarianceSource::Empirical, ice.rounds) : init;
            for (const auto& c : clients) {
              const auto id = c.spec().id;
              if (ice.rounds) res.imputer.set(c.spec().pattern, c.imputer()[c.spec().pattern]);
              for (std::size_t i = 0; i < groups[id].size(); ++i) {
                const auto row = static_cast<Index>(groups[id][i]);
                res.rows.row(row) = c.imputed_rows().row(static_cast<Index>(i));
                res.y(row) = c.outcomes()(static_cast<Index>(i));
                res.client_ids[groups[id][i]] = id;
              }
            }
            return out;
          },
          [&](const FedAvgRidge& f) -> ProtocolArtifact {
            for (auto& c : clients) c.impute(init);
            ParameterMessage global{std::vector<double>(d, 0.0)};
            for (std::size_t round = 1; round <= f.rounds; ++round) {
              server.reset_parameters();
              for (const auto& c : clients) {
                const auto id = c.spec().id;
                const auto& down = net.send(round, Direction::Down, id, global,
                                            "fedavg theta to client " + std::to_string(id));
                const auto& up = net.send(round, Direction::Up, id,
                                          c.fedavg_update(std::get<ParameterMessage>(down), f.lambda, f.local_steps,
                                                          f.step_size),
                                          "fedavg theta from client " + std::to_string(id));
                server.accept_parameters(id, std::get<ParameterMessage>(up));
              }
              global.theta = to_std(server.averaged_parameters());
            }
            return FedAvgArtifact{to_eigen(global.theta)};
          },
      },
      spec.kind);

  return {std::move(artifact), net.log(), net.transcript()};
}

CommTotals replay_comm_schedule(const ProtocolSpec& spec, std::size_t k, std::size_t d) {
  spec.validate();
  const std::size_t tri = d * (d + 1) / 2;
  CommTotals t;
  t.bits = k * (d + 64);
  std::visit(overloaded{
                 [&](const OneShotMoments&) {
                   t.up = k * moment_payload_floats(d);
                   t.down = tri + d;
                 },
                 [&](const OneShotRidge&) {
                   t.up = k * (tri + d + 1);
                   t.down = d;
                 },
                 [&](const FederatedIce& i) {
                   t.up = i.rounds * k * tri;
                   t.down = i.rounds * tri;
                 },
                 [&](const FedAvgRidge& f) {
                   t.up = f.rounds * k * d;
                   t.down = f.rounds * k * d;
                 },
             },
             spec.kind);
  return t;
}

}  // namespace fedcm
