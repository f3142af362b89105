#pragma once

#include "fedcm/impute.hpp"
#include "fedcm/moments.hpp"
#include "fedcm/ridge.hpp"
#include "fedcm/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

namespace fedcm {

struct OneShotMoments {};
/// Clients impute locally, push imputed second-moment sums once; the server
/// solves the ridge system and broadcasts theta.
struct OneShotRidge {
  double lambda = 0.0;
};
struct FederatedIce {
  std::size_t rounds = 0;
  double rel_tol = linalg::kDefaultPinvTol;
};
struct FedAvgRidge {
  std::size_t rounds = 1;
  std::size_t local_steps = 1;
  double step_size = 0.1;
  double lambda = 0.0;
};
using ProtocolKind = std::variant<OneShotMoments, OneShotRidge, FederatedIce, FedAvgRidge>;

struct ProtocolSpec {
  ProtocolKind kind;
  int payload_version = kMomentPayloadVersion;

  void validate() const;
  std::string name() const;
};

// Message payloads. None of these types can carry an individual row: each
// is a fixed-size summary whose length depends on d only.

/// Pattern bitmask plus sample count; logged as bits, not floats.
struct Registration {
  std::vector<bool> mask;
  std::uint64_t count = 0;
};
/// Layout-v1 local sufficient statistics (see encode_moment_payload).
struct MomentUpload {
  std::vector<double> values;
};
struct AggregateBroadcast {
  std::vector<double> sigma_upper;
  std::vector<double> gamma;
};
/// Imputed-data statistics: upper(sum x x^T), sum x y, n_k.
struct RidgeStatsUpload {
  std::vector<double> values;
};
struct SecondMomentUpload {
  std::vector<double> upper;
};
struct CovarianceBroadcast {
  std::vector<double> upper;
};
struct ParameterMessage {
  std::vector<double> theta;
};
using Payload = std::variant<Registration, MomentUpload, AggregateBroadcast, RidgeStatsUpload, SecondMomentUpload,
                             CovarianceBroadcast, ParameterMessage>;

std::size_t payload_floats(const Payload& p);
std::size_t payload_bits(const Payload& p);
const char* payload_name(const Payload& p);

/// Broadcast messages use `peer = kBroadcast`.
inline constexpr ClientId kBroadcast = static_cast<ClientId>(-1);

struct Envelope {
  std::size_t round = 0;
  Direction direction = Direction::Up;
  ClientId peer = 0;
  Payload payload;
};

/// Synchronous in-process transport. Every message is kept in the
/// transcript and accounted in the CommLog.
class Transport {
 public:
  const Payload& send(std::size_t round, Direction dir, ClientId peer, Payload payload, std::string description);

  const std::vector<Envelope>& transcript() const { return transcript_; }
  const CommLog& log() const { return log_; }

 private:
  std::vector<Envelope> transcript_;
  CommLog log_;
};

/// Owns one client's raw rows. Nothing outside this class reads them.
class SimClient {
 public:
  SimClient(ClientSpec spec, std::vector<MaskedSample> samples);

  const ClientSpec& spec() const { return spec_; }
  std::size_t count() const { return samples_.size(); }

  Registration registration() const;
  MomentUpload moment_upload() const;

  /// Completes the local rows with the given map (kept for later rounds).
  void impute(const ImputationMap& map);
  RidgeStatsUpload ridge_stats_upload() const;
  SecondMomentUpload second_moment_upload() const;
  /// Refits the local ICE map from the broadcast and refreshes missing entries.
  void apply_ice_broadcast(const CovarianceBroadcast& msg, std::size_t round, double rel_tol);
  ParameterMessage fedavg_update(const ParameterMessage& global, double lambda, std::size_t steps,
                                 double step_size) const;

  const Matrix& imputed_rows() const { return rows_; }
  const Vector& outcomes() const { return y_; }
  const ImputationMap& imputer() const { return imputer_; }

 private:
  ClientSpec spec_;
  std::vector<MaskedSample> samples_;
  Matrix rows_;
  Vector y_;
  ImputationMap imputer_;
};

struct ServerConfig {
  /// Imputer used by OneShotRidge / FedAvgRidge and as the ICE start; zero
  /// imputation when unset.
  std::optional<ImputationMap> imputer;
};

/// Aggregation state on the server side.
class SimServer {
 public:
  SimServer(std::size_t dim, std::size_t num_clients);

  void accept_registration(ClientId k, const Registration& r);
  const FeaturePattern& registered_pattern(ClientId k) const;
  std::size_t registered_count(ClientId k) const;
  std::size_t total_count() const { return total_; }

  void accept_moments(ClientId k, const MomentUpload& m);
  /// Zero-imputed aggregate and co-observation counts of the uploads so far.
  MomentPair aggregate_moments() const;
  CoObservationCounts coobservation() const;

  void accept_ridge_stats(const RidgeStatsUpload& s);
  MomentPair imputed_moments() const;

  void reset_second_moments();
  void accept_second_moments(const SecondMomentUpload& s);
  CovarianceBroadcast second_moment_broadcast() const;

  void reset_parameters();
  void accept_parameters(ClientId k, const ParameterMessage& m);
  Vector averaged_parameters() const;

 private:
  std::size_t dim_;
  std::vector<std::optional<FeaturePattern>> patterns_;
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
  std::vector<LocalMoments> locals_;
  Matrix sxx_;
  Vector sxy_;
  std::size_t stats_n_ = 0;
  Matrix second_;
  Vector theta_acc_;
};

struct MomentsArtifact {
  MomentPair zero;
  CoObservationCounts counts;
  MomentPair cw;
};
struct RidgeArtifact {
  Vector theta;
  MomentPair imputed;
  bool pinv_used = false;
};
struct IceArtifact {
  ImputedDataset data;
  std::vector<Matrix> sigma_trace;
};
struct FedAvgArtifact {
  Vector theta;
};
using ProtocolArtifact = std::variant<MomentsArtifact, RidgeArtifact, IceArtifact, FedAvgArtifact>;

struct ProtocolRun {
  ProtocolArtifact artifact;
  CommLog log;
  std::vector<Envelope> transcript;
};

/// Splits `data` into client-owned shards and runs the message schedule.
ProtocolRun run_protocol(const ProtocolSpec& spec, const Dataset& data, const ServerConfig& cfg = {});

struct CommTotals {
  std::size_t up = 0;
  std::size_t down = 0;
  std::size_t bits = 0;
  std::size_t total() const { return up + down; }
};

/// Closed-form float counts of run_protocol for K clients in dimension d.
CommTotals replay_comm_schedule(const ProtocolSpec& spec, std::size_t k, std::size_t d);

}  // namespace fedcm
