#pragma once

#include "fedcm/types.hpp"

#include <map>
#include <optional>

namespace fedcm {

enum class ImputerKind { Zero, OptimalLinear, ICE };
enum class CovarianceSource { None, Population, ComponentWise, Empirical };

const char* to_string(ImputerKind k);

/// Per-pattern linear completion x_mis = S_k x_obs, with S_k of shape
/// |mis(k)| x |obs(k)|. Observed entries are always copied through.
class ImputationMap {
 public:
  ImputationMap() = default;
  ImputationMap(ImputerKind kind, CovarianceSource source, std::size_t round = 0);

  ImputerKind kind() const { return kind_; }
  CovarianceSource source() const { return source_; }
  std::size_t round() const { return round_; }

  void set(const FeaturePattern& pattern, Matrix s);
  bool covers(const FeaturePattern& pattern) const { return maps_.count(pattern) != 0; }
  /// Throws std::out_of_range for a pattern the map was not fitted on.
  const Matrix& operator[](const FeaturePattern& pattern) const;
  const std::map<FeaturePattern, Matrix>& maps() const { return maps_; }
  /// Patterns whose observed set was empty (imputed with zeros).
  const std::vector<FeaturePattern>& empty_observed() const { return empty_observed_; }
  void flag_empty_observed(const FeaturePattern& p) { empty_observed_.push_back(p); }

  /// phi(x_obs, k): the completed d-vector.
  Vector complete(const Vector& x_obs, const FeaturePattern& pattern) const;
  /// d x d operator P_k with phi(x, k) = P_k x for complete x.
  Matrix completion_operator(const FeaturePattern& pattern) const;

 private:
  ImputerKind kind_ = ImputerKind::Zero;
  CovarianceSource source_ = CovarianceSource::None;
  std::size_t round_ = 0;
  std::map<FeaturePattern, Matrix> maps_;
  std::vector<FeaturePattern> empty_observed_;
};

struct ImputedDataset {
  Matrix rows;  // n x d
  Vector y;
  std::vector<ClientId> client_ids;
  std::vector<ClientSpec> clients;
  ImputationMap imputer;

  std::size_t n() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
  std::vector<std::vector<std::size_t>> rows_by_client() const;
};

ImputationMap fit_zero_imputer(std::span<const ClientSpec> clients);

/// S_k = Sigma_{mis,obs} Sigma_obs^+ for each client pattern. Never
/// PSD-projects `sigma`.
ImputationMap fit_optimal_imputer(const Matrix& sigma, std::span<const ClientSpec> clients,
                                  CovarianceSource source, double rel_tol = linalg::kDefaultPinvTol);

/// Adds (or replaces) the optimal map for one pattern.
void add_optimal_pattern(ImputationMap& map, const Matrix& sigma, const FeaturePattern& pattern,
                         double rel_tol = linalg::kDefaultPinvTol);

ImputedDataset apply_imputer(const ImputationMap& map, const Dataset& data);

/// Sum of x x^T over rows of one client, accumulated row by row in order.
Matrix second_moment_sum(const Matrix& rows, std::span<const std::size_t> which);

struct IceOptions {
  std::size_t rounds = 0;
  double rel_tol = linalg::kDefaultPinvTol;
  std::optional<double> early_stop_rms;
};

struct IceResult {
  ImputedDataset data;
  std::vector<Matrix> sigma_trace;  // Sigma_hat_t for each executed round
  std::vector<double> rms_change;   // RMS change of imputed entries per round
  CommLog log;
  std::size_t rounds_run = 0;
  bool early_stopped = false;
  bool aborted = false;
};

/// Federated ICE: each round the clients push second-moment sums of their
/// current imputed rows, the server averages and broadcasts Sigma_hat_t (raw
/// second moment), and each client refreshes its missing block with
/// (Sigma_hat_t)_{mis,obs} (Sigma_hat_t)_obs^+ x_obs.
IceResult federated_ice(const Dataset& data, const IceOptions& opt, const ImputationMap& init);

}  // namespace fedcm
