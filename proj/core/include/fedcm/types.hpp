#pragma once

#include "fedcm/linalg.hpp"

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedcm {

using ClientId = std::size_t;

/// Observed feature set of a client. Indices are 0-based internally; the
/// 1-based view (`one_based`, `to_string`, `from_one_based`) is what appears
/// in configs, CSVs and docs.
class FeaturePattern {
 public:
  FeaturePattern() = default;
  FeaturePattern(std::size_t dim, std::vector<Index> observed);

  static FeaturePattern full(std::size_t dim);
  static FeaturePattern none(std::size_t dim);
  static FeaturePattern from_one_based(std::size_t dim, const std::vector<std::size_t>& observed);
  static FeaturePattern from_mask(const std::vector<bool>& mask);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return observed_.size(); }
  bool empty() const { return observed_.empty(); }
  bool is_full() const { return observed_.size() == dim_; }
  bool contains(Index j) const;

  const std::vector<Index>& observed() const { return observed_; }
  std::vector<Index> missing() const;
  std::vector<bool> mask() const;
  Vector mask_vector() const;

  std::vector<std::size_t> one_based() const;
  std::string to_string() const;

  /// 52-bit FNV-1a digest of the bitmask; exactly representable as a double.
  std::uint64_t digest() const;

  auto operator<=>(const FeaturePattern&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<Index> observed_;
};

struct ClientSpec {
  ClientId id = 0;
  FeaturePattern pattern;
  double rho = 0.0;
};

/// Checks ids are 0..K-1 in order, rho in (0,1], sum(rho) = 1 within 1e-12 and
/// all patterns share one ambient dimension. Throws std::invalid_argument.
void validate_federation(std::span<const ClientSpec> clients);

std::vector<ClientSpec> make_clients(const std::vector<FeaturePattern>& patterns,
                                     const std::vector<double>& rho);
std::vector<double> uniform_weights(std::size_t k);

struct MaskedSample {
  ClientId client_id = 0;
  Vector x_obs;
  double y = 0.0;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<ClientSpec> clients, std::vector<MaskedSample> samples);

  const std::vector<ClientSpec>& clients() const { return clients_; }
  const std::vector<MaskedSample>& samples() const { return samples_; }
  std::size_t n() const { return samples_.size(); }
  std::size_t dim() const;
  std::size_t num_clients() const { return clients_.size(); }
  const FeaturePattern& pattern_of(const MaskedSample& s) const { return clients_[s.client_id].pattern; }

  /// Row indices grouped by client id, each list in dataset order.
  std::vector<std::vector<std::size_t>> rows_by_client() const;
  std::vector<std::size_t> client_counts() const;
  std::vector<MaskedSample> shard(ClientId k) const;

  Dataset permuted(std::span<const std::size_t> order) const;

 private:
  std::vector<ClientSpec> clients_;
  std::vector<MaskedSample> samples_;
};

enum class Provenance { ZeroImputed, Debiased, ComponentWise, ImputedData, Population };
const char* to_string(Provenance p);

using CoverageMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Second-moment estimate (Sigma_hat, gamma_hat). Sigma_hat is symmetrised on
/// construction. `coverage(l, j)` is false where the entry could not be
/// estimated and was zero-filled.
class MomentPair {
 public:
  MomentPair() = default;
  MomentPair(Matrix sigma, Vector gamma, Provenance provenance, std::size_t n = 0);
  MomentPair(Matrix sigma, Vector gamma, Provenance provenance, CoverageMask coverage, std::size_t n);

  const Matrix& sigma() const { return sigma_; }
  const Vector& gamma() const { return gamma_; }
  Provenance provenance() const { return provenance_; }
  const CoverageMask& coverage() const { return coverage_; }
  std::size_t n() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(gamma_.size()); }
  bool fully_covered() const { return coverage_.all(); }

 private:
  Matrix sigma_;
  Vector gamma_;
  Provenance provenance_ = Provenance::Population;
  CoverageMask coverage_;
  std::size_t n_ = 0;
};

/// Element of the client-wise linear class: one coefficient vector per client
/// over that client's observed coordinates, optionally clipped to [-M, M].
struct ClientwisePredictor {
  std::map<ClientId, Vector> thetas;
  std::optional<double> trunc_M;

  bool has(ClientId k) const { return thetas.count(k) != 0; }
  const Vector& theta(ClientId k) const;
  double predict(ClientId k, const Vector& x_obs) const;
  /// Throws unless every client has a coefficient vector of length |obs(k)|.
  void check_against(std::span<const ClientSpec> clients) const;
};

enum class Direction { Up, Down };

struct CommEntry {
  std::size_t round = 0;
  Direction direction = Direction::Up;
  std::size_t floats = 0;
  std::size_t bits = 0;  // non-float metadata, e.g. pattern bitmasks
  std::string description;
};

class CommLog {
 public:
  void record(std::size_t round, Direction dir, std::size_t floats, std::string description,
              std::size_t bits = 0);
  void append(const CommLog& other);

  const std::vector<CommEntry>& entries() const { return entries_; }
  std::size_t total_up() const;
  std::size_t total_down() const;
  std::size_t total() const { return total_up() + total_down(); }
  std::size_t total_bits() const;

  /// CSV with header `round,direction,floats,description`.
  void write_csv(std::ostream& os) const;

 private:
  std::vector<CommEntry> entries_;
};

Vector crop_vector(const Vector& v, const FeaturePattern& pattern);
Matrix crop_matrix(const Matrix& a, const FeaturePattern& rows, const FeaturePattern& cols);
Matrix crop_matrix(const Matrix& a, const std::vector<Index>& rows, const std::vector<Index>& cols);
/// Inverse of crop_vector: scatter x_obs into a zero d-vector.
Vector embed(const Vector& x_obs, const FeaturePattern& pattern);

}  // namespace fedcm
