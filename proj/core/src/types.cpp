#include "fedcm/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fedcm {

// ---------------------------------------------------------------- patterns

FeaturePattern::FeaturePattern(std::size_t dim, std::vector<Index> observed)
    : dim_(dim), observed_(std::move(observed)) {
  std::sort(observed_.begin(), observed_.end());
  if (std::adjacent_find(observed_.begin(), observed_.end()) != observed_.end())
    throw std::invalid_argument("FeaturePattern: duplicate feature index");
  for (Index j : observed_)
    if (j < 0 || static_cast<std::size_t>(j) >= dim_)
      throw std::invalid_argument("FeaturePattern: feature index out of range");
}

FeaturePattern FeaturePattern::full(std::size_t dim) {
  std::vector<Index> all(dim);
  std::iota(all.begin(), all.end(), Index{0});
  return {dim, std::move(all)};
}

FeaturePattern FeaturePattern::none(std::size_t dim) { return {dim, {}}; }

FeaturePattern FeaturePattern::from_one_based(std::size_t dim, const std::vector<std::size_t>& observed) {
  std::vector<Index> zero_based;
  zero_based.reserve(observed.size());
  for (std::size_t j : observed) {
    if (j == 0 || j > dim) throw std::invalid_argument("FeaturePattern: 1-based index out of range");
    zero_based.push_back(static_cast<Index>(j - 1));
  }
  return {dim, std::move(zero_based)};
}

FeaturePattern FeaturePattern::from_mask(const std::vector<bool>& mask) {
  std::vector<Index> obs;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) obs.push_back(static_cast<Index>(j));
  return {mask.size(), std::move(obs)};
}

bool FeaturePattern::contains(Index j) const {
  return std::binary_search(observed_.begin(), observed_.end(), j);
}

std::vector<Index> FeaturePattern::missing() const {
  std::vector<Index> out;
  out.reserve(dim_ - observed_.size());
  auto it = observed_.begin();
  for (Index j = 0; j < static_cast<Index>(dim_); ++j) {
    if (it != observed_.end() && *it == j) {
      ++it;
    } else {
      out.push_back(j);
    }
  }
  return out;
}

std::vector<bool> FeaturePattern::mask() const {
  std::vector<bool> m(dim_, false);
  for (Index j : observed_) m[static_cast<std::size_t>(j)] = true;
  return m;
}

Vector FeaturePattern::mask_vector() const {
  Vector m = Vector::Zero(static_cast<Index>(dim_));
  for (Index j : observed_) m(j) = 1.0;
  return m;
}

std::vector<std::size_t> FeaturePattern::one_based() const {
  std::vector<std::size_t> out;
  out.reserve(observed_.size());
  for (Index j : observed_) out.push_back(static_cast<std::size_t>(j) + 1);
  return out;
}

std::string FeaturePattern::to_string() const {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < observed_.size(); ++i) {
    if (i) os << ',';
    os << observed_[i] + 1;
  }
  os << '}';
  return os.str();
}

std::uint64_t FeaturePattern::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(dim_);
  for (Index j : observed_) mix(static_cast<std::uint64_t>(j));
  return h & ((std::uint64_t{1} << 52) - 1);
}

// ---------------------------------------------------------------- federation

void validate_federation(std::span<const ClientSpec> clients) {
  if (clients.empty()) throw std::invalid_argument("federation has no clients");
  const std::size_t d = clients.front().pattern.dim();
  double total = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& c = clients[k];
    if (c.id != k) throw std::invalid_argument("client ids must be 0..K-1 in order");
    if (!(c.rho > 0.0 && c.rho <= 1.0)) throw std::invalid_argument("client rho must lie in (0, 1]");
    if (c.pattern.dim() != d) throw std::invalid_argument("client patterns disagree on dimension");
    total += c.rho;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("client rho must sum to 1");
}

std::vector<ClientSpec> make_clients(const std::vector<FeaturePattern>& patterns,
                                     const std::vector<double>& rho) {
  if (patterns.size() != rho.size()) throw std::invalid_argument("make_clients: size mismatch");
  std::vector<ClientSpec> out;
  out.reserve(patterns.size());
  for (std::size_t k = 0; k < patterns.size(); ++k) out.push_back({k, patterns[k], rho[k]});
  validate_federation(out);
  return out;
}

std::vector<double> uniform_weights(std::size_t k) {
  if (k == 0) throw std::invalid_argument("uniform_weights: k must be positive");
  return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

// ---------------------------------------------------------------- dataset

Dataset::Dataset(std::vector<ClientSpec> clients, std::vector<MaskedSample> samples)
    : clients_(std::move(clients)), samples_(std::move(samples)) {
  validate_federation(clients_);
  for (const auto& s : samples_) {
    if (s.client_id >= clients_.size()) throw std::invalid_argument("sample references unknown client");
    if (static_cast<std::size_t>(s.x_obs.size()) != clients_[s.client_id].pattern.size())
      throw std::invalid_argument("sample length does not match its client's pattern");
  }
}

std::size_t Dataset::dim() const { return clients_.empty() ? 0 : clients_.front().pattern.dim(); }

std::vector<std::vector<std::size_t>> Dataset::rows_by_client() const {
  std::vector<std::vector<std::size_t>> rows(clients_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) rows[samples_[i].client_id].push_back(i);
  return rows;
}

std::vector<std::size_t> Dataset::client_counts() const {
  std::vector<std::size_t> counts(clients_.size(), 0);
  for (const auto& s : samples_) ++counts[s.client_id];
  return counts;
}

std::vector<MaskedSample> Dataset::shard(ClientId k) const {
  std::vector<MaskedSample> out;
  for (const auto& s : samples_)
    if (s.client_id == k) out.push_back(s);
  return out;
}

Dataset Dataset::permuted(std::span<const std::size_t> order) const {
  if (order.size() != samples_.size()) throw std::invalid_argument("permuted: order has wrong length");
  std::vector<MaskedSample> out;
  out.reserve(samples_.size());
  for (std::size_t i : order) out.push_back(samples_.at(i));
  return {clients_, std::move(out)};
}

// ---------------------------------------------------------------- moments

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::ZeroImputed: return "zero-imputed";
    case Provenance::Debiased: return "debiased";
    case Provenance::ComponentWise: return "component-wise";
    case Provenance::ImputedData: return "imputed-data";
    case Provenance::Population: return "population";
  }
  return "unknown";
}

MomentPair::MomentPair(Matrix sigma, Vector gamma, Provenance provenance, std::size_t n)
    : gamma_(std::move(gamma)), provenance_(provenance), n_(n) {
  const Index d = gamma_.size();
  if (sigma.rows() != d || sigma.cols() != d)
    throw std::invalid_argument("MomentPair: sigma and gamma dimensions disagree");
  coverage_ = CoverageMask::Constant(d, d, true);
  sigma_ = linalg::symmetrize(sigma);
}

MomentPair::MomentPair(Matrix sigma, Vector gamma, Provenance provenance, CoverageMask coverage,
                       std::size_t n)
    : gamma_(std::move(gamma)), provenance_(provenance), coverage_(std::move(coverage)), n_(n) {
  const Index d = gamma_.size();
  if (sigma.rows() != d || sigma.cols() != d)
    throw std::invalid_argument("MomentPair: sigma and gamma dimensions disagree");
  if (coverage_.rows() != d || coverage_.cols() != d)
    throw std::invalid_argument("MomentPair: coverage mask has wrong shape");
  sigma_ = linalg::symmetrize(sigma);
}

// ---------------------------------------------------------------- predictor

const Vector& ClientwisePredictor::theta(ClientId k) const {
  auto it = thetas.find(k);
  if (it == thetas.end()) throw std::out_of_range("predictor has no coefficients for client " + std::to_string(k));
  return it->second;
}

double ClientwisePredictor::predict(ClientId k, const Vector& x_obs) const {
  const Vector& th = theta(k);
  if (th.size() != x_obs.size()) throw std::invalid_argument("predict: coefficient length mismatch");
  const double raw = th.dot(x_obs);
  if (trunc_M) return std::clamp(raw, -*trunc_M, *trunc_M);
  return raw;
}

void ClientwisePredictor::check_against(std::span<const ClientSpec> clients) const {
  for (const auto& c : clients) {
    if (static_cast<std::size_t>(theta(c.id).size()) != c.pattern.size())
      throw std::invalid_argument("predictor coefficient length differs from |obs(k)|");
  }
}

// ---------------------------------------------------------------- comm log

void CommLog::record(std::size_t round, Direction dir, std::size_t floats, std::string description,
                     std::size_t bits) {
  entries_.push_back({round, dir, floats, bits, std::move(description)});
}

void CommLog::append(const CommLog& other) {
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

std::size_t CommLog::total_up() const {
  std::size_t t = 0;
  for (const auto& e : entries_)
    if (e.direction == Direction::Up) t += e.floats;
  return t;
}

std::size_t CommLog::total_down() const {
  std::size_t t = 0;
  for (const auto& e : entries_)
    if (e.direction == Direction::Down) t += e.floats;
  return t;
}

std::size_t CommLog::total_bits() const {
  std::size_t t = 0;
  for (const auto& e : entries_) t += e.bits;
  return t;
}

void CommLog::write_csv(std::ostream& os) const {
  os << "round,direction,floats,description\n";
  for (const auto& e : entries_) {
    os << e.round << ',' << (e.direction == Direction::Up ? "up" : "down") << ',' << e.floats << ",\"";
    for (char c : e.description) {
      if (c == '"') os << '"';
      os << c;
    }
    os << "\"\n";
  }
}

// ---------------------------------------------------------------- cropping

Vector crop_vector(const Vector& v, const FeaturePattern& pattern) {
  if (static_cast<std::size_t>(v.size()) != pattern.dim())
    throw std::invalid_argument("crop_vector: vector length differs from pattern dimension");
  return v(pattern.observed());
}

Matrix crop_matrix(const Matrix& a, const FeaturePattern& rows, const FeaturePattern& cols) {
  if (static_cast<std::size_t>(a.rows()) != rows.dim() || static_cast<std::size_t>(a.cols()) != cols.dim())
    throw std::invalid_argument("crop_matrix: matrix shape differs from pattern dimension");
  return a(rows.observed(), cols.observed());
}

Matrix crop_matrix(const Matrix& a, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  return a(rows, cols);
}

Vector embed(const Vector& x_obs, const FeaturePattern& pattern) {
  if (static_cast<std::size_t>(x_obs.size()) != pattern.size())
    throw std::invalid_argument("embed: observed vector length differs from pattern size");
  Vector out = Vector::Zero(static_cast<Index>(pattern.dim()));
  out(pattern.observed()) = x_obs;
  return out;
}

}  // namespace fedcm
