#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include "fedcm/moments.hpp"
#include "fedcm/popgen.hpp"

#include <cmath>
#include <numeric>

using namespace fedcm;

namespace {

Vector v1(double a) { return (Vector(1) << a).finished(); }
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Dataset random_dataset(std::uint64_t seed, std::size_t k, std::size_t d, std::size_t n) {
  Rng rng(seed);
  const auto pop = fixture::random_population(d, rng);
  return sample_dataset(pop, fixture::random_federation(k, d, rng), n, rng);
}

}  // namespace

TEST_CASE("local_zero_imputed_moments examples") {
  const auto p1 = FeaturePattern::from_one_based(2, {1});
  const std::vector<MaskedSample> one{{0, v1(2.0), 3.0}};
  const auto m = local_zero_imputed_moments(one, p1);
  CHECK(m.count == 1);
  CHECK(m.sigma() == (Matrix(2, 2) << 4, 0, 0, 0).finished());
  CHECK(m.gamma() == v2(6, 0));

  const auto empty = local_zero_imputed_moments({}, p1);
  CHECK(empty.count == 0);
  CHECK(empty.sigma() == Matrix::Zero(2, 2));
  CHECK(empty.gamma() == Vector::Zero(2));

  const std::vector<MaskedSample> wrong{{0, v2(1, 2), 0.0}};
  CHECK_THROWS_AS(local_zero_imputed_moments(wrong, p1), std::invalid_argument);
}

TEST_CASE("local moments on a full-pattern population draw") {
  const PopulationSpec pop(identity_covariance(2), v2(1.0, -1.0));
  Rng rng(4);
  const auto clients = make_clients({FeaturePattern::full(2)}, {1.0});
  const Dataset data = sample_dataset(pop, clients, 100000, rng);
  const auto m = local_zero_imputed_moments(data.samples(), clients[0].pattern);
  CHECK((m.sigma() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 0.02);
}

TEST_CASE("aggregate_zero_imputed") {
  const Dataset data = random_dataset(3, 3, 4, 300);
  const auto locals = local_moments_by_client(data);
  REQUIRE(locals.size() == 3);

  const MomentPair single = aggregate_zero_imputed(std::span(locals).subspan(0, 1));
  CHECK(single.sigma().isApprox(locals[0].sigma(), 1e-14));
  CHECK(single.gamma().isApprox(locals[0].gamma(), 1e-14));

  LocalMoments a = locals[0], b = locals[1];
  b.count = a.count;
  b.sum_xx = b.sigma() * static_cast<double>(a.count);
  b.sum_xy = b.gamma() * static_cast<double>(a.count);
  const std::vector<LocalMoments> pair{a, b};
  const MomentPair avg = aggregate_zero_imputed(pair);
  CHECK(avg.sigma().isApprox((a.sigma() + b.sigma()) / 2.0, 1e-12));

  const MomentPair agg = aggregate_zero_imputed(locals);
  const auto [s, g] = oracle::zero_imputed_by_loops(data);
  CHECK((agg.sigma() - s).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + s.cwiseAbs().maxCoeff()));
  CHECK((agg.gamma() - g).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g.cwiseAbs().maxCoeff()));
  CHECK(agg.provenance() == Provenance::ZeroImputed);
  CHECK(agg.n() == data.n());
  CHECK(linalg::min_eigenvalue(agg.sigma()) >= -1e-12);

  std::vector<LocalMoments> none{local_zero_imputed_moments({}, data.clients()[0].pattern)};
  CHECK_THROWS_AS(aggregate_zero_imputed(none), std::invalid_argument);
}

TEST_CASE("zero-imputed moments are unbiased for Pi * Sigma (short run)") {
  const auto clients = fixture::two_client_illustration();
  const PopulationSpec pop(toeplitz_covariance(4, 0.5), Vector::Ones(4));
  const Matrix target = co_observation_matrix(clients).cwiseProduct(pop.sigma());
  const int reps = 1500;
  Matrix mean = Matrix::Zero(4, 4), sq = Matrix::Zero(4, 4);
  Rng rng(17);
  for (int r = 0; r < reps; ++r) {
    const auto s = aggregate_zero_imputed(local_moments_by_client(sample_dataset(pop, clients, 50, rng))).sigma();
    mean += s;
    sq += s.cwiseProduct(s);
  }
  mean /= reps;
  const Matrix var = sq / reps - mean.cwiseProduct(mean);
  for (Index l = 0; l < 4; ++l)
    for (Index j = 0; j < 4; ++j) {
      const double se = std::sqrt(std::max(var(l, j), 0.0) / reps);
      CHECK(std::abs(mean(l, j) - target(l, j)) <= 4.0 * se + 1e-12);
    }
}

TEST_CASE("debias_moments") {
  Matrix s = Matrix::Identity(3, 3);
  s(0, 2) = s(2, 0) = 0.2;
  const MomentPair zero(s, Vector::Ones(3), Provenance::ZeroImputed, 10);
  const auto same = debias_moments(zero, Matrix::Ones(3, 3));
  CHECK(same.sigma() == zero.sigma());
  CHECK(same.gamma() == zero.gamma());
  CHECK(same.provenance() == Provenance::Debiased);

  Matrix pi = Matrix::Ones(3, 3);
  pi(0, 2) = pi(2, 0) = 0.5;
  pi(0, 1) = pi(1, 0) = 0.0;
  const auto db = debias_moments(zero, pi);
  CHECK(db.sigma()(0, 2) == doctest::Approx(0.4));
  CHECK(db.sigma()(0, 1) == 0.0);
  CHECK_FALSE(db.coverage()(0, 1));
  CHECK(db.coverage()(0, 2));
  CHECK_FALSE(db.fully_covered());
  CHECK_THROWS_AS(debias_moments(zero, Matrix::Ones(2, 2)), std::invalid_argument);
}

TEST_CASE("empirical_coobservation") {
  const auto full = make_clients({FeaturePattern::full(3)}, {1.0});
  Rng rng(2);
  const PopulationSpec pop(identity_covariance(3), Vector::Ones(3));
  CHECK(empirical_coobservation(sample_dataset(pop, full, 20, rng)).pi_hat == Matrix::Ones(3, 3));

  // illustration patterns with exactly 500 samples each
  const auto clients = fixture::two_client_illustration();
  std::vector<MaskedSample> rows;
  for (int i = 0; i < 500; ++i) {
    rows.push_back({0, v2(1.0, 2.0), 0.0});
    rows.push_back({1, Vector::Ones(3), 0.0});
  }
  const auto e = empirical_coobservation(Dataset(clients, rows));
  CHECK(e.pi_hat(0, 2) == 0.5);
  CHECK(e.pi_hat(2, 2) == 1.0);
  CHECK(e.pi_hat(0, 1) == 0.0);
  CHECK(e.counts.pair_counts(1, 3) == 500);
  CHECK(e.counts.n == 1000);

  const auto only2 = make_clients({FeaturePattern::from_one_based(2, {2})}, {1.0});
  const std::vector<MaskedSample> one{{0, v1(5.0), 1.0}};
  CHECK(empirical_coobservation(Dataset(only2, one)).pi_hat == (Matrix(2, 2) << 0, 0, 0, 1).finished());
  CHECK_THROWS_AS(empirical_coobservation(Dataset(only2, {})), std::invalid_argument);
}

TEST_CASE("co-observation counts invariants and server-side counts") {
  const Dataset data = random_dataset(5, 4, 5, 400);
  const auto e = empirical_coobservation(data);
  const auto& n = e.counts.pair_counts;
  CHECK(n == n.transpose());
  CHECK(n.minCoeff() >= 0);
  CHECK(n.maxCoeff() <= static_cast<std::int64_t>(data.n()));
  for (Index l = 0; l < 5; ++l) {
    std::int64_t obs = 0;
    for (const auto& s : data.samples()) obs += data.pattern_of(s).contains(l);
    CHECK(n(l, l) == obs);
  }
  const auto server = coobservation_counts(local_moments_by_client(data));
  CHECK(server.pair_counts == n);
  CHECK(server.n == data.n());
}

TEST_CASE("component-wise moments: rescaling and direct summation agree with loops") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset data = random_dataset(100 + seed, 3, 5, 250);
    const auto locals = local_moments_by_client(data);
    const auto rescaled = cw_moments(aggregate_zero_imputed(locals), coobservation_counts(locals));
    const auto direct = cw_moments_direct(data);
    const auto [s, g] = oracle::componentwise_by_loops(data);
    const double scale = 1.0 + s.cwiseAbs().maxCoeff();
    CHECK((direct.sigma() - s).cwiseAbs().maxCoeff() <= 1e-12 * scale);
    CHECK((rescaled.sigma() - s).cwiseAbs().maxCoeff() <= 1e-12 * scale);
    CHECK((direct.gamma() - g).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g.cwiseAbs().maxCoeff()));
    CHECK((rescaled.gamma() - g).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g.cwiseAbs().maxCoeff()));
    CHECK((direct.coverage() == rescaled.coverage()).all());
    CHECK(direct.provenance() == Provenance::ComponentWise);
  }
}

TEST_CASE("component-wise moments on complete data equal plain moments") {
  Rng rng(6);
  const auto pop = fixture::random_population(3, rng);
  const Dataset data = sample_dataset(pop, make_clients({FeaturePattern::full(3)}, {1.0}), 200, rng);
  const auto cw = cw_moments_direct(data);
  const auto [s, g] = oracle::zero_imputed_by_loops(data);
  CHECK(cw.sigma().isApprox(s, 1e-12));
  CHECK(cw.gamma().isApprox(g, 1e-12));
  CHECK(cw.fully_covered());
}

TEST_CASE("component-wise moments zero-fill and flag uncovered pairs") {
  const auto clients = fixture::two_client_illustration();
  Rng rng(1);
  const Dataset data = sample_dataset(PopulationSpec(toeplitz_covariance(4, 0.3), Vector::Ones(4)), clients, 100, rng);
  const auto cw = cw_moments_direct(data);
  CHECK(cw.sigma()(0, 1) == 0.0);
  CHECK_FALSE(cw.coverage()(0, 1));
  CHECK_FALSE(cw.coverage()(0, 3));
  CHECK(cw.coverage()(0, 2));
}

TEST_CASE("component-wise moments need not be PSD") {
  const auto clients = make_clients(fixture::patterns_1b(3, {{1, 2}, {2, 3}, {1, 3}}), {0.4, 0.3, 0.3});
  const std::vector<MaskedSample> rows{{0, v2(1, 1), 0.0}, {1, v2(1, 1), 0.0}, {2, v2(1, -1), 0.0}};
  const auto cw = cw_moments_direct(Dataset(clients, rows));
  CHECK(cw.fully_covered());
  CHECK(linalg::min_eigenvalue(cw.sigma()) < -0.5);
}

TEST_CASE("component-wise moments are invariant to sample and client permutations") {
  const Dataset data = random_dataset(42, 4, 4, 300);
  const auto base = cw_moments_direct(data);

  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(3);
  std::shuffle(order.begin(), order.end(), rng);
  const auto shuffled = cw_moments_direct(data.permuted(order));
  CHECK((shuffled.sigma() - base.sigma()).cwiseAbs().maxCoeff() <= 1e-12);

  // relabel clients in reverse order
  const std::size_t k = data.num_clients();
  std::vector<ClientSpec> clients;
  for (std::size_t c = 0; c < k; ++c) {
    ClientSpec spec = data.clients()[k - 1 - c];
    spec.id = c;
    clients.push_back(spec);
  }
  std::vector<MaskedSample> rows = data.samples();
  for (auto& s : rows) s.client_id = k - 1 - s.client_id;
  const Dataset relabelled(clients, rows);
  const auto locals = local_moments_by_client(relabelled);
  const auto relab = cw_moments(aggregate_zero_imputed(locals), coobservation_counts(locals));
  CHECK((relab.sigma() - base.sigma()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((relab.gamma() - base.gamma()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("debiased and component-wise estimates converge to each other") {
  const auto clients = make_clients(fixture::patterns_1b(4, {{1, 2, 3}, {2, 3, 4}, {1, 4}, {1, 3}}), {0.3, 0.3, 0.2, 0.2});
  const PopulationSpec pop(toeplitz_covariance(4, 0.5), Vector::Ones(4));
  const Matrix pi = co_observation_matrix(clients);
  double gap_small = 0.0, gap_large = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (std::size_t n : {500u, 50000u}) {
      Rng rng(derive_seed(8, {seed, n}));
      const Dataset data = sample_dataset(pop, clients, n, rng);
      const auto zero = aggregate_zero_imputed(local_moments_by_client(data));
      const double gap = (debias_moments(zero, pi).sigma() - cw_moments_direct(data).sigma()).cwiseAbs().maxCoeff();
      (n == 500 ? gap_small : gap_large) += gap;
    }
  }
  CHECK(gap_large < 0.25 * gap_small);
}

TEST_CASE("moment payload layout v1") {
  const Dataset data = random_dataset(9, 2, 4, 50);
  const auto locals = local_moments_by_client(data);
  for (const auto& l : locals) {
    const auto payload = encode_moment_payload(l);
    CHECK(payload.size() == moment_payload_floats(4));
    CHECK(payload.size() == 16);
    CHECK(payload[0] == static_cast<double>(l.count));
    const auto back = decode_moment_payload(payload, l.pattern, l.client);
    CHECK(back.count == l.count);
    CHECK(back.sum_xx == l.sum_xx);
    CHECK(back.sum_xy == l.sum_xy);
    CHECK(back.pattern == l.pattern);
    CHECK_THROWS_AS(decode_moment_payload(payload, FeaturePattern::none(4), l.client), std::invalid_argument);
    CHECK_THROWS_AS(decode_moment_payload(std::span(payload).subspan(1), l.pattern, l.client), std::invalid_argument);
  }
}
