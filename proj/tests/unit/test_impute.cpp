#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include "fedcm/impute.hpp"
#include "fedcm/moments.hpp"
#include "fedcm/popgen.hpp"

#include <cmath>
#include <numeric>

using namespace fedcm;

namespace {

Dataset draw(const PopulationSpec& pop, const std::vector<ClientSpec>& clients, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_dataset(pop, clients, n, rng);
}

void check_observed_preserved(const ImputedDataset& out, const Dataset& data) {
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& s = data.samples()[i];
    const auto& obs = data.pattern_of(s).observed();
    for (std::size_t a = 0; a < obs.size(); ++a)
      CHECK(out.rows(static_cast<Index>(i), obs[a]) == s.x_obs(static_cast<Index>(a)));
    CHECK(out.y(static_cast<Index>(i)) == s.y);
  }
}

}  // namespace

TEST_CASE("zero imputer") {
  const auto clients = make_clients(fixture::patterns_1b(3, {{1}, {1, 2, 3}}), {0.5, 0.5});
  const auto map = fit_zero_imputer(clients);
  CHECK(map.kind() == ImputerKind::Zero);
  CHECK(map[clients[0].pattern] == Matrix::Zero(2, 1));
  CHECK(map[clients[1].pattern].rows() == 0);
  CHECK(map[clients[1].pattern].cols() == 3);
  const Vector x = map.complete((Vector(1) << 2).finished(), clients[0].pattern);
  CHECK(x == (Vector(3) << 2, 0, 0).finished());
  CHECK(std::string(to_string(ImputerKind::Zero)) == "zero");
}

TEST_CASE("optimal imputer examples") {
  const auto p1 = fixture::patterns_1b(2, {{1}, {2}});
  const auto clients = make_clients(p1, {0.5, 0.5});
  const auto id = fit_optimal_imputer(Matrix::Identity(2, 2), clients, CovarianceSource::Population);
  for (const auto& c : clients) CHECK(id[c.pattern] == Matrix::Zero(1, 1));

  const auto m = fit_optimal_imputer(toeplitz_covariance(2, 0.5), clients, CovarianceSource::Population);
  CHECK(m[clients[0].pattern](0, 0) == doctest::Approx(0.5));
  CHECK(m.complete((Vector(1) << 2).finished(), clients[0].pattern)(1) == doctest::Approx(1.0));
  CHECK(m.kind() == ImputerKind::OptimalLinear);
  CHECK(m.source() == CovarianceSource::Population);

  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.3;
  CHECK_THROWS_AS(fit_optimal_imputer(asym, clients, CovarianceSource::Population), std::invalid_argument);
  CHECK_THROWS_AS(fit_optimal_imputer(Matrix::Identity(3, 3), clients, CovarianceSource::Population),
                  std::invalid_argument);
}

TEST_CASE("optimal imputer flags empty observed sets") {
  const auto clients = make_clients({FeaturePattern::none(3), FeaturePattern::full(3)}, {0.5, 0.5});
  const auto m = fit_optimal_imputer(toeplitz_covariance(3, 0.5), clients, CovarianceSource::Population);
  REQUIRE(m.empty_observed().size() == 1);
  CHECK(m.empty_observed()[0] == FeaturePattern::none(3));
  CHECK(m.complete(Vector(0), FeaturePattern::none(3)) == Vector::Zero(3));
}

TEST_CASE("optimal imputer equals the least-squares map on 3x3 instances") {
  Rng rng(14);
  for (int rep = 0; rep < 30; ++rep) {
    const Matrix sigma = fixture::random_spd(3, rng);
    const auto p = fixture::random_pattern(3, rng, false);
    const auto m = fit_optimal_imputer(sigma, make_clients({p}, {1.0}), CovarianceSource::Population);
    const auto mis = p.missing();
    const Matrix smo = oracle::submatrix(sigma, mis, p.observed());
    const Matrix soo = oracle::submatrix(sigma, p.observed(), p.observed());
    // normal equations of min_S E||X_mis - S X_obs||^2: S Sigma_oo = Sigma_mo
    const Matrix s_ls = Eigen::FullPivLU<Matrix>(soo).solve(smo.transpose()).transpose();
    CHECK((m[p] - s_ls).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("optimal imputation residual is centred and uncorrelated with observed features") {
  const Matrix sigma = toeplitz_covariance(3, 0.6);
  const PopulationSpec pop(sigma, Vector::Ones(3));
  const auto p = FeaturePattern::from_one_based(3, {1, 3});
  const auto clients = make_clients({p}, {1.0});
  const auto m = fit_optimal_imputer(sigma, clients, CovarianceSource::Population);
  Rng rng(5);
  Vector z, x;
  double y = 0.0;
  const int n = 50000;
  double mean = 0.0, sq = 0.0, cross = 0.0;
  for (int i = 0; i < n; ++i) {
    draw_complete(pop, rng, z, x, y);
    const double r = x(1) - (m[p] * crop_vector(x, p))(0);
    mean += r;
    sq += r * r;
    cross += r * x(0);
  }
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(n));
  CHECK(std::abs(cross / n) <= 3.0 * sd * 1.0 / std::sqrt(n) * 1.5);
}

TEST_CASE("apply_imputer") {
  Rng g(2);
  const auto pop = fixture::random_population(4, g);
  const auto clients = fixture::random_federation(3, 4, g);
  const Dataset data = draw(pop, clients, 200, 1);

  const auto zero = apply_imputer(fit_zero_imputer(clients), data);
  check_observed_preserved(zero, data);
  for (std::size_t i = 0; i < data.n(); ++i)
    for (Index j : data.pattern_of(data.samples()[i]).missing()) CHECK(zero.rows(static_cast<Index>(i), j) == 0.0);

  const auto opt = apply_imputer(fit_optimal_imputer(pop.sigma(), clients, CovarianceSource::Population), data);
  check_observed_preserved(opt, data);

  const auto full = make_clients({FeaturePattern::full(4)}, {1.0});
  const Dataset complete = draw(pop, full, 50, 3);
  const auto same = apply_imputer(fit_zero_imputer(full), complete);
  for (std::size_t i = 0; i < complete.n(); ++i)
    CHECK(same.rows.row(static_cast<Index>(i)).transpose() == complete.samples()[i].x_obs);

  // idempotence: re-imputing completed rows treated as fully observed changes nothing
  std::vector<MaskedSample> rows;
  for (Index i = 0; i < opt.rows.rows(); ++i) rows.push_back({0, opt.rows.row(i).transpose(), opt.y(i)});
  const Dataset as_full(full, rows);
  CHECK(apply_imputer(fit_zero_imputer(full), as_full).rows == opt.rows);

  const auto other = make_clients({FeaturePattern::from_one_based(4, {1})}, {1.0});
  CHECK_THROWS_AS(apply_imputer(fit_zero_imputer(other), data), std::invalid_argument);
  CHECK_THROWS_AS(fit_zero_imputer(other)[FeaturePattern::full(4)], std::out_of_range);
}

TEST_CASE("completion operator agrees with complete()") {
  Rng rng(4);
  const Matrix sigma = fixture::random_spd(5, rng);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = fixture::random_pattern(5, rng);
    const auto m = fit_optimal_imputer(sigma, make_clients({p}, {1.0}), CovarianceSource::Population);
    const Vector x = fixture::normal_vector(5, rng);
    CHECK((m.completion_operator(p) * x - m.complete(crop_vector(x, p), p)).norm() <= 1e-12);
  }
}

TEST_CASE("ImputationMap shape checks") {
  ImputationMap m(ImputerKind::OptimalLinear, CovarianceSource::ComponentWise);
  const auto p = FeaturePattern::from_one_based(3, {2});
  CHECK_THROWS_AS(m.set(p, Matrix::Zero(1, 2)), std::invalid_argument);
  CHECK_NOTHROW(m.set(p, Matrix::Zero(2, 1)));
  CHECK(m.covers(p));
}

TEST_CASE("imputers are permutation equivariant") {
  Rng g(21);
  const auto pop = fixture::random_population(5, g);
  const auto clients = fixture::random_federation(4, 5, g);
  const Dataset data = draw(pop, clients, 300, 7);
  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), g);
  const Dataset perm = data.permuted(order);

  const auto cw = cw_moments_direct(data).sigma();
  for (const auto& map : {fit_zero_imputer(clients), fit_optimal_imputer(pop.sigma(), clients, CovarianceSource::Population),
                          fit_optimal_imputer(cw, clients, CovarianceSource::ComponentWise)}) {
    const auto a = apply_imputer(map, data);
    const auto b = apply_imputer(map, perm);
    for (std::size_t i = 0; i < data.n(); ++i)
      CHECK(b.rows.row(static_cast<Index>(i)) == a.rows.row(static_cast<Index>(order[i])));
  }

  // ICE depends on the data through sums, equal up to rounding
  const auto ia = federated_ice(data, {3}, fit_zero_imputer(clients));
  const auto ib = federated_ice(perm, {3}, fit_zero_imputer(clients));
  double gap = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i)
    gap = std::max(gap, (ib.data.rows.row(static_cast<Index>(i)) - ia.data.rows.row(static_cast<Index>(order[i]))).cwiseAbs().maxCoeff());
  CHECK(gap <= 1e-10);
}

TEST_CASE("second_moment_sum") {
  Rng rng(3);
  Matrix rows(6, 3);
  for (Index i = 0; i < 6; ++i) rows.row(i) = fixture::normal_vector(3, rng).transpose();
  const std::vector<std::size_t> which{0, 2, 5};
  Matrix expect = Matrix::Zero(3, 3);
  for (auto i : which) expect += rows.row(static_cast<Index>(i)).transpose() * rows.row(static_cast<Index>(i));
  const Matrix got = second_moment_sum(rows, which);
  CHECK((got - expect).norm() <= 1e-12);
  CHECK(got == got.transpose());
}

TEST_CASE("federated ICE basics") {
  Rng g(6);
  const auto pop = fixture::random_population(4, g);
  const auto clients = fixture::random_federation(3, 4, g);
  const Dataset data = draw(pop, clients, 150, 9);
  const auto init = fit_zero_imputer(clients);

  const auto none = federated_ice(data, {0}, init);
  CHECK(none.rounds_run == 0);
  CHECK(none.log.total() == 0);
  CHECK(none.data.rows == apply_imputer(init, data).rows);

  const auto run = federated_ice(data, {4}, init);
  CHECK(run.rounds_run == 4);
  CHECK(run.sigma_trace.size() == 4);
  CHECK(run.rms_change.size() == 4);
  CHECK(run.data.imputer.kind() == ImputerKind::ICE);
  CHECK(run.data.imputer.round() == 4);
  const std::size_t tri = 10;
  CHECK(run.log.total_up() == 4 * 3 * tri);
  CHECK(run.log.total_down() == 4 * tri);
  check_observed_preserved(run.data, data);

  // the first round sees the zero-imputed second moment
  const auto [s0, g0] = oracle::zero_imputed_by_loops(data);
  CHECK((run.sigma_trace[0] - s0).cwiseAbs().maxCoeff() <= 1e-12);

  // each round's map is the optimal map of the previous Sigma_t
  const auto last = fit_optimal_imputer(run.sigma_trace.back(), clients, CovarianceSource::Empirical);
  for (const auto& c : clients) CHECK((run.data.imputer[c.pattern] - last[c.pattern]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("federated ICE on a single full client is the identity") {
  Rng g(1);
  const auto pop = fixture::random_population(3, g);
  const auto clients = make_clients({FeaturePattern::full(3)}, {1.0});
  const Dataset data = draw(pop, clients, 100, 2);
  const auto run = federated_ice(data, {3}, fit_zero_imputer(clients));
  CHECK(run.data.rows == apply_imputer(fit_zero_imputer(clients), data).rows);
  CHECK(run.sigma_trace[0] == run.sigma_trace[1]);
  CHECK(run.sigma_trace[1] == run.sigma_trace[2]);
  CHECK(run.rms_change[0] == 0.0);
}

TEST_CASE("federated ICE early stop") {
  Rng g(1);
  const auto pop = fixture::random_population(3, g);
  const auto clients = make_clients({FeaturePattern::full(3), FeaturePattern::from_one_based(3, {1})}, {0.5, 0.5});
  const Dataset data = draw(pop, clients, 400, 2);
  IceOptions opt{50};
  opt.early_stop_rms = 1e-8;
  const auto run = federated_ice(data, opt, fit_zero_imputer(clients));
  CHECK(run.early_stopped);
  CHECK(run.rounds_run < 50);
  CHECK(run.log.total_down() == run.rounds_run * 6);
}

TEST_CASE("federated ICE is near its fixed point from the optimal start") {
  // a full-data client complements the partial one, so the optimal map is a fixed point
  const PopulationSpec pop(toeplitz_covariance(3, 0.5), Vector::Ones(3));
  const auto clients = make_clients({FeaturePattern::full(3), FeaturePattern::from_one_based(3, {1})}, {0.5, 0.5});
  const Dataset data = draw(pop, clients, 100000, 4);
  const auto init = fit_optimal_imputer(pop.sigma(), clients, CovarianceSource::Population);
  const auto run = federated_ice(data, {1}, init);
  CHECK(run.rms_change[0] <= 0.05);
}
