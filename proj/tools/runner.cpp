#include "experiment.hpp"

#include "fedcm/fedsim.hpp"
#include "fedcm/impute.hpp"
#include "fedcm/moments.hpp"
#include "fedcm/plugin.hpp"
#include "fedcm/ridge.hpp"
#include "fedcm/risk.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace fedcm::experiment {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct WorkItem {
  std::size_t grid_index = 0;
  std::size_t replicate = 0;
  std::size_t n = 0;
  double tau = kNaN;
};

/// A fitted method: deployable on the training clients and, through
/// `coefficients_for`, on an unseen pattern.
struct MethodFit {
  ClientwisePredictor predictor;
  std::function<Vector(const FeaturePattern&)> coefficients_for;
  std::size_t up = 0;
  std::size_t down = 0;
};

void add_comm(MethodFit& f, const CommLog& log) {
  f.up += log.total_up();
  f.down += log.total_down();
}

class ItemRunner {
 public:
  ItemRunner(const ExperimentConfig& cfg, const PopulationSpec& pop, std::uint64_t seed, const WorkItem& item,
             bool timing)
      : cfg_(cfg), pop_(pop), seed_(seed), item_(item), timing_(timing) {}

  std::vector<ResultRow> run();

 private:
  ResultRow base_row(const std::string& method, double lambda) const;
  std::optional<double> truncation_level() const;
  McRisk evaluate(const ClientwisePredictor& pred, std::span<const ClientSpec> clients) const;

  const ProtocolRun& moments_run();
  const ProtocolRun& ice_run();
  MethodFit fit_plugin(const std::string& method);
  MethodFit fit_itr(const std::string& method, double lambda);
  MethodFit fit_local(const std::string& method, double lambda);
  double bound_for(const std::string& method, double lambda) const;

  const ExperimentConfig& cfg_;
  const PopulationSpec& pop_;
  std::uint64_t seed_;
  WorkItem item_;
  bool timing_;
  std::vector<ClientSpec> clients_;
  Dataset data_;
  std::optional<double> m_;
  std::optional<ProtocolRun> moments_;
  std::optional<ProtocolRun> ice_;
};

ResultRow ItemRunner::base_row(const std::string& method, double lambda) const {
  ResultRow r;
  r.scenario = to_string(cfg_.scenario);
  r.seed = seed_;
  r.n = item_.n;
  r.d = pop_.dim();
  r.k = clients_.size();
  r.tau = item_.tau;
  r.lambda = lambda;
  r.method = method;
  r.mc_risk = r.mc_stderr = r.oracle_risk = r.bound_value = r.excess_risk = kNaN;
  return r;
}

std::optional<double> ItemRunner::truncation_level() const {
  switch (cfg_.truncation) {
    case TruncationMode::None: return std::nullopt;
    case TruncationMode::Estimated: return estimate_M(data_);
    case TruncationMode::Bound: return pop_.outcome_bound();
    case TruncationMode::Fixed: return cfg_.fixed_m;
  }
  return std::nullopt;
}

McRisk ItemRunner::evaluate(const ClientwisePredictor& pred, std::span<const ClientSpec> clients) const {
  // Every method of an item sees the same test draws.
  Rng rng = make_rng(derive_seed(seed_, {2}));
  return monte_carlo_risk(pred, pop_, clients, cfg_.test_draws, rng);
}

const ProtocolRun& ItemRunner::moments_run() {
  if (!moments_) moments_ = run_protocol(ProtocolSpec{OneShotMoments{}}, data_);
  return *moments_;
}

const ProtocolRun& ItemRunner::ice_run() {
  if (!ice_) ice_ = run_protocol(ProtocolSpec{FederatedIce{cfg_.ice_rounds}}, data_);
  return *ice_;
}

MethodFit ItemRunner::fit_plugin(const std::string& method) {
  const auto& run = moments_run();
  const auto& art = std::get<MomentsArtifact>(run.artifact);
  MomentPair moments = art.zero;
  if (method == "plugin-debias") moments = debias_moments(art.zero, co_observation_matrix(clients_));
  else if (method == "plugin-cw") moments = art.cw;
  MethodFit f;
  f.predictor = build_clientwise_plugin(moments, clients_).predictor;
  f.coefficients_for = [moments](const FeaturePattern& p) { return crop_predictor(moments, p).theta; };
  add_comm(f, run.log);
  return f;
}

MethodFit ItemRunner::fit_itr(const std::string& method, double lambda) {
  MethodFit f;
  ImputationMap map;
  // Covariance used to extend the imputer to an unseen pattern.
  std::optional<Matrix> extend_sigma;
  if (method == "itr-zero" || method == "itr-zero-fedavg") {
    map = fit_zero_imputer(clients_);
  } else if (method == "itr-opt-pop") {
    map = fit_optimal_imputer(pop_.sigma(), clients_, CovarianceSource::Population);
    extend_sigma = pop_.sigma();
  } else if (method == "itr-opt-cw") {
    const auto& run = moments_run();
    const auto& cw = std::get<MomentsArtifact>(run.artifact).cw;
    map = fit_optimal_imputer(cw.sigma(), clients_, CovarianceSource::ComponentWise);
    extend_sigma = cw.sigma();
    add_comm(f, run.log);
  } else if (method == "itr-ice") {
    const auto& run = ice_run();
    const auto& art = std::get<IceArtifact>(run.artifact);
    map = art.data.imputer;
    if (!art.sigma_trace.empty()) extend_sigma = art.sigma_trace.back();
    add_comm(f, run.log);
  } else {
    throw std::logic_error("unknown impute-then-regress method " + method);
  }

  Vector theta;
  if (method == "itr-zero-fedavg") {
    const double step = cfg_.fedavg_step ? *cfg_.fedavg_step
                                         : 0.5 * fedavg_step_limit(apply_imputer(map, data_), lambda);
    auto run = run_protocol(ProtocolSpec{FedAvgRidge{cfg_.fedavg_rounds, cfg_.fedavg_local_steps, step, lambda}},
                            data_, ServerConfig{map});
    theta = std::get<FedAvgArtifact>(run.artifact).theta;
    add_comm(f, run.log);
  } else {
    auto run = run_protocol(ProtocolSpec{OneShotRidge{lambda}}, data_, ServerConfig{map});
    theta = std::get<RidgeArtifact>(run.artifact).theta;
    add_comm(f, run.log);
  }

  const ItrPredictor itr(map, theta, m_);
  f.predictor = itr.to_clientwise(clients_);
  f.coefficients_for = [map, theta, extend_sigma](const FeaturePattern& p) {
    ImputationMap ext = map;
    if (!ext.covers(p)) {
      if (extend_sigma) add_optimal_pattern(ext, *extend_sigma, p);
      else ext.set(p, Matrix::Zero(static_cast<Index>(p.dim() - p.size()), static_cast<Index>(p.size())));
    }
    return ItrPredictor(ext, theta, std::nullopt).effective_coefficients(p);
  };
  return f;
}

MethodFit ItemRunner::fit_local(const std::string& method, double lambda) {
  MethodFit f;
  f.predictor = local_learning(data_, lambda, method == "local" ? RhoSource::True : RhoSource::Empirical, m_);
  // A client absent from training has no local data: zero predictor.
  f.coefficients_for = [](const FeaturePattern& p) { return Vector::Zero(static_cast<Index>(p.size())).eval(); };
  return f;
}

double ItemRunner::bound_for(const std::string& method, double lambda) const {
  if (method == "zero-approx") {
    const double lp = typical_case_lambda_prime(lambda, item_.tau);
    return pop_.noise_variance() + ridge_bias(pop_.sigma(), pop_.theta_star(), lp);
  }
  if (!m_) return kNaN;
  if (method == "itr-zero" || method == "itr-zero-fedavg")
    return itr_bound(pop_, clients_, ImputerKind::Zero, lambda, item_.n, *m_).bound_value;
  if (method == "itr-opt-pop")
    return itr_bound(pop_, clients_, ImputerKind::OptimalLinear, lambda, item_.n, *m_).bound_value;
  if (method == "local") return local_bound_terms(pop_, clients_, lambda, item_.n, *m_).upper;
  return kNaN;
}

std::vector<ResultRow> ItemRunner::run() {
  const std::size_t d = pop_.dim();
  if (cfg_.clients.patterns.empty()) {
    Rng prng = make_rng(derive_seed(seed_, {0}));
    clients_ = make_clients(draw_bernoulli_patterns(cfg_.clients.k, d, item_.tau, prng), cfg_.clients.rho);
  } else {
    clients_ = make_clients(cfg_.clients.patterns, cfg_.clients.rho);
  }
  Rng drng = make_rng(derive_seed(seed_, {1}));
  data_ = sample_dataset(pop_, clients_, item_.n, drng);
  m_ = truncation_level();

  const double r_star = oracle_global_risk(pop_, clients_);
  const ClientwisePredictor oracle = oracle_predictor(pop_, clients_);
  const McRisk oracle_mc = evaluate(oracle, clients_);

  std::vector<ResultRow> rows;
  auto emit = [&](const std::string& method, double lambda, const MethodFit& fit, double bound,
                  std::chrono::steady_clock::time_point t0) {
    const McRisk mc = evaluate(fit.predictor, clients_);
    ResultRow r = base_row(method, lambda);
    r.mc_risk = mc.risk;
    r.mc_stderr = mc.std_error;
    r.oracle_risk = r_star;
    r.bound_value = bound;
    // Paired with the oracle on the same test draws.
    r.excess_risk = mc.risk - oracle_mc.risk;
    r.comm_floats_up = fit.up;
    r.comm_floats_down = fit.down;
    if (timing_) r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(r);
    if (cfg_.scenario != Scenario::NewClientGeneralization) return;
    for (const auto& h : cfg_.clients.heldout) {
      const std::vector<ClientSpec> one{{0, h, 1.0}};
      ClientwisePredictor p;
      p.trunc_M = fit.predictor.trunc_M;
      p.thetas[0] = fit.coefficients_for(h);
      ClientwisePredictor o;
      o.thetas[0] = best_local_coefficients(pop_, h);
      const McRisk hm = evaluate(p, one);
      const McRisk ho = evaluate(o, one);
      ResultRow hr = r;
      hr.method = method + "@" + h.to_string();
      hr.mc_risk = hm.risk;
      hr.mc_stderr = hm.std_error;
      hr.oracle_risk = oracle_local_risk(pop_, h);
      hr.bound_value = kNaN;
      hr.excess_risk = hm.risk - ho.risk;
      rows.push_back(std::move(hr));
    }
  };

  for (const auto& method : cfg_.methods) {
    if (method == "oracle" || method.rfind("plugin-", 0) == 0) {
      const auto t0 = std::chrono::steady_clock::now();
      MethodFit fit;
      if (method == "oracle") {
        fit.predictor = oracle;
        fit.coefficients_for = [this](const FeaturePattern& p) { return best_local_coefficients(pop_, p); };
      } else {
        fit = fit_plugin(method);
      }
      emit(method, kNaN, fit, kNaN, t0);
      continue;
    }
    for (double lambda : cfg_.lambda_grid) {
      const auto t0 = std::chrono::steady_clock::now();
      if (method == "zero-approx") {
        // Population approximation term R*(F^I0) + B_lambda^I0 for the drawn patterns.
        const auto imp = imputed_population_covariance(pop_, clients_, ImputerKind::Zero);
        ResultRow r = base_row(method, lambda);
        r.mc_risk = imp.risk + ridge_bias(imp.sigma, imp.theta_prime, lambda);
        r.mc_stderr = 0.0;
        r.oracle_risk = r_star;
        r.bound_value = bound_for(method, lambda);
        r.excess_risk = r.mc_risk - r_star;
        rows.push_back(std::move(r));
        continue;
      }
      MethodFit fit = method.rfind("local", 0) == 0 ? fit_local(method, lambda) : fit_itr(method, lambda);
      emit(method, lambda, fit, bound_for(method, lambda), t0);
    }
  }
  return rows;
}

std::vector<ClientSpec> audit_clients(std::size_t k, std::size_t d) {
  std::vector<FeaturePattern> pats;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<Index> obs;
    for (std::size_t j = 0; j < d; ++j)
      if (d == 1 || j != c % d) obs.push_back(static_cast<Index>(j));
    pats.emplace_back(d, obs);
  }
  return make_clients(pats, uniform_weights(k));
}

std::vector<ResultRow> run_comm_item(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t k, std::size_t d,
                                     bool timing) {
  const PopulationSpec pop(identity_covariance(d), Vector::Ones(static_cast<Index>(d)));
  const auto clients = audit_clients(k, d);
  Rng rng = make_rng(derive_seed(seed, {1}));
  const Dataset data = sample_dataset(pop, clients, cfg.comm.n, rng);

  std::vector<ProtocolSpec> specs;
  for (const auto& m : cfg.methods) {
    if (m == "one-shot-moments") specs.push_back({OneShotMoments{}});
    if (m == "one-shot-ridge") specs.push_back({OneShotRidge{0.1}});
    if (m == "fed-ice")
      for (auto t : cfg.comm.ice_rounds) specs.push_back({FederatedIce{t}});
    if (m == "fedavg")
      for (auto r : cfg.comm.fedavg_rounds) specs.push_back({FedAvgRidge{r, 1, 0.1, 0.1}});
  }

  std::vector<ResultRow> rows;
  for (const auto& spec : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = run_protocol(spec, data);
    const auto predicted = replay_comm_schedule(spec, k, d);
    if (run.log.total_up() != predicted.up || run.log.total_down() != predicted.down ||
        run.log.total_bits() != predicted.bits)
      throw std::runtime_error("communication audit mismatch for " + spec.name() + " at K=" + std::to_string(k) +
                               ", d=" + std::to_string(d));
    ResultRow r;
    r.scenario = to_string(cfg.scenario);
    r.seed = seed;
    r.n = cfg.comm.n;
    r.d = d;
    r.k = k;
    r.tau = r.lambda = r.mc_risk = r.mc_stderr = r.oracle_risk = r.bound_value = r.excess_risk = kNaN;
    r.method = spec.name();
    r.comm_floats_up = run.log.total_up();
    r.comm_floats_down = run.log.total_down();
    if (timing) r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(r));
  }
  return rows;
}

template <class Fn>
void run_pool(std::size_t count, std::size_t threads, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, count));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  const std::uint64_t root = opt.seed ? *opt.seed : cfg.root_seed;
  std::vector<std::vector<ResultRow>> slots;

  if (cfg.scenario == Scenario::CommAudit) {
    struct CommItem {
      std::size_t grid, rep, k, d;
    };
    std::vector<CommItem> items;
    std::size_t g = 0;
    for (auto k : cfg.comm.k)
      for (auto d : cfg.comm.d) {
        for (std::size_t r = 0; r < cfg.replicates; ++r) items.push_back({g, r, k, d});
        ++g;
      }
    slots.resize(items.size());
    run_pool(items.size(), opt.threads, [&](std::size_t i) {
      const auto& it = items[i];
      slots[i] = run_comm_item(cfg, derive_seed(root, {it.grid, it.rep}), it.k, it.d, opt.timing);
    });
  } else {
    const PopulationSpec pop = build_population(cfg, root);
    std::vector<WorkItem> items;
    const std::vector<double> taus = cfg.tau_grid.empty() ? std::vector<double>{kNaN} : cfg.tau_grid;
    std::size_t g = 0;
    for (auto n : cfg.n_grid)
      for (double tau : taus) {
        for (std::size_t r = 0; r < cfg.replicates; ++r) items.push_back({g, r, n, tau});
        ++g;
      }
    slots.resize(items.size());
    run_pool(items.size(), opt.threads, [&](std::size_t i) {
      const auto& it = items[i];
      ItemRunner runner(cfg, pop, derive_seed(root, {it.grid_index, it.replicate}), it, opt.timing);
      slots[i] = runner.run();
    });
  }

  std::vector<ResultRow> rows;
  for (auto& s : slots)
    for (auto& r : s) rows.push_back(std::move(r));
  return rows;
}

const char* csv_header() {
  return "scenario,seed,n,d,K,tau,lambda,method,mc_risk,mc_stderr,oracle_risk,bound_value,excess_risk,"
         "comm_floats_up,comm_floats_down,wall_ms";
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << csv_header() << '\n';
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.seed << ',' << r.n << ',' << r.d << ',' << r.k << ',' << format_double(r.tau) << ','
       << format_double(r.lambda) << ',' << '"' << r.method << '"' << ',' << format_double(r.mc_risk) << ','
       << format_double(r.mc_stderr) << ',' << format_double(r.oracle_risk) << ',' << format_double(r.bound_value)
       << ',' << format_double(r.excess_risk) << ',' << r.comm_floats_up << ',' << r.comm_floats_down << ','
       << format_double(r.wall_ms) << '\n';
  }
}

}  // namespace fedcm::experiment
