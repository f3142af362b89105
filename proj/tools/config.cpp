#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fedcm::experiment {

using nlohmann::json;

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::ConsistencySweep: return "ConsistencySweep";
    case Scenario::NewClientGeneralization: return "NewClientGeneralization";
    case Scenario::BoundVerification: return "BoundVerification";
    case Scenario::LocalVsFederated: return "LocalVsFederated";
    case Scenario::TypicalCaseSweep: return "TypicalCaseSweep";
    case Scenario::CommAudit: return "CommAudit";
  }
  return "unknown";
}

namespace {

std::string join_issues(const std::vector<ConfigIssue>& issues) {
  std::string out;
  for (const auto& i : issues) {
    if (!out.empty()) out += "; ";
    out += i.field + ": " + i.message;
  }
  return out;
}

std::optional<Scenario> scenario_from(const std::string& s) {
  for (auto sc : {Scenario::ConsistencySweep, Scenario::NewClientGeneralization, Scenario::BoundVerification,
                  Scenario::LocalVsFederated, Scenario::TypicalCaseSweep, Scenario::CommAudit})
    if (s == to_string(sc)) return sc;
  return std::nullopt;
}

class Reader {
 public:
  Reader(std::vector<ConfigIssue>& issues, std::filesystem::path base) : issues_(issues), base_(std::move(base)) {}

  void fail(const std::string& field, const std::string& msg) { issues_.push_back({field, msg}); }

  const json* object(const json& parent, const std::string& key, const std::string& path, bool required) {
    if (!parent.contains(key)) {
      if (required) fail(path, "missing required object");
      return nullptr;
    }
    const json& v = parent.at(key);
    if (!v.is_object()) {
      fail(path, "must be an object");
      return nullptr;
    }
    return &v;
  }

  std::optional<double> number(const json& parent, const std::string& key, const std::string& path, bool required) {
    if (!parent.contains(key)) {
      if (required) fail(path, "missing required number");
      return std::nullopt;
    }
    const json& v = parent.at(key);
    if (!v.is_number()) {
      fail(path, "must be a number");
      return std::nullopt;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
      fail(path, "must be finite");
      return std::nullopt;
    }
    return x;
  }

  std::optional<std::uint64_t> count(const json& parent, const std::string& key, const std::string& path,
                                     bool required) {
    if (!parent.contains(key)) {
      if (required) fail(path, "missing required integer");
      return std::nullopt;
    }
    const json& v = parent.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())) {
      fail(path, "must be a non-negative integer");
      return std::nullopt;
    }
    return v.get<std::uint64_t>();
  }

  std::optional<std::string> string(const json& parent, const std::string& key, const std::string& path,
                                    bool required) {
    if (!parent.contains(key)) {
      if (required) fail(path, "missing required string");
      return std::nullopt;
    }
    const json& v = parent.at(key);
    if (!v.is_string()) {
      fail(path, "must be a string");
      return std::nullopt;
    }
    return v.get<std::string>();
  }

  template <class T>
  std::optional<std::vector<T>> list(const json& parent, const std::string& key, const std::string& path,
                                     bool required) {
    if (!parent.contains(key)) {
      if (required) fail(path, "missing required list");
      return std::nullopt;
    }
    const json& v = parent.at(key);
    if (!v.is_array()) {
      fail(path, "must be a list");
      return std::nullopt;
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const json& e = v[i];
      const std::string ep = path + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, std::string>) {
        if (!e.is_string()) {
          fail(ep, "must be a string");
          return std::nullopt;
        }
        out.push_back(e.get<std::string>());
      } else if constexpr (std::is_integral_v<T>) {
        if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) {
          fail(ep, "must be a non-negative integer");
          return std::nullopt;
        }
        out.push_back(e.get<T>());
      } else {
        if (!e.is_number() || !std::isfinite(e.get<double>())) {
          fail(ep, "must be a finite number");
          return std::nullopt;
        }
        out.push_back(e.get<T>());
      }
    }
    return out;
  }

  std::optional<std::vector<FeaturePattern>> patterns(const json& parent, const std::string& key,
                                                      const std::string& path, std::size_t d) {
    if (!parent.contains(key)) return std::nullopt;
    const json& v = parent.at(key);
    if (!v.is_array()) {
      fail(path, "must be a list of index lists");
      return std::nullopt;
    }
    std::vector<FeaturePattern> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto idx = index_list(v, i, path + "[" + std::to_string(i) + "]");
      if (!idx) return std::nullopt;
      if (d == 0) continue;
      try {
        out.push_back(FeaturePattern::from_one_based(d, *idx));
      } catch (const std::exception& e) {
        fail(path + "[" + std::to_string(i) + "]", e.what());
        return std::nullopt;
      }
    }
    return out;
  }

  const std::filesystem::path& base() const { return base_; }

 private:
  // Element of an array that is itself a list of indices.
  std::optional<std::vector<std::size_t>> index_list(const json& arr, std::size_t i, const std::string& path) {
    const json& e = arr[i];
    if (!e.is_array()) {
      fail(path, "must be a list of 1-based feature indices");
      return std::nullopt;
    }
    std::vector<std::size_t> out;
    for (const auto& x : e) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1) {
        fail(path, "feature indices must be integers >= 1");
        return std::nullopt;
      }
      out.push_back(x.get<std::size_t>());
    }
    return out;
  }

  std::vector<ConfigIssue>& issues_;
  std::filesystem::path base_;
};

void check_known_keys(Reader& rd, const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) rd.fail(path.empty() ? k : path + "." + k, "unknown key");
}

void parse_population(Reader& rd, const json& doc, ExperimentConfig& cfg) {
  const json* pop = rd.object(doc, "population", "population", cfg.scenario != Scenario::CommAudit);
  if (!pop) return;
  check_known_keys(rd, *pop, "population", {"d", "sigma", "theta", "noise", "design"});
  auto& p = cfg.population;
  if (auto d = rd.count(*pop, "d", "population.d", true)) {
    if (*d < 1) rd.fail("population.d", "must be >= 1");
    else p.d = *d;
  }

  if (const json* s = rd.object(*pop, "sigma", "population.sigma", false)) {
    const auto kind = rd.string(*s, "kind", "population.sigma.kind", true);
    if (kind == "identity") {
      p.sigma.kind = SigmaSpec::Kind::Identity;
    } else if (kind == "equicorrelated" || kind == "toeplitz") {
      p.sigma.kind = *kind == "toeplitz" ? SigmaSpec::Kind::Toeplitz : SigmaSpec::Kind::Equicorrelated;
      if (auto r = rd.number(*s, "r", "population.sigma.r", true)) {
        p.sigma.r = *r;
        if (*kind == "toeplitz" && !(std::abs(*r) < 1.0)) rd.fail("population.sigma.r", "toeplitz r must be in (-1, 1)");
        if (*kind == "equicorrelated" && p.d > 1 && !(*r < 1.0 && *r > -1.0 / static_cast<double>(p.d - 1)))
          rd.fail("population.sigma.r", "equicorrelated r must be in (-1/(d-1), 1)");
      }
    } else if (kind == "file") {
      p.sigma.kind = SigmaSpec::Kind::File;
      if (auto path = rd.string(*s, "path", "population.sigma.path", true)) {
        std::filesystem::path fp(*path);
        p.sigma.path = fp.is_relative() ? rd.base() / fp : fp;
        if (!std::filesystem::exists(p.sigma.path)) rd.fail("population.sigma.path", "file not found: " + p.sigma.path.string());
      }
    } else if (kind) {
      rd.fail("population.sigma.kind", "expected identity, equicorrelated, toeplitz or file");
    }
  }

  if (const json* t = rd.object(*pop, "theta", "population.theta", false)) {
    const auto kind = rd.string(*t, "kind", "population.theta.kind", true);
    if (kind == "ones") {
      p.theta.kind = ThetaSpec::Kind::Ones;
    } else if (kind == "values") {
      p.theta.kind = ThetaSpec::Kind::Values;
      if (auto v = rd.list<double>(*t, "values", "population.theta.values", true)) {
        if (p.d && v->size() != p.d) rd.fail("population.theta.values", "length must equal population.d");
        p.theta.values = *v;
      }
    } else if (kind == "random") {
      p.theta.kind = ThetaSpec::Kind::Random;
      if (auto s = rd.count(*t, "seed", "population.theta.seed", false)) p.theta.seed = *s;
    } else if (kind) {
      rd.fail("population.theta.kind", "expected ones, values or random");
    }
    if (auto sc = rd.number(*t, "scale", "population.theta.scale", false)) p.theta.scale = *sc;
  }

  if (const json* nz = rd.object(*pop, "noise", "population.noise", false)) {
    const auto kind = rd.string(*nz, "kind", "population.noise.kind", true);
    if (kind == "gaussian") {
      const auto var = rd.number(*nz, "variance", "population.noise.variance", false).value_or(1.0);
      if (!(var >= 0.0)) rd.fail("population.noise.variance", "must be >= 0");
      p.noise = GaussianNoise{var};
    } else if (kind == "uniform") {
      const auto hw = rd.number(*nz, "half_width", "population.noise.half_width", false).value_or(1.0);
      if (!(hw >= 0.0)) rd.fail("population.noise.half_width", "must be >= 0");
      p.noise = UniformNoise{hw};
    } else if (kind) {
      rd.fail("population.noise.kind", "expected gaussian or uniform");
    }
  }

  if (auto design = rd.string(*pop, "design", "population.design", false)) {
    if (*design == "gaussian") p.design = GaussianDesign{};
    else if (*design == "sphere") p.design = SphereDesign{};
    else rd.fail("population.design", "expected gaussian or sphere");
  }
}

void parse_clients(Reader& rd, const json& doc, ExperimentConfig& cfg, std::vector<double>& tau_scalar) {
  const json* cl = rd.object(doc, "clients", "clients", cfg.scenario != Scenario::CommAudit);
  if (!cl) return;
  check_known_keys(rd, *cl, "clients", {"K", "rho", "patterns", "tau", "heldout"});
  auto& f = cfg.clients;
  const std::size_t d = cfg.population.d;
  if (auto pats = rd.patterns(*cl, "patterns", "clients.patterns", d)) f.patterns = *pats;
  if (auto k = rd.count(*cl, "K", "clients.K", f.patterns.empty())) {
    if (*k < 1) rd.fail("clients.K", "must be >= 1");
    else if (!f.patterns.empty() && *k != f.patterns.size()) rd.fail("clients.K", "must equal the number of patterns");
    f.k = *k;
  }
  if (!f.patterns.empty()) f.k = f.patterns.size();

  if (cl->contains("rho")) {
    const json& r = cl->at("rho");
    if (r.is_string()) {
      if (r.get<std::string>() != "uniform") rd.fail("clients.rho", "expected \"uniform\" or a list of weights");
    } else if (auto rho = rd.list<double>(*cl, "rho", "clients.rho", true)) {
      if (f.k && rho->size() != f.k) {
        rd.fail("clients.rho", "length must equal clients.K");
      } else {
        double sum = 0.0;
        for (double x : *rho) {
          if (!(x > 0.0 && x <= 1.0)) rd.fail("clients.rho", "weights must lie in (0, 1]");
          sum += x;
        }
        if (std::abs(sum - 1.0) > 1e-12) rd.fail("clients.rho", "weights must sum to 1");
        f.rho = *rho;
      }
    }
  }

  if (auto tau = rd.number(*cl, "tau", "clients.tau", false)) tau_scalar.push_back(*tau);
  if (auto held = rd.patterns(*cl, "heldout", "clients.heldout", d)) f.heldout = *held;
}

void parse_grid(Reader& rd, const json& doc, ExperimentConfig& cfg, std::vector<double>& tau_values,
                std::string& tau_field) {
  const json* g = rd.object(doc, "grid", "grid", cfg.scenario != Scenario::CommAudit);
  if (!g) return;
  check_known_keys(rd, *g, "grid", {"n", "lambda", "tau"});
  if (auto n = rd.list<std::size_t>(*g, "n", "grid.n", true)) {
    if (n->empty()) rd.fail("grid.n", "must be non-empty");
    for (auto x : *n)
      if (x < 1) rd.fail("grid.n", "sample sizes must be >= 1");
    cfg.n_grid = *n;
  }
  if (auto l = rd.list<double>(*g, "lambda", "grid.lambda", false)) {
    for (double x : *l)
      if (!(x >= 0.0)) rd.fail("grid.lambda", "penalties must be >= 0");
    if (l->empty()) rd.fail("grid.lambda", "must be non-empty when given");
    cfg.lambda_grid = *l;
  }
  if (auto t = rd.list<double>(*g, "tau", "grid.tau", false)) {
    if (t->empty()) rd.fail("grid.tau", "must be non-empty when given");
    tau_values = *t;
    tau_field = "grid.tau";
  }
}

bool uses_lambda(const std::string& m) {
  return m.rfind("itr-", 0) == 0 || m.rfind("local", 0) == 0 || m == "zero-approx";
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : std::runtime_error("invalid config: " + join_issues(issues)), issues_(std::move(issues)) {}

ConfigError::ConfigError(std::string field, std::string message)
    : ConfigError(std::vector<ConfigIssue>{{std::move(field), std::move(message)}}) {}

const std::vector<std::string>& known_methods(Scenario s) {
  static const std::vector<std::string> data_methods = {
      "plugin-zero", "plugin-debias", "plugin-cw",       "itr-zero", "itr-opt-pop",     "itr-opt-cw",
      "itr-ice",     "itr-zero-fedavg", "local",         "local-empirical", "oracle",   "zero-approx"};
  static const std::vector<std::string> protocols = {"one-shot-moments", "one-shot-ridge", "fed-ice", "fedavg"};
  return s == Scenario::CommAudit ? protocols : data_methods;
}

std::vector<ConfigIssue> validate_config(const json& doc, const std::filesystem::path& base_dir) {
  std::vector<ConfigIssue> issues;
  try {
    parse_config(doc, base_dir);
  } catch (const ConfigError& e) {
    issues = e.issues();
  }
  return issues;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  std::vector<ConfigIssue> issues;
  Reader rd(issues, base_dir);
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  check_known_keys(rd, doc, "",
                   {"name", "scenario", "population", "clients", "methods", "grid", "evaluation", "fedavg", "ice",
                    "comm", "seeds", "output"});

  if (auto name = rd.string(doc, "name", "name", false)) cfg.name = *name;
  if (auto sc = rd.string(doc, "scenario", "scenario", true)) {
    if (auto s = scenario_from(*sc)) cfg.scenario = *s;
    else rd.fail("scenario", "unknown scenario '" + *sc + "'");
  }

  parse_population(rd, doc, cfg);
  std::vector<double> tau_values;
  std::string tau_field = "clients.tau";
  parse_clients(rd, doc, cfg, tau_values);
  std::vector<double> grid_tau;
  std::string grid_field;
  parse_grid(rd, doc, cfg, grid_tau, grid_field);
  if (!grid_tau.empty()) {
    if (!tau_values.empty()) rd.fail("grid.tau", "give either clients.tau or grid.tau, not both");
    tau_values = grid_tau;
    tau_field = grid_field;
  }
  for (double t : tau_values)
    if (!(t > 0.0 && t <= 1.0)) rd.fail(tau_field, "tau must lie in (0, 1]");

  const bool data_scenario = cfg.scenario != Scenario::CommAudit;
  if (data_scenario) {
    if (!cfg.clients.patterns.empty() && !tau_values.empty())
      rd.fail(tau_field, "tau cannot be combined with explicit clients.patterns");
    if (cfg.clients.patterns.empty() && tau_values.empty() && doc.contains("clients"))
      rd.fail("clients.patterns", "give explicit patterns or a Bernoulli density tau");
    cfg.tau_grid = tau_values;
    if (cfg.scenario == Scenario::TypicalCaseSweep && cfg.tau_grid.empty())
      rd.fail("grid.tau", "TypicalCaseSweep needs Bernoulli patterns (grid.tau)");
    if (cfg.scenario == Scenario::NewClientGeneralization && cfg.clients.heldout.empty())
      rd.fail("clients.heldout", "NewClientGeneralization needs at least one held-out pattern");
  }

  if (auto methods = rd.list<std::string>(doc, "methods", "methods", true)) {
    if (methods->empty()) rd.fail("methods", "must list at least one method");
    const auto& known = known_methods(cfg.scenario);
    std::set<std::string> seen;
    for (const auto& m : *methods) {
      if (std::find(known.begin(), known.end(), m) == known.end())
        rd.fail("methods", "method '" + m + "' is not implemented for " + to_string(cfg.scenario));
      if (!seen.insert(m).second) rd.fail("methods", "duplicate method '" + m + "'");
    }
    cfg.methods = *methods;
    if (data_scenario && cfg.lambda_grid.empty() && std::any_of(methods->begin(), methods->end(), uses_lambda))
      rd.fail("grid.lambda", "required by the listed methods");
    if (std::find(methods->begin(), methods->end(), "zero-approx") != methods->end() && cfg.tau_grid.empty())
      rd.fail("methods", "zero-approx needs Bernoulli patterns (tau)");
  }

  if (const json* ev = rd.object(doc, "evaluation", "evaluation", false)) {
    check_known_keys(rd, *ev, "evaluation", {"test_draws", "truncation"});
    if (auto t = rd.count(*ev, "test_draws", "evaluation.test_draws", false)) {
      if (*t < 2) rd.fail("evaluation.test_draws", "must be >= 2");
      cfg.test_draws = *t;
    }
    if (ev->contains("truncation")) {
      const json& tr = ev->at("truncation");
      if (tr.is_number()) {
        cfg.truncation = TruncationMode::Fixed;
        cfg.fixed_m = tr.get<double>();
        if (!(cfg.fixed_m >= 0.0)) rd.fail("evaluation.truncation", "fixed level must be >= 0");
      } else if (tr == "none") {
        cfg.truncation = TruncationMode::None;
      } else if (tr == "estimated") {
        cfg.truncation = TruncationMode::Estimated;
      } else if (tr == "bound") {
        cfg.truncation = TruncationMode::Bound;
        const bool bounded = std::holds_alternative<SphereDesign>(cfg.population.design) &&
                             std::holds_alternative<UniformNoise>(cfg.population.noise);
        if (!bounded) rd.fail("evaluation.truncation", "\"bound\" needs a sphere design with uniform noise");
      } else {
        rd.fail("evaluation.truncation", "expected none, estimated, bound or a number");
      }
    }
  }

  if (const json* fa = rd.object(doc, "fedavg", "fedavg", false)) {
    check_known_keys(rd, *fa, "fedavg", {"rounds", "local_steps", "step_size"});
    if (auto r = rd.count(*fa, "rounds", "fedavg.rounds", false)) {
      if (*r < 1) rd.fail("fedavg.rounds", "must be >= 1");
      cfg.fedavg_rounds = *r;
    }
    if (auto s = rd.count(*fa, "local_steps", "fedavg.local_steps", false)) {
      if (*s < 1) rd.fail("fedavg.local_steps", "must be >= 1");
      cfg.fedavg_local_steps = *s;
    }
    if (fa->contains("step_size") && !(fa->at("step_size") == "auto")) {
      if (auto st = rd.number(*fa, "step_size", "fedavg.step_size", false)) {
        if (!(*st > 0.0)) rd.fail("fedavg.step_size", "must be > 0");
        cfg.fedavg_step = *st;
      }
    }
  }

  if (const json* ice = rd.object(doc, "ice", "ice", false)) {
    check_known_keys(rd, *ice, "ice", {"rounds"});
    if (auto r = rd.count(*ice, "rounds", "ice.rounds", false)) cfg.ice_rounds = *r;
  }

  if (!data_scenario) {
    if (const json* cm = rd.object(doc, "comm", "comm", true)) {
      check_known_keys(rd, *cm, "comm", {"K", "d", "T", "rounds", "n"});
      auto positive_list = [&](const char* key, bool required) {
        const std::string path = std::string("comm.") + key;
        auto v = rd.list<std::size_t>(*cm, key, path, required);
        if (!v) return std::vector<std::size_t>{};
        if (v->empty()) rd.fail(path, "must be non-empty");
        return *v;
      };
      cfg.comm.k = positive_list("K", true);
      cfg.comm.d = positive_list("d", true);
      cfg.comm.ice_rounds = positive_list("T", false);
      cfg.comm.fedavg_rounds = positive_list("rounds", false);
      for (auto x : cfg.comm.k)
        if (x < 1) rd.fail("comm.K", "must be >= 1");
      for (auto x : cfg.comm.d)
        if (x < 1) rd.fail("comm.d", "must be >= 1");
      for (auto x : cfg.comm.fedavg_rounds)
        if (x < 1) rd.fail("comm.rounds", "must be >= 1");
      if (auto n = rd.count(*cm, "n", "comm.n", false)) cfg.comm.n = *n;
      const auto max_k = cfg.comm.k.empty() ? 0 : *std::max_element(cfg.comm.k.begin(), cfg.comm.k.end());
      if (cfg.comm.n < max_k) rd.fail("comm.n", "must be at least the largest K");
      const auto has = [&](const char* m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };
      if (has("fed-ice") && cfg.comm.ice_rounds.empty()) rd.fail("comm.T", "required by fed-ice");
      if (has("fedavg") && cfg.comm.fedavg_rounds.empty()) rd.fail("comm.rounds", "required by fedavg");
    }
  }

  if (const json* sd = rd.object(doc, "seeds", "seeds", true)) {
    check_known_keys(rd, *sd, "seeds", {"root", "replicates"});
    if (auto r = rd.count(*sd, "root", "seeds.root", true)) cfg.root_seed = *r;
    if (auto rep = rd.count(*sd, "replicates", "seeds.replicates", false)) {
      if (*rep < 1) rd.fail("seeds.replicates", "must be >= 1");
      cfg.replicates = *rep;
    }
  }

  if (const json* out = rd.object(doc, "output", "output", false)) {
    check_known_keys(rd, *out, "output", {"file"});
    if (auto f = rd.string(*out, "file", "output.file", false)) {
      if (f->empty() || std::filesystem::path(*f).has_parent_path())
        rd.fail("output.file", "must be a plain file name");
      cfg.output_file = *f;
    }
  }
  if (cfg.output_file.empty())
    cfg.output_file = (cfg.name.empty() ? std::string(to_string(cfg.scenario)) : cfg.name) + ".csv";

  if (data_scenario && issues.empty()) {
    const std::size_t d = cfg.population.d;
    if (cfg.clients.rho.empty() && cfg.clients.k) cfg.clients.rho = uniform_weights(cfg.clients.k);
    if (cfg.population.sigma.kind == SigmaSpec::Kind::File) {
      try {
        build_population(cfg, cfg.root_seed);
      } catch (const std::exception& e) {
        rd.fail("population.sigma.path", e.what());
      }
    }
    for (const auto& p : cfg.clients.heldout)
      if (p.dim() != d) rd.fail("clients.heldout", "pattern dimension mismatch");
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("JSON syntax error: ") + e.what());
  }
}

namespace {

Matrix read_matrix_file(const std::filesystem::path& path, std::size_t d) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> vals;
  double x = 0.0;
  while (in >> x) vals.push_back(x);
  if (!in.eof()) throw std::runtime_error("non-numeric entry in " + path.string());
  if (vals.size() != d * d) throw std::runtime_error("expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
  Matrix m(static_cast<Index>(d), static_cast<Index>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = vals[i * d + j];
  return m;
}

}  // namespace

PopulationSpec build_population(const ExperimentConfig& cfg, std::uint64_t root_seed) {
  const auto& p = cfg.population;
  const std::size_t d = p.d;
  Matrix sigma;
  switch (p.sigma.kind) {
    case SigmaSpec::Kind::Identity: sigma = identity_covariance(d); break;
    case SigmaSpec::Kind::Equicorrelated: sigma = equicorrelated_covariance(d, p.sigma.r); break;
    case SigmaSpec::Kind::Toeplitz: sigma = toeplitz_covariance(d, p.sigma.r); break;
    case SigmaSpec::Kind::File: sigma = read_matrix_file(p.sigma.path, d); break;
  }
  Vector theta(static_cast<Index>(d));
  switch (p.theta.kind) {
    case ThetaSpec::Kind::Ones: theta.setOnes(); break;
    case ThetaSpec::Kind::Values:
      for (std::size_t j = 0; j < d; ++j) theta(static_cast<Index>(j)) = p.theta.values[j];
      break;
    case ThetaSpec::Kind::Random: {
      Rng rng = make_rng(p.theta.seed ? *p.theta.seed : derive_seed(root_seed, {0x7e7a}));
      std::normal_distribution<double> g;
      for (std::size_t j = 0; j < d; ++j) theta(static_cast<Index>(j)) = g(rng);
      theta /= std::sqrt(static_cast<double>(d));
      break;
    }
  }
  theta *= p.theta.scale;
  return PopulationSpec(std::move(sigma), std::move(theta), p.noise, p.design);
}

}  // namespace fedcm::experiment
