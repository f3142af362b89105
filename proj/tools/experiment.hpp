#pragma once

#include "fedcm/popgen.hpp"
#include "fedcm/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedcm::experiment {

enum class Scenario {
  ConsistencySweep,
  NewClientGeneralization,
  BoundVerification,
  LocalVsFederated,
  TypicalCaseSweep,
  CommAudit,
};
const char* to_string(Scenario s);

struct ConfigIssue {
  std::string field;
  std::string message;
};

/// Invalid configuration. `issues()` lists every violated field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  ConfigError(std::string field, std::string message);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

struct SigmaSpec {
  enum class Kind { Identity, Equicorrelated, Toeplitz, File };
  Kind kind = Kind::Identity;
  double r = 0.0;
  std::filesystem::path path;
};

struct ThetaSpec {
  enum class Kind { Ones, Values, Random };
  Kind kind = Kind::Ones;
  std::vector<double> values;
  double scale = 1.0;
  std::optional<std::uint64_t> seed;
};

struct PopulationConfig {
  std::size_t d = 0;
  SigmaSpec sigma;
  ThetaSpec theta;
  NoiseLaw noise = GaussianNoise{};
  DesignLaw design = GaussianDesign{};
};

struct FederationConfig {
  std::size_t k = 0;
  std::vector<double> rho;               // empty: uniform
  std::vector<FeaturePattern> patterns;  // empty: Bernoulli(tau) draws
  std::vector<FeaturePattern> heldout;
};

enum class TruncationMode { None, Estimated, Bound, Fixed };

struct CommGrid {
  std::vector<std::size_t> k;
  std::vector<std::size_t> d;
  std::vector<std::size_t> ice_rounds;
  std::vector<std::size_t> fedavg_rounds;
  std::size_t n = 60;
};

struct ExperimentConfig {
  std::string name;
  Scenario scenario = Scenario::ConsistencySweep;
  PopulationConfig population;
  FederationConfig clients;
  std::vector<std::string> methods;
  std::vector<std::size_t> n_grid;
  std::vector<double> lambda_grid;
  std::vector<double> tau_grid;  // Bernoulli densities; empty with explicit patterns
  std::size_t test_draws = 20000;
  TruncationMode truncation = TruncationMode::Estimated;
  double fixed_m = 0.0;
  std::size_t fedavg_rounds = 500;
  std::size_t fedavg_local_steps = 1;
  std::optional<double> fedavg_step;  // unset: 1 / (lambda_max + lambda)
  std::size_t ice_rounds = 5;
  CommGrid comm;
  std::uint64_t root_seed = 0;
  std::size_t replicates = 1;
  std::string output_file;
};

/// Method names accepted by a scenario.
const std::vector<std::string>& known_methods(Scenario s);

/// Every violated field of a config document; empty when valid. Relative
/// file paths resolve against `base_dir`.
std::vector<ConfigIssue> validate_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Throws ConfigError listing all issues.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads a JSON document; syntax errors become a ConfigError on field "<file>".
nlohmann::json load_config_file(const std::filesystem::path& path);

PopulationSpec build_population(const ExperimentConfig& cfg, std::uint64_t root_seed);

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides seeds.root
  std::size_t threads = 1;
  bool timing = false;                // fill wall_ms; otherwise 0 for reproducible files
};

struct ResultRow {
  std::string scenario;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  double tau = 0.0;
  double lambda = 0.0;
  std::string method;
  double mc_risk = 0.0;
  double mc_stderr = 0.0;
  double oracle_risk = 0.0;
  double bound_value = 0.0;
  double excess_risk = 0.0;
  std::size_t comm_floats_up = 0;
  std::size_t comm_floats_down = 0;
  double wall_ms = 0.0;
};

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {});

const char* csv_header();
void write_csv(std::ostream& os, const std::vector<ResultRow>& rows);
/// %.17g, with "nan" for non-finite values.
std::string format_double(double v);

}  // namespace fedcm::experiment
