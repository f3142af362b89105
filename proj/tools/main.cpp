#include "experiment.hpp"
#include "presets.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace fedcm::experiment;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct LoadedConfig {
  nlohmann::json doc;
  fs::path base_dir;
};

/// A path on disk, or the name of a shipped preset (optionally "preset:NAME").
LoadedConfig load(const std::string& arg) {
  if (fs::exists(arg)) return {load_config_file(arg), fs::path(arg).parent_path()};
  std::string name = arg.rfind("preset:", 0) == 0 ? arg.substr(7) : arg;
  if (const Preset* p = find_preset(name)) {
    try {
      return {nlohmann::json::parse(p->json), fs::current_path()};
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("<preset>", e.what());
    }
  }
  throw ConfigError("<file>", "no such file or preset: " + arg);
}

void print_issues(const std::vector<ConfigIssue>& issues) {
  for (const auto& i : issues) std::cerr << "  " << i.field << ": " << i.message << '\n';
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("FEDCM_OUT_DIR"); env && *env) return env;
  return "results";
}

int cmd_run(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
            std::size_t threads, bool timing) {
  const auto loaded = load(config);
  const ExperimentConfig cfg = parse_config(loaded.doc, loaded.base_dir);
  const fs::path dir = out.empty() ? default_out_dir() : fs::path(out);
  fs::create_directories(dir);
  const auto rows = run_experiment(cfg, {seed, threads, timing});
  const fs::path target = dir / cfg.output_file;
  const fs::path tmp = dir / (cfg.output_file + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    write_csv(os, rows);
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
  std::cout << "wrote " << rows.size() << " rows to " << target.string() << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& config) {
  const auto loaded = load(config);
  const auto issues = validate_config(loaded.doc, loaded.base_dir);
  if (issues.empty()) {
    std::cout << "ok: " << config << '\n';
    return kExitOk;
  }
  std::cerr << "invalid config " << config << ":\n";
  print_issues(issues);
  return kExitConfig;
}

int cmd_presets_list() {
  for (const auto& p : presets()) {
    std::string scenario = "?";
    try {
      scenario = nlohmann::json::parse(p.json).value("scenario", "?");
    } catch (const std::exception&) {
    }
    std::cout << p.name << '\t' << scenario << '\n';
  }
  return kExitOk;
}

int cmd_presets_show(const std::string& name) {
  const Preset* p = find_preset(name);
  if (!p) {
    std::cerr << "unknown preset: " << name << '\n';
    return kExitConfig;
  }
  std::cout << p->json;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated linear prediction under client-wise covariate mismatch: experiment runner"};
  app.require_subcommand(1);

  std::string run_config, run_out;
  std::optional<std::uint64_t> run_seed;
  std::size_t run_threads = 1;
  bool run_timing = false;
  auto* run = app.add_subcommand("run", "Run an experiment config (file path or preset name)");
  run->add_option("config", run_config, "Config file or preset name")->required();
  run->add_option("--out", run_out, "Output directory (default: $FEDCM_OUT_DIR or ./results)");
  run->add_option("--seed", run_seed, "Override seeds.root");
  run->add_option("--threads", run_threads, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--timing", run_timing, "Fill the wall_ms column (makes files non-reproducible)");

  std::string validate_config_path;
  auto* validate = app.add_subcommand("validate", "Check a config and list every violated field");
  validate->add_option("config", validate_config_path, "Config file or preset name")->required();

  auto* presets_cmd = app.add_subcommand("presets", "Shipped scenario presets");
  presets_cmd->require_subcommand(1);
  auto* list = presets_cmd->add_subcommand("list", "List preset names and scenarios");
  std::string show_name;
  auto* show = presets_cmd->add_subcommand("show", "Print a preset config");
  show->add_option("name", show_name)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_config, run_out, run_seed, run_threads, run_timing);
    if (*validate) return cmd_validate(validate_config_path);
    if (*list) return cmd_presets_list();
    if (*show) return cmd_presets_show(show_name);
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    print_issues(e.issues());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
