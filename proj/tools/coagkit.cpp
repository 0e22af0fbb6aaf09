// coagkit command-line driver.
//
//   coagkit <subcommand> --config <path> [--seed N] [--out DIR] [--threads N]
//
// Exit codes: 0 ok, 2 config error, 3 invariant violation, 4 numerical
// failure, 1 anything else.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include <coagkit/coagkit.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;
constexpr int kExitNumerical = 4;

std::optional<std::uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != std::string(v).size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw coagkit::ConfigError(std::string(name) + ": not a non-negative integer: '" + v + "'");
  }
}

int run_command(const std::string& sub, const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                const std::string& out_dir, std::optional<unsigned> threads_flag) {
  const auto cfg = coagkit::load_config(config_path);
  if (sub == "validate-config") {
    std::cout << config_path << ": ok (kind " << cfg.kind << ", hash " << cfg.hash << ")\n";
    return kExitOk;
  }
  if (cfg.kind != sub)
    throw coagkit::ConfigError("/kind: config kind '" + cfg.kind + "' does not match subcommand '" + sub + "'");

  coagkit::RunContext ctx;
  if (seed_flag) ctx.seed = *seed_flag;
  else if (auto s = env_u64("COAGKIT_SEED")) ctx.seed = *s;
  else ctx.seed = cfg.seed.value_or(0);

  unsigned hw = std::thread::hardware_concurrency();
  if (threads_flag) ctx.threads = *threads_flag;
  else if (auto t = env_u64("COAGKIT_THREADS")) ctx.threads = static_cast<unsigned>(*t);
  else ctx.threads = cfg.threads.value_or(hw == 0 ? 1 : hw);
  if (ctx.threads == 0) ctx.threads = 1;

  const auto out = coagkit::run(cfg, ctx);
  coagkit::write_bundle(out, out_dir);
  for (const auto& w : out.warnings) std::cerr << "coagkit: warning: " << w << "\n";
  std::cout << "coagkit " << sub << ": seed " << ctx.seed << ", config " << cfg.hash << ", " << out.files.size() + 1
            << " files in " << out_dir << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"coagkit: coagulation equations and stochastic coalescents"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "coagkit-out";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  const char* subs[] = {"solve", "simulate", "couple", "family", "nonuniq", "converge", "concentrate",
                        "validate-config"};
  const char* help[] = {"solve the truncated equation (one or nested truncations)",
                        "simulate the stochastic coalescent",
                        "simulate the truncated chain (X^B, Lambda^B)",
                        "simulate the coupled family over nested truncations",
                        "index-chain non-uniqueness construction",
                        "hydrodynamic convergence study",
                        "concentration study",
                        "check a config against the schema and exit"};
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    auto* sc = app.add_subcommand(subs[i], help[i]);
    sc->add_option("--config", config_path, "experiment config (JSON)")->required();
    if (std::string(subs[i]) != "validate-config") {
      sc->add_option("--seed", seed, "seed (overrides COAGKIT_SEED and the config)");
      sc->add_option("--out", out_dir, "output directory")->capture_default_str();
      sc->add_option("--threads", threads, "worker threads for replicas")->check(CLI::PositiveNumber);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  try {
    return run_command(sub, config_path, seed, out_dir, threads);
  } catch (const coagkit::ConfigError& e) {
    std::cerr << "coagkit: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const coagkit::InvalidArgument& e) {
    std::cerr << "coagkit: invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const coagkit::InvariantViolation& e) {
    std::cerr << "coagkit: invariant violated [" << e.invariant() << "]: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const coagkit::NumericalFailure& e) {
    std::cerr << "coagkit: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "coagkit: error: " << e.what() << "\n";
    return 1;
  }
}
