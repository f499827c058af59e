// pairsim: radiometry | coincidence | hom | table
//
// Exit codes: 0 success, 2 config error, 3 statistics error, 4 internal error.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "pairsim/config.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/experiments.hpp"
#include "pairsim/format.hpp"

#ifndef PAIRSIM_PRESET_DIR
#define PAIRSIM_PRESET_DIR "presets"
#endif

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_statistics = 3;
constexpr int exit_internal = 4;
constexpr double confirm_threshold = 1e9;

// Console summaries only; files keep round-trip formatting.
std::string brief(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

struct Options {
  std::string command;
  std::string config = std::string(PAIRSIM_PRESET_DIR) + "/paper.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  bool yes = false;
};

int run(const Options& o) {
  using namespace pairsim;
  const std::string started = utc_now();
  std::string text;
  try {
    text = fmt::read_file(o.config);
  } catch (const std::exception& e) {
    throw ConfigError("", std::string("cannot read config: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    cfg = parse_config(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  unsigned threads = o.threads ? *o.threads : cfg.threads;
  if (threads == 0) threads = default_threads();
  const std::string config_sha = fmt::sha256_hex(text);

  double events = 0;
  if (o.command == "coincidence")
    for (const auto& r : cfg.coincidence) events += expected_events(cfg, r);
  if (o.command == "hom") events += expected_hom_events(cfg);
  if (events > 0) std::cerr << "estimated events: " << brief(events) << "\n";
  if (events > confirm_threshold && !o.yes) {
    std::cerr << "more than " << brief(confirm_threshold) << " events; rerun with --yes to proceed\n";
    return exit_config;
  }

  OutputSet out(cfg.output_dir);
  bool ok = true;
  if (o.command == "radiometry") {
    const auto r = run_radiometry(cfg, out);
    std::cout << "tau_c = " << brief(r.coherence_time_ps) << " ps, <n> = " << brief(r.mean_photons_per_mode)
              << " (0.44 convention) / " << brief(r.mean_photons_per_mode_inverse_bandwidth)
              << " (1/dnu convention), E = " << brief(r.emitted_spectral_brightness) << " pairs/s/pm\n";
  } else if (o.command == "coincidence") {
    std::vector<CoincidenceOutcome> results;
    ok = run_coincidence(cfg, threads, out, &results);
    for (const auto& r : results) {
      if (r.fit)
        std::cout << r.name << ": FWHM " << brief(r.fit->fwhm_ps) << " +- " << brief(r.fit->fwhm_stderr_ps)
                  << " ps, " << r.histogram.total_events << " coincidences in range\n";
      else
        std::cerr << r.name << ": " << r.error << "\n";
    }
  } else if (o.command == "hom") {
    std::vector<HomOutcome> results;
    ok = run_hom_experiments(cfg, threads, config_sha, out, &results);
    for (const auto& r : results) {
      std::cout << r.name << ": " << r.result.fourfold_events << " four-folds, "
                << brief(r.result.fourfold_rate_per_hour) << " /h";
      if (r.result.fitted)
        std::cout << ", V = " << brief(r.result.visibility) << " +- " << brief(r.result.visibility_stderr)
                  << ", width " << brief(r.result.dip_width_fwhm_ps) << " ps";
      std::cout << "\n";
      if (!r.error.empty()) std::cerr << r.name << ": " << r.error << "\n";
    }
  } else {
    run_table(cfg, out);
    std::cout << comparison_table(cfg.table).text;
  }
  write_manifest(out, {o.command, config_sha, cfg.seed, started});
  return ok ? exit_ok : exit_statistics;
}

} // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Monte Carlo simulator for narrow-band photon-pair experiments", "pairsim"};
  app.require_subcommand(1, 1);
  app.fallthrough(); // options may follow the subcommand
  for (const char* name : {"radiometry", "coincidence", "hom", "table"}) {
    auto* sub = app.add_subcommand(name);
    sub->callback([&o, name] { o.command = name; });
  }
  app.add_option("--config", o.config, "experiment config (JSON)");
  app.add_option("--seed", o.seed, "override the config seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--yes", o.yes, "allow runs above 1e9 estimated events");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    return run(o);
  } catch (const pairsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const pairsim::StatisticsError& e) {
    std::cerr << "statistics error: " << e.what() << "\n";
    return exit_statistics;
  } catch (const pairsim::DomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return exit_internal;
  }
}
