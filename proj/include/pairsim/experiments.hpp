#pragma once

// Orchestration behind the CLI subcommands: runs the configured experiments
// and writes their data files plus a manifest with content digests.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairsim/coincidence.hpp"
#include "pairsim/config.hpp"
#include "pairsim/engine.hpp"
#include "pairsim/format.hpp"
#include "pairsim/hom.hpp"
#include "pairsim/radiometry.hpp"
#include "pairsim/table.hpp"

namespace pairsim {

inline constexpr const char* tool_version = "0.1.0";

/// Collects output files so the manifest can list their digests.
class OutputSet {
public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& contents) {
    fmt::write_file(dir_ / name, contents);
    files_.push_back({name, fmt::sha256_hex(contents), contents.size()});
  }

  const std::filesystem::path& dir() const { return dir_; }

  struct Entry {
    std::string name;
    std::string sha256;
    std::size_t bytes;
  };
  const std::vector<Entry>& files() const { return files_; }

private:
  std::filesystem::path dir_;
  std::vector<Entry> files_;
};

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct ManifestInfo {
  std::string command;
  std::string config_sha256;
  std::uint64_t seed = 0;
  std::string started_utc;
};

/// Written after every data file; its presence marks a completed run.
inline void write_manifest(OutputSet& out, const ManifestInfo& info) {
  nlohmann::ordered_json j;
  j["tool"] = "pairsim";
  j["tool_version"] = tool_version;
  j["command"] = info.command;
  j["config_sha256"] = info.config_sha256;
  j["seed"] = info.seed;
  j["started_utc"] = info.started_utc;
  j["finished_utc"] = utc_now();
  auto files = nlohmann::ordered_json::array();
  for (const auto& f : out.files()) {
    nlohmann::ordered_json e;
    e["path"] = f.name;
    e["sha256"] = f.sha256;
    e["bytes"] = f.bytes;
    files.push_back(e);
  }
  j["files"] = files;
  fmt::write_file(out.dir() / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// radiometry

inline nlohmann::ordered_json to_json(const RadiometryReport& r) {
  nlohmann::ordered_json j;
  j["pump_photon_flux_per_s"] = r.pump_photon_flux;
  j["created_pair_rate_full_band_per_s"] = r.created_pair_rate_full_band;
  j["filter_ratio"] = r.filter_ratio;
  j["created_pair_rate_in_band_per_s"] = r.created_pair_rate_in_band;
  j["coherence_time_ps"] = r.coherence_time_ps;
  j["modes_per_second"] = r.modes_per_second;
  j["mean_photons_per_mode"] = r.mean_photons_per_mode;
  j["inverse_bandwidth_time_ps"] = r.inverse_bandwidth_time_ps;
  j["mean_photons_per_mode_inverse_bandwidth"] = r.mean_photons_per_mode_inverse_bandwidth;
  j["spectral_radiance_w_per_m2_sr_m"] = r.spectral_radiance;
  j["emitted_spectral_brightness_per_s_pm"] = r.emitted_spectral_brightness;
  j["overall_transmission"] = r.overall_transmission;
  return j;
}

inline RadiometryReport run_radiometry(const ExperimentConfig& c, OutputSet& out) {
  if (!c.radiometry) throw ConfigError("radiometry", "section missing");
  const auto& s = *c.radiometry;
  const SourceConfig& src = c.source(s.source);
  RadiometryReport r;
  try {
    r = radiometry_report(src, s.filter_fwhm_pm * 1e-3, s.per_photon_transmission, s.mode);
  } catch (const DomainError& e) {
    throw ConfigError("radiometry", e.what());
  }

  nlohmann::ordered_json j;
  j["source"] = s.source;
  j["filter_fwhm_pm"] = s.filter_fwhm_pm;
  j["per_photon_transmission"] = s.per_photon_transmission;
  j["pair_transmission_mode"] = s.mode == PairTransmissionMode::heralded ? "heralded" : "pair";
  j["report"] = to_json(r);
  nlohmann::ordered_json quoted = nlohmann::ordered_json::object();
  if (s.quoted_mean_photons_per_mode) {
    quoted["mean_photons_per_mode"] = *s.quoted_mean_photons_per_mode;
    if (*s.quoted_mean_photons_per_mode > 0) {
      quoted["ratio_computed_to_quoted_0p44"] = r.mean_photons_per_mode / *s.quoted_mean_photons_per_mode;
      quoted["ratio_computed_to_quoted_inverse_bandwidth"] =
          r.mean_photons_per_mode_inverse_bandwidth / *s.quoted_mean_photons_per_mode;
    }
  }
  if (s.quoted_spectral_brightness) {
    quoted["spectral_brightness_per_s_pm"] = *s.quoted_spectral_brightness;
    if (*s.quoted_spectral_brightness > 0)
      quoted["ratio_computed_to_quoted_brightness"] = r.emitted_spectral_brightness / *s.quoted_spectral_brightness;
  }
  j["quoted"] = quoted;
  out.write("radiometry.json", j.dump(2) + "\n");

  std::ostringstream t;
  auto row = [&](const std::string& k, const std::string& v) { t << std::left << std::setw(52) << k << v << "\n"; };
  row("pump photon flux [1/s]", fmt::number(r.pump_photon_flux));
  row("created pairs, full band [1/s]", fmt::number(r.created_pair_rate_full_band));
  row("filter ratio r", fmt::number(r.filter_ratio));
  row("created pairs, in band N [1/s]", fmt::number(r.created_pair_rate_in_band));
  row("coherence time 0.44 l^2/(c dl) [ps]", fmt::number(r.coherence_time_ps));
  row("modes per second M", fmt::number(r.modes_per_second));
  row("<n> with 0.44 mode time", fmt::number(r.mean_photons_per_mode));
  row("mode time 1/dnu [ps]", fmt::number(r.inverse_bandwidth_time_ps));
  row("<n> with 1/dnu mode time", fmt::number(r.mean_photons_per_mode_inverse_bandwidth));
  if (s.quoted_mean_photons_per_mode) row("<n> quoted", fmt::number(*s.quoted_mean_photons_per_mode));
  row("spectral radiance [W m^-2 sr^-1 m^-1]", fmt::number(r.spectral_radiance));
  row("emitted spectral brightness [pairs s^-1 pm^-1]", fmt::number(r.emitted_spectral_brightness));
  if (s.quoted_spectral_brightness) row("spectral brightness quoted", fmt::number(*s.quoted_spectral_brightness));
  row("overall transmission", fmt::number(r.overall_transmission));
  out.write("radiometry.txt", t.str());
  return r;
}

// ---------------------------------------------------------------------------
// coincidence

struct CoincidenceOutcome {
  std::string name;
  CoincidenceHistogram histogram;
  std::optional<PeakFit> fit;
  std::string error; // fit failure message
  std::uint64_t start_clicks = 0;
  std::uint64_t stop_clicks = 0;
  double combined_jitter_ps = 0;
  std::string event_dump; // empty unless requested
};

struct CoincidencePlan {
  PairSource source;
  DetectorConfig start;
  DetectorConfig stop;
  double keep_signal;
  double keep_idler;
};

inline CoincidencePlan coincidence_plan(const ExperimentConfig& c, const CoincidenceRun& run) {
  SourceConfig src = c.source(run.source);
  if (run.pump_power_mw) src.pump.power_mw = *run.pump_power_mw;
  PairSource ps(0, src, c.filter(run.signal_filter), c.filter(run.idler_filter));
  DetectorConfig start = c.detector(run.start_detector), stop = c.detector(run.stop_detector);
  // Detection efficiency is folded into the survival thinning.
  const double ks = run.signal_transmission * start.efficiency;
  const double ki = run.idler_transmission * stop.efficiency;
  start.efficiency = 1.0;
  stop.efficiency = 1.0;
  return {std::move(ps), start, stop, ks, ki};
}

inline double expected_events(const ExperimentConfig& c, const CoincidenceRun& run) {
  const auto p = coincidence_plan(c, run);
  const double any = 1.0 - (1.0 - p.keep_signal) * (1.0 - p.keep_idler);
  return (p.source.pair_rate_hz() * any + p.start.dark_rate_hz + p.stop.dark_rate_hz) * run.duration_s;
}

/// Processed in one-second segments to bound memory. Dead time carries across
/// segment edges; coincidences straddling an edge are dropped (a 1e-8 effect
/// for a +-10 ns range).
inline CoincidenceOutcome simulate_coincidence(const ExperimentConfig& c, const CoincidenceRun& run,
                                               const RandomStream& rng, unsigned threads,
                                               double segment_s = 1.0) {
  const auto p = coincidence_plan(c, run);
  const double duration_ps = run.duration_s * 1e12;
  const double segment_ps = segment_s * 1e12;
  const auto segments = static_cast<std::size_t>(std::ceil(duration_ps / segment_ps));

  CoincidenceOutcome o;
  o.name = run.name;
  o.histogram = CoincidenceHistogram::empty(c.histogram.bin_width_ps, c.histogram.min_ps, c.histogram.max_ps);
  o.combined_jitter_ps = std::hypot(p.start.jitter_fwhm_ps, p.stop.jitter_fwhm_ps);
  std::ostringstream dump;
  if (run.dump_events) dump << "detector_id,timestamp_ps,origin_tag\n";

  double last[2] = {-1e300, -1e300};
  const double dead[2] = {p.start.dead_time_ps(), p.stop.dead_time_ps()};
  for (std::size_t k = 0; k < segments; ++k) {
    const double t0 = segment_ps * static_cast<double>(k);
    const double len = std::min(segment_ps, duration_ps - t0);
    const RandomStream seg = rng.derive(k);
    auto events = generate_surviving_pairs(seg.derive(0), p.source, len, p.keep_signal, p.keep_idler, threads);
    for (auto& e : events) e.pair_id |= static_cast<std::uint64_t>(k) << 52;
    RandomStream rs = seg.derive(1), ri = seg.derive(2);
    DetectionStream streams[2] = {detect(rs, select_role(events, PhotonRole::signal), p.start, len, 0),
                                  detect(ri, select_role(events, PhotonRole::idler), p.stop, len, 1)};
    for (int d = 0; d < 2; ++d) {
      auto& st = streams[d];
      for (auto& r : st) r.timestamp_ps += t0;
      std::size_t skip = 0;
      while (skip < st.size() && st[skip].timestamp_ps - last[d] < dead[d]) ++skip;
      st.erase(st.begin(), st.begin() + static_cast<std::ptrdiff_t>(skip));
      if (!st.empty()) last[d] = st.back().timestamp_ps;
    }
    o.histogram.merge(histogram(streams[0], streams[1], c.histogram.bin_width_ps, c.histogram.min_ps, c.histogram.max_ps));
    o.start_clicks += streams[0].size();
    o.stop_clicks += streams[1].size();
    if (run.dump_events) {
      DetectionStream all = streams[0];
      all.insert(all.end(), streams[1].begin(), streams[1].end());
      sort_by_time(all);
      for (const auto& r : all)
        dump << r.detector_id << ',' << fmt::number(r.timestamp_ps) << ',' << r.origin.tag() << '\n';
    }
  }
  o.event_dump = dump.str();
  try {
    o.fit = fit_peak(o.histogram);
  } catch (const FitError& e) {
    o.error = e.what();
  }
  return o;
}

/// Runs every configured coincidence variant; returns false if any fit failed.
inline bool run_coincidence(const ExperimentConfig& c, unsigned threads, OutputSet& out,
                            std::vector<CoincidenceOutcome>* outcomes = nullptr) {
  if (c.coincidence.empty()) throw ConfigError("coincidence", "no runs configured");
  bool ok = true;
  for (std::size_t i = 0; i < c.coincidence.size(); ++i) {
    const auto& run = c.coincidence[i];
    const RandomStream rng(c.seed, 100 + i);
    auto o = simulate_coincidence(c, run, rng, threads);
    out.write("coincidence_" + run.name + ".csv", histogram_csv(o.histogram));
    if (run.dump_events) out.write("events_" + run.name + ".csv", o.event_dump);
    nlohmann::ordered_json j;
    j["name"] = run.name;
    j["start_clicks"] = o.start_clicks;
    j["stop_clicks"] = o.stop_clicks;
    j["coincidences_in_range"] = o.histogram.total_events;
    j["combined_jitter_fwhm_ps"] = o.combined_jitter_ps;
    if (o.fit) {
      j["fit"] = to_json(*o.fit);
      if (o.fit->fwhm_ps > o.combined_jitter_ps)
        j["deconvolved_photon_width_ps"] = deconvolve_photon_width(o.fit->fwhm_ps, o.combined_jitter_ps);
    } else {
      j["fit"] = nullptr;
      j["error"] = o.error;
      ok = false;
    }
    out.write("coincidence_" + run.name + "_fit.json", j.dump(2) + "\n");
    if (outcomes) outcomes->push_back(std::move(o));
  }
  return ok;
}

// ---------------------------------------------------------------------------
// hom

inline std::string hom_csv(const DipResult& r) {
  std::ostringstream out;
  out << "bin_center_ps,fourfold_counts,twofold_counts\r\n";
  for (std::size_t i = 0; i < r.histogram.size(); ++i)
    out << fmt::number(r.histogram.bin_center(i)) << ',' << r.histogram.counts[i] << ',' << r.twofold.counts[i] << "\r\n";
  return out.str();
}

struct HomOutcome {
  std::string name;
  DipResult result;
  std::string error; // statistics failure message
};

/// Runs every configured HOM variant; returns false if any requested fit failed.
inline bool run_hom_experiments(const ExperimentConfig& c, unsigned threads, const std::string& config_sha256,
                                OutputSet& out, std::vector<HomOutcome>* outcomes = nullptr) {
  if (!c.hom) throw ConfigError("hom", "section missing");
  bool ok = true;
  for (std::size_t i = 0; i < c.hom->runs.size(); ++i) {
    const auto& run = c.hom->runs[i];
    HomSimulator sim(hom_config(c, run));
    const RandomStream rng(c.seed, 200 + i);
    HomOutcome o{run.name, {}, {}};
    try {
      o.result = run.fit ? sim.run_and_fit(rng, run.duration_s * 1e12, threads) : sim.run(rng, run.duration_s * 1e12, threads);
    } catch (const StatisticsError& e) {
      o.error = e.what();
      o.result = sim.run(rng, run.duration_s * 1e12, threads);
      ok = false;
    }
    out.write("hom_" + run.name + ".csv", hom_csv(o.result));
    nlohmann::ordered_json j;
    j["name"] = run.name;
    j["config_sha256"] = config_sha256;
    j["efficiency_boost"] = run.efficiency_boost;
    j["fitted"] = o.result.fitted;
    j["result"] = to_json(o.result);
    if (!o.error.empty()) j["error"] = o.error;
    out.write("hom_" + run.name + ".json", j.dump(2) + "\n");
    if (outcomes) outcomes->push_back(std::move(o));
  }
  return ok;
}

inline double expected_hom_events(const ExperimentConfig& c) {
  double total = 0;
  if (!c.hom) return total;
  for (const auto& run : c.hom->runs) total += HomSimulator(hom_config(c, run)).expected_events(run.duration_s * 1e12);
  return total;
}

// ---------------------------------------------------------------------------
// table

inline void run_table(const ExperimentConfig& c, OutputSet& out) {
  const auto t = comparison_table(c.table);
  out.write("table.csv", t.csv);
  out.write("table.txt", t.text);
  out.write("table.json", t.json.dump(2) + "\n");
}

} // namespace pairsim
