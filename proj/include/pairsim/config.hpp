#pragma once

// Experiment configuration: one JSON document, parsed strictly. Every error
// carries the JSON path of the offending field; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairsim/engine.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/format.hpp"
#include "pairsim/hom.hpp"
#include "pairsim/radiometry.hpp"
#include "pairsim/spectra.hpp"
#include "pairsim/table.hpp"

namespace pairsim {

inline constexpr int schema_version = 1;

struct RadiometrySettings {
  std::string source = "a";
  double filter_fwhm_pm = 10.0;
  double per_photon_transmission = 0.13;
  PairTransmissionMode mode = PairTransmissionMode::heralded;
  std::optional<double> quoted_mean_photons_per_mode;
  std::optional<double> quoted_spectral_brightness;
};

struct CoincidenceRun {
  std::string name;
  std::string source;
  std::string signal_filter; // empty: unfiltered
  std::string idler_filter;
  std::optional<double> pump_power_mw;
  double signal_transmission = 0.13;
  double idler_transmission = 0.13;
  std::string start_detector;
  std::string stop_detector;
  double duration_s = 1.0;
  bool dump_events = false;
};

struct HomArmRef {
  std::string source;
  std::string signal_filter;
  std::string idler_filter;
  double signal_transmission = 0.13;
  double idler_transmission = 0.13;
};

struct HomRun {
  std::string name;
  double duration_s = 60.0;
  double efficiency_boost = 1.0;
  std::optional<double> mean_photons_per_mode; // overrides the section value
  bool fit = true;
};

struct HomSettings {
  HomArmRef arm_a;
  HomArmRef arm_b;
  std::optional<double> mean_photons_per_mode;
  double bs_reflectivity = 0.5;
  std::string signal_detectors[2];
  std::string herald_detectors[2];
  double coincidence_range_ps = 10000.0;
  double bin_width_ps = 45.5;
  double herald_window_ps = 1000.0;
  double wing_start_ps = 3000.0;
  std::uint64_t min_wing_events = 100;
  bool track_unheralded = false;
  std::vector<HomRun> runs;
};

struct HistogramSettings {
  double bin_width_ps = 45.5;
  double min_ps = -10000.0;
  double max_ps = 10000.0;
};

struct ExperimentConfig {
  int schema_version = pairsim::schema_version;
  std::uint64_t seed = 0;
  unsigned threads = 0; // 0: machine parallelism
  std::string output_dir = "out";
  std::map<std::string, SourceConfig> sources;
  std::map<std::string, FilterChain> filters;
  std::map<std::string, DetectorConfig> detectors;
  HistogramSettings histogram;
  std::optional<RadiometrySettings> radiometry;
  std::vector<CoincidenceRun> coincidence;
  std::optional<HomSettings> hom;
  std::vector<TableEntry> table = published_comparison_rows();

  const SourceConfig& source(const std::string& id) const { return sources.at(id); }
  FilterChain filter(const std::string& id) const { return id.empty() ? FilterChain{} : filters.at(id); }
  const DetectorConfig& detector(const std::string& id) const { return detectors.at(id); }
};

namespace detail {

using nlohmann::json;

class Fields {
public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key), "missing required field");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : (used_.insert(key), fallback); }
  std::optional<double> optional_number(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  std::uint64_t count(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    return has(key) ? count(key) : (used_.insert(key), fallback);
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, std::string fallback) {
    return has(key) ? string(key) : (used_.insert(key), std::move(fallback));
  }

  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  void skip(const std::string& key) { used_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items())
      if (!used_.count(item.key())) throw ConfigError(at(item.key()), "unknown key");
  }

private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

inline double probability(Fields& f, const std::string& key, double fallback) {
  const double v = f.number(key, fallback);
  check(is_probability(v), f.at(key), "must lie in [0,1]");
  return v;
}

inline double positive(Fields& f, const std::string& key, double fallback) {
  const double v = f.number(key, fallback);
  check(v > 0 && std::isfinite(v), f.at(key), "must be positive");
  return v;
}

inline double non_negative(Fields& f, const std::string& key, double fallback) {
  const double v = f.number(key, fallback);
  check(v >= 0 && std::isfinite(v), f.at(key), "must be non-negative");
  return v;
}

inline SourceConfig parse_source(const json& j, const std::string& path) {
  Fields f(j, path);
  SourceConfig s;
  {
    Fields p(f.raw("pump"), f.at("pump"));
    s.pump.wavelength_nm = positive(p, "wavelength_nm", s.pump.wavelength_nm);
    s.pump.power_mw = non_negative(p, "power_mw", s.pump.power_mw);
    p.finish();
  }
  s.conversion_efficiency = probability(f, "conversion_efficiency", s.conversion_efficiency);
  s.spdc_center_nm = positive(f, "spdc_center_nm", s.spdc_center_nm);
  s.spdc_bandwidth_fwhm_nm = positive(f, "spdc_bandwidth_fwhm_nm", s.spdc_bandwidth_fwhm_nm);
  s.coupling_efficiency = probability(f, "coupling_efficiency", s.coupling_efficiency);
  s.si_filter_transmission = probability(f, "si_filter_transmission", s.si_filter_transmission);
  f.finish();
  check(s.spdc_center_nm > s.pump.wavelength_nm, f.at("spdc_center_nm"), "must exceed the pump wavelength");
  return s;
}

inline FilterStage parse_stage(const json& j, const std::string& path) {
  Fields f(j, path);
  FilterStage st;
  st.profile.center_nm = positive(f, "center_nm", st.profile.center_nm);
  st.profile.fwhm_pm = positive(f, "fwhm_pm", st.profile.fwhm_pm);
  const std::string shape = f.string("shape", "gaussian");
  try {
    st.profile.shape = parse_line_shape(shape);
  } catch (const std::exception&) {
    throw ConfigError(f.at("shape"), "expected gaussian, lorentzian or rectangular");
  }
  const std::string mode = f.string("mode", "transmit_band");
  check(mode == "transmit_band" || mode == "reflect_band", f.at("mode"), "expected transmit_band or reflect_band");
  st.mode = mode == "transmit_band" ? FilterMode::transmit_band : FilterMode::reflect_band;
  st.rejection_db = non_negative(f, "rejection_db", st.rejection_db);
  st.insertion_loss_db = non_negative(f, "insertion_loss_db", st.insertion_loss_db);
  f.finish();
  return st;
}

inline FilterChain parse_chain(const json& j, const std::string& path) {
  Fields f(j, path);
  FilterChain chain;
  const json& stages = f.raw("stages");
  check(stages.is_array(), f.at("stages"), "expected an array");
  for (std::size_t i = 0; i < stages.size(); ++i)
    chain.stages.push_back(parse_stage(stages[i], f.at("stages") + "[" + std::to_string(i) + "]"));
  f.finish();
  return chain;
}

inline DetectorConfig parse_detector(const json& j, const std::string& path) {
  Fields f(j, path);
  DetectorConfig d;
  const std::string kind = f.string("kind");
  try {
    d.kind = parse_detector_kind(kind);
  } catch (const std::exception&) {
    throw ConfigError(f.at("kind"), "expected upconversion, sspd, ingaas_gated or tes");
  }
  d.efficiency = probability(f, "efficiency", d.efficiency);
  d.dark_rate_hz = non_negative(f, "dark_rate_hz", d.dark_rate_hz);
  d.jitter_fwhm_ps = non_negative(f, "jitter_fwhm_ps", d.jitter_fwhm_ps);
  d.dead_time_ns = non_negative(f, "dead_time_ns", d.dead_time_ns);
  d.gated = f.boolean("gated", d.gated);
  f.finish();
  return d;
}

template <class T, class Parse>
std::map<std::string, T> parse_named(Fields& parent, const std::string& key, Parse parse) {
  std::map<std::string, T> out;
  const json& j = parent.raw(key);
  check(j.is_object(), parent.at(key), "expected an object keyed by id");
  for (const auto& item : j.items()) out.emplace(item.key(), parse(item.value(), parent.at(key) + "." + item.key()));
  return out;
}

inline std::string reference(Fields& f, const std::string& key, const std::set<std::string>& ids, bool optional = false) {
  if (optional && !f.has(key)) {
    f.skip(key);
    return {};
  }
  const std::string id = f.string(key);
  check(ids.count(id) > 0, f.at(key), "unknown id '" + id + "'");
  return id;
}

template <class M>
std::set<std::string> keys(const M& m) {
  std::set<std::string> out;
  for (const auto& [k, v] : m) out.insert(k);
  return out;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using namespace detail;
  Fields f(j, "");
  ExperimentConfig c;
  const json& version = f.raw("schema_version");
  check(version.is_number_integer() && version.get<int>() == pairsim::schema_version, "schema_version",
        "unsupported schema version (expected " + std::to_string(pairsim::schema_version) + ")");
  c.seed = f.count("seed");
  c.threads = static_cast<unsigned>(f.count("threads", 0));
  c.output_dir = f.string("output_dir", c.output_dir);

  c.sources = parse_named<SourceConfig>(f, "sources", parse_source);
  c.filters = f.has("filters") ? parse_named<FilterChain>(f, "filters", parse_chain) : (f.skip("filters"), std::map<std::string, FilterChain>{});
  c.detectors = f.has("detectors") ? parse_named<DetectorConfig>(f, "detectors", parse_detector) : (f.skip("detectors"), std::map<std::string, DetectorConfig>{});
  const auto source_ids = keys(c.sources), filter_ids = keys(c.filters), detector_ids = keys(c.detectors);

  if (f.has("histogram")) {
    Fields h(f.raw("histogram"), "histogram");
    c.histogram.bin_width_ps = positive(h, "bin_width_ps", c.histogram.bin_width_ps);
    c.histogram.min_ps = h.number("min_ps", c.histogram.min_ps);
    c.histogram.max_ps = h.number("max_ps", c.histogram.max_ps);
    check(c.histogram.max_ps > c.histogram.min_ps, "histogram.max_ps", "must exceed min_ps");
    h.finish();
  } else {
    f.skip("histogram");
  }

  if (f.has("radiometry")) {
    Fields r(f.raw("radiometry"), "radiometry");
    RadiometrySettings s;
    s.source = reference(r, "source", source_ids);
    s.filter_fwhm_pm = positive(r, "filter_fwhm_pm", s.filter_fwhm_pm);
    check(s.filter_fwhm_pm * 1e-3 <= c.sources.at(s.source).spdc_bandwidth_fwhm_nm, r.at("filter_fwhm_pm"),
          "filter is wider than the SPDC band");
    s.per_photon_transmission = probability(r, "per_photon_transmission", s.per_photon_transmission);
    const std::string mode = r.string("pair_transmission_mode", "heralded");
    check(mode == "heralded" || mode == "pair", r.at("pair_transmission_mode"), "expected heralded or pair");
    s.mode = mode == "heralded" ? PairTransmissionMode::heralded : PairTransmissionMode::pair;
    s.quoted_mean_photons_per_mode = r.optional_number("quoted_mean_photons_per_mode");
    s.quoted_spectral_brightness = r.optional_number("quoted_spectral_brightness");
    r.finish();
    c.radiometry = s;
  } else {
    f.skip("radiometry");
  }

  if (f.has("coincidence")) {
    Fields co(f.raw("coincidence"), "coincidence");
    const json& runs = co.raw("runs");
    check(runs.is_array(), co.at("runs"), "expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      Fields r(runs[i], "coincidence.runs[" + std::to_string(i) + "]");
      CoincidenceRun run;
      run.name = r.string("name");
      check(!run.name.empty() && names.insert(run.name).second, r.at("name"), "must be a unique non-empty name");
      run.source = reference(r, "source", source_ids);
      run.signal_filter = reference(r, "signal_filter", filter_ids, true);
      run.idler_filter = reference(r, "idler_filter", filter_ids, true);
      run.pump_power_mw = r.optional_number("pump_power_mw");
      check(!run.pump_power_mw || *run.pump_power_mw >= 0, r.at("pump_power_mw"), "must be non-negative");
      run.signal_transmission = probability(r, "signal_transmission", run.signal_transmission);
      run.idler_transmission = probability(r, "idler_transmission", run.idler_transmission);
      run.start_detector = reference(r, "start_detector", detector_ids);
      run.stop_detector = reference(r, "stop_detector", detector_ids);
      run.duration_s = positive(r, "duration_s", run.duration_s);
      run.dump_events = r.boolean("dump_events", false);
      r.finish();
      c.coincidence.push_back(std::move(run));
    }
    co.finish();
  } else {
    f.skip("coincidence");
  }

  if (f.has("hom")) {
    Fields h(f.raw("hom"), "hom");
    HomSettings s;
    auto arm = [&](const std::string& key) {
      Fields a(h.raw(key), h.at(key));
      HomArmRef out;
      out.source = reference(a, "source", source_ids);
      out.signal_filter = reference(a, "signal_filter", filter_ids);
      out.idler_filter = reference(a, "idler_filter", filter_ids, true);
      out.signal_transmission = probability(a, "signal_transmission", out.signal_transmission);
      out.idler_transmission = probability(a, "idler_transmission", out.idler_transmission);
      a.finish();
      return out;
    };
    s.arm_a = arm("source_a");
    s.arm_b = arm("source_b");
    s.mean_photons_per_mode = h.optional_number("mean_photons_per_mode");
    check(!s.mean_photons_per_mode || *s.mean_photons_per_mode >= 0, h.at("mean_photons_per_mode"), "must be non-negative");
    s.bs_reflectivity = probability(h, "bs_reflectivity", s.bs_reflectivity);
    auto pair_of = [&](const std::string& key, std::string (&out)[2]) {
      const json& v = h.raw(key);
      check(v.is_array() && v.size() == 2, h.at(key), "expected two detector ids");
      for (std::size_t i = 0; i < 2; ++i) {
        const std::string p = h.at(key) + "[" + std::to_string(i) + "]";
        check(v[i].is_string(), p, "expected a detector id");
        out[i] = v[i].get<std::string>();
        check(detector_ids.count(out[i]) > 0, p, "unknown id '" + out[i] + "'");
      }
    };
    pair_of("signal_detectors", s.signal_detectors);
    pair_of("herald_detectors", s.herald_detectors);
    s.coincidence_range_ps = positive(h, "coincidence_range_ps", s.coincidence_range_ps);
    s.bin_width_ps = positive(h, "bin_width_ps", s.bin_width_ps);
    s.herald_window_ps = positive(h, "herald_window_ps", s.herald_window_ps);
    s.wing_start_ps = positive(h, "wing_start_ps", s.wing_start_ps);
    check(s.wing_start_ps < s.coincidence_range_ps, h.at("wing_start_ps"), "must lie inside the coincidence range");
    s.min_wing_events = h.count("min_wing_events", s.min_wing_events);
    s.track_unheralded = h.boolean("track_unheralded", s.track_unheralded);
    const json& runs = h.raw("runs");
    check(runs.is_array() && !runs.empty(), h.at("runs"), "expected a non-empty array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      Fields r(runs[i], "hom.runs[" + std::to_string(i) + "]");
      HomRun run;
      run.name = r.string("name");
      check(!run.name.empty() && names.insert(run.name).second, r.at("name"), "must be a unique non-empty name");
      run.duration_s = positive(r, "duration_s", run.duration_s);
      run.efficiency_boost = positive(r, "efficiency_boost", run.efficiency_boost);
      run.mean_photons_per_mode = r.optional_number("mean_photons_per_mode");
      check(!run.mean_photons_per_mode || *run.mean_photons_per_mode >= 0, r.at("mean_photons_per_mode"),
            "must be non-negative");
      run.fit = r.boolean("fit", true);
      r.finish();
      s.runs.push_back(run);
    }
    h.finish();
    c.hom = std::move(s);
  } else {
    f.skip("hom");
  }

  if (f.has("table")) {
    Fields t(f.raw("table"), "table");
    const json& entries = t.raw("entries");
    check(entries.is_array(), t.at("entries"), "expected an array");
    check(!entries.empty(), t.at("entries"), "at least one entry is required");
    c.table.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Fields e(entries[i], "table.entries[" + std::to_string(i) + "]");
      TableEntry row;
      row.label = e.string("label");
      check(!row.label.empty(), e.at("label"), "must not be empty");
      row.reference = e.string("reference", "");
      row.mean_photons_per_mode = e.string("mean_photons_per_mode");
      row.bandwidth_pm = e.string("bandwidth_pm");
      row.transmission_percent = e.string("transmission_percent");
      row.spectral_brightness = e.string("spectral_brightness");
      e.finish();
      c.table.push_back(std::move(row));
    }
    t.finish();
  } else {
    f.skip("table");
  }

  f.finish();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = fmt::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("", std::string("cannot read config: ") + e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

/// Assembles the simulator configuration for one HOM run.
inline HomConfig hom_config(const ExperimentConfig& c, const HomRun& run) {
  if (!c.hom) throw ConfigError("hom", "section missing");
  const HomSettings& s = *c.hom;
  HomConfig h;
  auto arm = [&](const HomArmRef& ref) {
    HomArm a;
    a.source = c.source(ref.source);
    a.signal_chain = c.filter(ref.signal_filter);
    a.idler_chain = c.filter(ref.idler_filter);
    a.signal_transmission = ref.signal_transmission;
    a.idler_transmission = ref.idler_transmission;
    return a;
  };
  h.source_a = arm(s.arm_a);
  h.source_b = arm(s.arm_b);
  h.mean_photons_per_mode = run.mean_photons_per_mode ? run.mean_photons_per_mode : s.mean_photons_per_mode;
  h.bs_reflectivity = s.bs_reflectivity;
  for (int i = 0; i < 2; ++i) {
    h.signal_detectors[i] = c.detector(s.signal_detectors[i]);
    h.herald_detectors[i] = c.detector(s.herald_detectors[i]);
  }
  h.coincidence_range_ps = s.coincidence_range_ps;
  h.bin_width_ps = s.bin_width_ps;
  h.herald_window_ps = s.herald_window_ps;
  h.efficiency_boost = run.efficiency_boost;
  h.wing_start_ps = s.wing_start_ps;
  h.min_wing_events = s.min_wing_events;
  h.track_unheralded = s.track_unheralded;
  return h;
}

} // namespace pairsim
