#pragma once

// Hong-Ou-Mandel interference between two free-running CW pair sources with
// four-fold postselection.
//
// Each source sends its signal photon to one input of a beamsplitter and its
// idler to a herald detector. Two photons from different sources meeting at
// the beamsplitter leave through different ports with probability
// r^2 + t^2 - 2 r t |<a|b>|^2, the overlap taken at their true relative
// delay. A trial is demoted to distinguishable statistics whenever either
// source created another pair within the heralded-photon coherence time.
//
// Only events that can end up in a four-fold are created: pairs whose signal
// and idler would both be detected, plus unheralded signals inside the
// windows around herald dark counts. Clicks from the much larger untracked
// population enter through a mean-field dead-time factor (the live fraction
// 1 / (1 + r d) of a non-paralyzable detector).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairsim/coincidence.hpp"
#include "pairsim/constants.hpp"
#include "pairsim/engine.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/fit.hpp"
#include "pairsim/spectra.hpp"

namespace pairsim {

// ---------------------------------------------------------------------------
// Wave-packet overlap

/// Unit-normalized spectral intensity sampled on a uniform frequency grid.
/// Frequencies are offsets in 1/ps from a shared reference.
struct SpectralDensity {
  double start = 0; // 1/ps
  double step = 0;  // 1/ps
  std::vector<double> intensity;
};

namespace detail {
inline double frequency_per_ps(double wavelength_nm) {
  return constants::speed_of_light / (wavelength_nm * constants::nm) * constants::ps;
}
inline double bandwidth_per_ps(double center_nm, double fwhm_nm) {
  return frequency_per_ps(center_nm) * fwhm_nm / center_nm;
}

struct FrequencyGrid {
  double reference = 0; // absolute frequency, 1/ps
  double start = 0;
  double step = 0;
  std::size_t points = 0;
  double at(std::size_t i) const { return start + step * static_cast<double>(i); }
};

inline FrequencyGrid shared_grid(double ref, double lo_a, double hi_a, double lo_b, double hi_b,
                                 double finest_fwhm) {
  const double lo = std::min(lo_a, lo_b), hi = std::max(hi_a, hi_b);
  // 2001 points over +-5 FWHM of the narrowest line, extended if needed.
  const double step = 10.0 * finest_fwhm / 2000.0;
  const auto n = static_cast<std::size_t>(std::min(std::ceil((hi - lo) / step) + 1.0, 400001.0));
  return {ref, lo - ref, (hi - lo) / static_cast<double>(n - 1), n};
}

inline double overlap_on_grid(const std::vector<double>& ia, const std::vector<double>& ib,
                              const FrequencyGrid& g, double delay_ps) {
  std::complex<double> sum = 0.0;
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < g.points; ++i) {
    const double w = (i == 0 || i + 1 == g.points) ? 0.5 : 1.0;
    na += w * ia[i];
    nb += w * ib[i];
    const double phase = 2.0 * constants::pi * g.at(i) * delay_ps;
    sum += w * std::sqrt(ia[i] * ib[i]) * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  if (!(na > 0) || !(nb > 0)) return 0.0;
  return std::clamp(std::norm(sum) / (na * nb), 0.0, 1.0);
}
} // namespace detail

/// |int a*(nu) b(nu) exp(2 pi i nu t) dnu|^2 for unit-normalized amplitudes.
/// Line shapes are laid out in frequency with the FWHM converted at the
/// line center.
inline double wavepacket_overlap(const SpectralProfile& a, const SpectralProfile& b, double delay_ps) {
  validate(a);
  validate(b);
  const double fa = detail::frequency_per_ps(a.center_nm), fb = detail::frequency_per_ps(b.center_nm);
  const double wa = detail::bandwidth_per_ps(a.center_nm, a.fwhm_nm());
  const double wb = detail::bandwidth_per_ps(b.center_nm, b.fwhm_nm());
  const auto g = detail::shared_grid(fa, fa - 5 * wa, fa + 5 * wa, fb - 5 * wb, fb + 5 * wb, std::min(wa, wb));
  std::vector<double> ia(g.points), ib(g.points);
  for (std::size_t i = 0; i < g.points; ++i) {
    const double nu = g.reference + g.at(i);
    ia[i] = line_shape_value(a.shape, nu - fa, wa);
    ib[i] = line_shape_value(b.shape, nu - fb, wb);
  }
  return detail::overlap_on_grid(ia, ib, g, delay_ps);
}

/// Overlap as a function of delay for two filtered-source spectra, tabulated
/// once on a delay grid and interpolated linearly.
class OverlapTable {
public:
  OverlapTable(const FilterChain& signal_a, const FilterChain& idler_a, double pump_a_nm,
               const FilterChain& signal_b, const FilterChain& idler_b, double pump_b_nm,
               double max_delay_ps, std::size_t delay_points = 1501) {
    const auto* ca = signal_a.narrowest();
    const auto* cb = signal_b.narrowest();
    if (!ca || !cb) throw DomainError("interfering sources need a filtered signal arm");
    const double fa = detail::frequency_per_ps(ca->profile.center_nm);
    const double fb = detail::frequency_per_ps(cb->profile.center_nm);
    const double wa = detail::bandwidth_per_ps(ca->profile.center_nm, ca->profile.fwhm_nm());
    const double wb = detail::bandwidth_per_ps(cb->profile.center_nm, cb->profile.fwhm_nm());
    const auto g = detail::shared_grid(fa, fa - 5 * wa, fa + 5 * wa, fb - 5 * wb, fb + 5 * wb, std::min(wa, wb));
    std::vector<double> ia(g.points), ib(g.points);
    for (std::size_t i = 0; i < g.points; ++i) {
      const double lambda = constants::speed_of_light * constants::ps / (g.reference + g.at(i)) / constants::nm;
      ia[i] = joint_density(signal_a, idler_a, pump_a_nm, lambda);
      ib[i] = joint_density(signal_b, idler_b, pump_b_nm, lambda);
    }
    max_delay_ = max_delay_ps;
    step_ = 2.0 * max_delay_ps / static_cast<double>(delay_points - 1);
    values_.resize(delay_points);
    for (std::size_t k = 0; k < delay_points; ++k)
      values_[k] = detail::overlap_on_grid(ia, ib, g, -max_delay_ps + step_ * static_cast<double>(k));
  }

  double operator()(double delay_ps) const {
    if (!(std::abs(delay_ps) < max_delay_)) return 0.0;
    const double x = (delay_ps + max_delay_) / step_;
    const auto i = std::min(static_cast<std::size_t>(x), values_.size() - 2);
    const double f = x - static_cast<double>(i);
    return values_[i] * (1.0 - f) + values_[i + 1] * f;
  }

  double max_delay_ps() const { return max_delay_; }

private:
  static double joint_density(const FilterChain& s, const FilterChain& i, double pump_nm, double lambda) {
    if (!(lambda > pump_nm)) return 0.0;
    return transmission(s, lambda) * transmission(i, idler_wavelength(pump_nm, lambda));
  }

  double max_delay_ = 0;
  double step_ = 1;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Beamsplitter

enum class BsOutcome { same_port, different_ports };

struct BsRouting {
  BsOutcome outcome = BsOutcome::different_ports;
  int port_a = 0; // 0 = output c, 1 = output d
  int port_b = 1;
};

/// Two photons entering opposite inputs. Distinguishable photons reproduce
/// the classical r^2 + t^2 coincidence probability; perfect overlap on a
/// balanced splitter always bunches.
inline BsRouting beamsplit(RandomStream& rng, double overlap, double reflectivity = 0.5) {
  if (!is_probability(overlap)) throw DomainError("overlap must lie in [0,1]");
  if (!is_probability(reflectivity)) throw DomainError("reflectivity must lie in [0,1]");
  const double r = reflectivity, t = 1.0 - reflectivity;
  const double p_diff = std::clamp(r * r + t * t - 2.0 * r * t * overlap, 0.0, 1.0);
  BsRouting out;
  if (rng.uniform() < p_diff) {
    out.outcome = BsOutcome::different_ports;
    const bool straight = rng.uniform() * (r * r + t * t) < r * r;
    out.port_a = straight ? 0 : 1;
    out.port_b = straight ? 1 : 0;
  } else {
    out.outcome = BsOutcome::same_port;
    const int port = rng.uniform() < 0.5 ? 0 : 1;
    out.port_a = out.port_b = port;
  }
  return out;
}

/// A lone photon: from input a it reaches output c with probability r, from
/// input b with probability 1 - r.
inline int route_single(RandomStream& rng, bool from_input_a, double reflectivity = 0.5) {
  const double to_c = from_input_a ? reflectivity : 1.0 - reflectivity;
  return rng.uniform() < to_c ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Experiment configuration and results

struct HomArm {
  SourceConfig source;
  FilterChain signal_chain;
  FilterChain idler_chain;
  double signal_transmission = 0.13;
  double idler_transmission = 0.13;
};

struct HomConfig {
  HomArm source_a;
  HomArm source_b;
  /// When set, each source's pair rate is <n> / tau_c instead of the
  /// radiometric rate from its pump.
  std::optional<double> mean_photons_per_mode;
  double bs_reflectivity = 0.5;
  DetectorConfig signal_detectors[2];
  DetectorConfig herald_detectors[2];
  double coincidence_range_ps = 10000.0;
  double bin_width_ps = 45.5;
  double herald_window_ps = 1000.0;
  double efficiency_boost = 1.0;
  double wing_start_ps = 3000.0;
  std::uint64_t min_wing_events = 100;
  bool track_unheralded = false;
  double chunk_ps = ChunkPlan::default_chunk_ps;
};

inline void validate(const HomConfig& c) {
  for (const HomArm* arm : {&c.source_a, &c.source_b}) {
    validate(arm->source);
    validate(arm->signal_chain);
    validate(arm->idler_chain);
    if (!is_probability(arm->signal_transmission) || !is_probability(arm->idler_transmission))
      throw DomainError("arm transmissions must lie in [0,1]");
  }
  if (!is_probability(c.bs_reflectivity)) throw DomainError("bs_reflectivity must lie in [0,1]");
  if (!(c.herald_window_ps > 0)) throw DomainError("herald_window must be positive");
  if (!(c.coincidence_range_ps > 0)) throw DomainError("coincidence range must be positive");
  if (!(c.bin_width_ps > 0)) throw DomainError("bin width must be positive");
  if (!(c.efficiency_boost > 0)) throw DomainError("efficiency_boost must be positive");
  if (c.mean_photons_per_mode && !(*c.mean_photons_per_mode >= 0))
    throw DomainError("mean_photons_per_mode must be non-negative");
  for (const auto& d : c.signal_detectors) validate(d);
  for (const auto& d : c.herald_detectors) validate(d);
}

struct DipProfile {
  double center_ps = 0;
  double visibility = 0;
  double visibility_stderr = 0;
  double width_fwhm_ps = 0;
  double width_stderr_ps = 0;
  double r0 = 0; // wing level, counts per bin
  double chi2_per_dof = 0;
};

struct DipResult {
  CoincidenceHistogram histogram;  // four-fold counts vs tau = t_d - t_c
  CoincidenceHistogram twofold;    // all tracked c/d coincidences
  double visibility = 0;           // (v_max - v_min) / v_max, clamped to [0,1]
  double visibility_fit = 0;       // unclamped fit value
  double visibility_stderr = 0;
  double v_max = 0;                // counts per bin
  double v_min = 0;
  double dip_width_fwhm_ps = 0;
  double dip_center_ps = 0;
  double fourfold_rate_per_hour = 0;
  std::uint64_t fourfold_events = 0;
  std::uint64_t wing_events = 0;
  double duration_s = 0;
  double pair_rate_a_hz = 0;
  double pair_rate_b_hz = 0;
  double mean_photons_per_mode_a = 0;
  double mean_photons_per_mode_b = 0;
  double photon_coherence_ps = 0;
  double contamination_window_ps = 0;
  std::uint64_t trials = 0;
  std::uint64_t contaminated_trials = 0;
  bool fitted = false;
};

/// Fits R(tau) = R0 (1 - V exp(-4 ln2 (tau - tau0)^2 / w^2)) to the full bins.
inline DipProfile dip_profile(const CoincidenceHistogram& h, double wing_start_ps = 3000.0) {
  std::vector<std::size_t> idx;
  std::vector<double> y;
  double wing_sum = 0, center_sum = 0;
  std::size_t wing_n = 0, center_n = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h.bin_low(i) + h.bin_width_ps > h.max_ps + 1e-9) continue; // partial trailing bin
    idx.push_back(i);
    y.push_back(static_cast<double>(h.counts[i]));
    const double c = h.bin_center(i);
    if (std::abs(c) >= wing_start_ps) {
      wing_sum += y.back();
      ++wing_n;
    } else if (std::abs(c) < 150.0) {
      center_sum += y.back();
      ++center_n;
    }
  }
  if (wing_n == 0 || !(wing_sum > 0)) throw StatisticsError("no four-fold events in the dip wings");
  const double r0 = wing_sum / static_cast<double>(wing_n);
  const double v0 = center_n ? std::clamp(1.0 - center_sum / static_cast<double>(center_n) / r0, 0.05, 0.99) : 0.5;

  auto model = [&](const Eigen::VectorXd& p, std::size_t k) {
    const double x = h.bin_center(idx[k]) - p[0];
    const double w = std::abs(p[2]);
    return p[3] * (1.0 - p[1] * std::exp(-4.0 * constants::ln2 * x * x / (w * w)));
  };
  Eigen::VectorXd p0(4);
  p0 << 0.0, v0, 600.0, r0;
  const auto res = fit::poisson_fit(model, y, p0);
  if (!res.converged || !res.params.allFinite()) {
    std::ostringstream msg;
    msg << "dip fit did not converge (chi2 " << res.chi2 << ", dof " << res.dof << ")";
    throw StatisticsError(msg.str());
  }
  DipProfile d;
  d.center_ps = res.params[0];
  d.visibility = res.params[1];
  d.visibility_stderr = res.stderrs[1];
  d.width_fwhm_ps = std::abs(res.params[2]);
  d.width_stderr_ps = res.stderrs[2];
  d.r0 = res.params[3];
  d.chi2_per_dof = res.dof > 0 ? res.chi2 / res.dof : 0.0;
  return d;
}

inline DipProfile dip_profile(const DipResult& r, double wing_start_ps = 3000.0) {
  return dip_profile(r.histogram, wing_start_ps);
}

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

struct BsPhoton {
  double arrival_ps;    // at the beamsplitter, wave-packet offset included
  double emission_ps;
  std::uint64_t pair_id;
  std::uint8_t source;  // 0 = a, 1 = b
  bool heralded;        // partner idler produced a herald candidate
  double herald_ps;     // herald click time when heralded
};

struct SignalClick {
  double t;
  int source;           // -1 for a dark count
  std::uint64_t pair_id;
  bool partner_ok = false;
  bool dark_ok[2] = {false, false};
};

struct ChunkData {
  std::vector<SignalClick> clicks[2];      // per output port, unsorted, pre dead time
  std::vector<std::pair<double, int>> heralds[2]; // (time, source or -1 dark) pre dead time
  std::vector<std::pair<double, std::uint64_t>> herald_partner[2];
  std::uint64_t trials = 0;
  std::uint64_t contaminated = 0;
};

struct ArmModel {
  PairSource source;
  double pair_rate_hz;
  double keep_signal;  // T_s * eta_max * live
  double keep_idler;   // T_i * eta_h * live (before spectral acceptance)
  double mean_acceptance;
  double tracked_fraction;
  double herald_jitter_sigma;
};

} // namespace detail

class HomSimulator {
public:
  explicit HomSimulator(HomConfig config) : cfg_(std::move(config)) {
    validate(cfg_);
    for (int p = 0; p < 2; ++p) {
      sig_[p] = cfg_.signal_detectors[p];
      sig_[p].efficiency = std::min(1.0, sig_[p].efficiency * cfg_.efficiency_boost);
      her_[p] = cfg_.herald_detectors[p];
      her_[p].efficiency = std::min(1.0, her_[p].efficiency * cfg_.efficiency_boost);
    }
    const HomArm* arms[2] = {&cfg_.source_a, &cfg_.source_b};
    for (int s = 0; s < 2; ++s) {
      PairSource src(static_cast<std::uint32_t>(s), arms[s]->source, arms[s]->signal_chain, arms[s]->idler_chain);
      const auto* core = arms[s]->signal_chain.narrowest();
      if (!core) throw DomainError("HOM sources need a filtered signal arm");
      const double tau_mode = coherence_time_ps(core->profile.center_nm, core->profile.fwhm_nm());
      if (cfg_.mean_photons_per_mode) src.set_pair_rate_hz(*cfg_.mean_photons_per_mode / (tau_mode * constants::ps));
      rates_[s] = src.pair_rate_hz();
      n_[s] = pairsim::mean_photons_per_mode(rates_[s], tau_mode);
      acc_[s] = src.sampler().mean_acceptance();
      packets_.emplace_back(src.packet_shape(), src.photon_coherence_ps());
      sources_.push_back(std::move(src));
    }

    // Mean-field live fractions from total click rates.
    const double r = cfg_.bs_reflectivity;
    for (int p = 0; p < 2; ++p) {
      double rate = sig_[p].dark_rate_hz;
      for (int s = 0; s < 2; ++s) {
        const double to_port = (s == 0) == (p == 0) ? r : 1.0 - r;
        rate += rates_[s] * arms[s]->signal_transmission * to_port * sig_[p].efficiency;
      }
      sig_live_[p] = 1.0 / (1.0 + rate * sig_[p].dead_time_ps() * constants::ps);
    }
    for (int s = 0; s < 2; ++s) {
      const double rate = her_[s].dark_rate_hz + rates_[s] * arms[s]->idler_transmission * acc_[s] * her_[s].efficiency;
      her_live_[s] = 1.0 / (1.0 + rate * her_[s].dead_time_ps() * constants::ps);
    }
    eta_max_ = std::max(sig_[0].efficiency * sig_live_[0], sig_[1].efficiency * sig_live_[1]);
    for (int s = 0; s < 2; ++s) {
      keep_signal_[s] = arms[s]->signal_transmission * eta_max_;
      keep_idler_[s] = arms[s]->idler_transmission * her_[s].efficiency * her_live_[s];
      tracked_[s] = cfg_.track_unheralded ? keep_signal_[s] : keep_signal_[s] * keep_idler_[s] * acc_[s];
    }
    contamination_window_ps_ = std::max(sources_[0].pair_coherence_ps(), sources_[1].pair_coherence_ps());
    const double overlap_range = 12.0 * std::max(sources_[0].pair_coherence_ps(), sources_[1].pair_coherence_ps());
    overlap_ = std::make_unique<OverlapTable>(arms[0]->signal_chain, arms[0]->idler_chain,
                                              arms[0]->source.pump.wavelength_nm, arms[1]->signal_chain,
                                              arms[1]->idler_chain, arms[1]->source.pump.wavelength_nm,
                                              overlap_range);
    interaction_window_ps_ = overlap_range;
  }

  const HomConfig& config() const { return cfg_; }
  double pair_rate_hz(int s) const { return rates_[s]; }
  double mean_photons_per_mode(int s) const { return n_[s]; }
  double overlap(double delay_ps) const { return (*overlap_)(delay_ps); }
  double contamination_window_ps() const { return contamination_window_ps_; }

  /// Expected number of created events for a run, for the CLI's size guard.
  double expected_events(double duration_ps) const {
    double rate = 0;
    for (int s = 0; s < 2; ++s) rate += rates_[s] * tracked_[s] * 2.0 + her_[s].dark_rate_hz;
    return rate * duration_ps * constants::ps;
  }

  DipResult run(const RandomStream& rng, double duration_ps, unsigned threads = 1) const {
    if (!(duration_ps > 0)) throw DomainError("duration must be positive");
    const ChunkPlan plan{duration_ps, cfg_.chunk_ps};
    const double range = cfg_.coincidence_range_ps;

    DipResult res;
    res.histogram = CoincidenceHistogram::empty(cfg_.bin_width_ps, -range, range);
    res.twofold = res.histogram;
    res.duration_s = duration_ps * constants::ps;
    res.pair_rate_a_hz = rates_[0];
    res.pair_rate_b_hz = rates_[1];
    res.mean_photons_per_mode_a = n_[0];
    res.mean_photons_per_mode_b = n_[1];
    res.photon_coherence_ps = std::max(sources_[0].photon_coherence_ps(), sources_[1].photon_coherence_ps());
    res.contamination_window_ps = contamination_window_ps_;

    double last_sig[2] = {-1e300, -1e300};
    double last_her[2] = {-1e300, -1e300};
    std::vector<detail::SignalClick> tail[2];
    std::vector<double> dark_tail[2];

    const std::size_t batch = std::max<std::size_t>(1, threads) * 4;
    for (std::size_t first = 0; first < plan.count(); first += batch) {
      const std::size_t n = std::min(batch, plan.count() - first);
      auto chunks = parallel_map(n, threads, [&](std::size_t j) {
        const std::size_t k = first + j;
        return generate_chunk(rng.derive(k), plan.begin(k), plan.end(k));
      });
      for (auto& chunk : chunks) {
        res.trials += chunk.trials;
        res.contaminated_trials += chunk.contaminated;
        finalize_chunk(chunk, last_sig, last_her, tail, dark_tail, res);
      }
    }

    for (auto c : res.histogram.counts) res.fourfold_events += c;
    for (std::size_t i = 0; i < res.histogram.size(); ++i)
      if (std::abs(res.histogram.bin_center(i)) >= cfg_.wing_start_ps) res.wing_events += res.histogram.counts[i];
    res.fourfold_rate_per_hour = static_cast<double>(res.fourfold_events) / res.duration_s * 3600.0;
    return res;
  }

  /// run() followed by the dip fit; throws StatisticsError on thin wings.
  DipResult run_and_fit(const RandomStream& rng, double duration_ps, unsigned threads = 1) const {
    DipResult res = run(rng, duration_ps, threads);
    if (res.wing_events < cfg_.min_wing_events) {
      std::ostringstream msg;
      msg << "only " << res.wing_events << " four-fold events in the wings (need " << cfg_.min_wing_events
          << "); increase the duration or efficiency_boost";
      throw StatisticsError(msg.str());
    }
    const auto d = dip_profile(res.histogram, cfg_.wing_start_ps);
    res.visibility_fit = d.visibility;
    res.visibility = std::clamp(d.visibility, 0.0, 1.0);
    res.visibility_stderr = d.visibility_stderr;
    res.v_max = d.r0;
    res.v_min = d.r0 * (1.0 - res.visibility);
    res.dip_width_fwhm_ps = d.width_fwhm_ps;
    res.dip_center_ps = d.center_ps;
    res.fitted = true;
    return res;
  }

private:
  detail::ChunkData generate_chunk(RandomStream rng, double t0, double t1) const {
    detail::ChunkData out;
    std::vector<detail::BsPhoton> photons;
    const double w = cfg_.herald_window_ps;

    for (int s = 0; s < 2; ++s) {
      RandomStream r = rng.derive(static_cast<std::uint64_t>(s));
      const auto& src = sources_[static_cast<std::size_t>(s)];
      const WavePacketSampler& packet = packets_[static_cast<std::size_t>(s)];
      const double herald_sigma = her_[s].jitter_fwhm_ps / constants::fwhm_per_sigma;
      const double thin = cfg_.track_unheralded ? keep_signal_[s] : keep_signal_[s] * keep_idler_[s];
      const double rate_per_ps = rates_[s] * thin * constants::ps;
      std::uint64_t local = 0;
      if (rate_per_ps > 0) {
        for (double t = t0 + r.exponential(rate_per_ps); t < t1; t += r.exponential(rate_per_ps), ++local) {
          const auto wl = src.sampler()(r);
          bool idler_click;
          if (cfg_.track_unheralded) {
            idler_click = r.bernoulli(keep_idler_[s] * wl.acceptance);
          } else {
            if (!r.bernoulli(wl.acceptance)) continue;
            idler_click = true;
          }
          detail::BsPhoton ph{t + packet(r), t, local, static_cast<std::uint8_t>(s), idler_click, 0.0};
          if (idler_click) {
            ph.herald_ps = t + packet(r) + r.normal(0.0, herald_sigma);
            out.herald_partner[s].emplace_back(ph.herald_ps, local);
          }
          photons.push_back(ph);
        }
      }

      // Herald dark counts, and unheralded signals that a dark herald click
      // could complete (only needed when those signals are not tracked).
      RandomStream rd = rng.derive(10 + static_cast<std::uint64_t>(s));
      std::vector<double> darks;
      const double dark_per_ps = her_[s].dark_rate_hz * constants::ps;
      if (dark_per_ps > 0)
        for (double t = t0 + rd.exponential(dark_per_ps); t < t1; t += rd.exponential(dark_per_ps)) darks.push_back(t);
      for (double t : darks) out.heralds[s].emplace_back(t, -1);
      for (const auto& [t, id] : out.herald_partner[s]) out.heralds[s].emplace_back(t, s);

      if (!cfg_.track_unheralded && !darks.empty()) {
        const double margin = w + 8.0 * src.photon_coherence_ps() + 8.0 * sig_[0].jitter_fwhm_ps + 8.0 * sig_[1].jitter_fwhm_ps;
        const double window_rate = rates_[s] * keep_signal_[s] * constants::ps;
        double covered = t0;
        for (double td : darks) {
          const double lo = std::max(covered, std::max(t0, td - margin));
          const double hi = std::min(t1, td + margin);
          if (hi <= lo || !(window_rate > 0)) continue;
          for (double t = lo + rd.exponential(window_rate); t < hi; t += rd.exponential(window_rate)) {
            const auto wl = src.sampler()(rd);
            // Keep only signals whose own idler would not herald.
            if (rd.bernoulli(keep_idler_[s] * wl.acceptance)) continue;
            photons.push_back({t + packet(rd), t, (std::uint64_t{1} << 62) | local++, static_cast<std::uint8_t>(s), false, 0.0});
          }
          covered = hi;
        }
      }
    }

    // Beamsplitter.
    std::sort(photons.begin(), photons.end(),
              [](const detail::BsPhoton& a, const detail::BsPhoton& b) { return a.arrival_ps < b.arrival_ps; });
    RandomStream rb = rng.derive(20);
    const double untracked_pairs = (rates_[0] * (1.0 - tracked_[0]) + rates_[1] * (1.0 - tracked_[1])) *
                                   contamination_window_ps_ * constants::ps;
    const double p_clean = std::exp(-untracked_pairs);
    std::vector<int> port(photons.size(), 0);
    for (std::size_t i = 0; i < photons.size();) {
      std::size_t j = i + 1;
      while (j < photons.size() && photons[j].arrival_ps - photons[j - 1].arrival_ps < interaction_window_ps_) ++j;
      if (j - i == 2 && photons[i].source != photons[i + 1].source) {
        const auto& pa = photons[i].source == 0 ? photons[i] : photons[i + 1];
        const auto& pb = photons[i].source == 0 ? photons[i + 1] : photons[i];
        ++out.trials;
        const bool clean = rb.uniform() < p_clean;
        if (!clean) ++out.contaminated;
        const double ov = clean ? overlap(pb.arrival_ps - pa.arrival_ps) : 0.0;
        const auto routing = beamsplit(rb, ov, cfg_.bs_reflectivity);
        const bool a_first = photons[i].source == 0;
        port[a_first ? i : i + 1] = routing.port_a;
        port[a_first ? i + 1 : i] = routing.port_b;
      } else {
        for (std::size_t k = i; k < j; ++k) port[k] = route_single(rb, photons[k].source == 0, cfg_.bs_reflectivity);
      }
      i = j;
    }

    // Detection at the two outputs.
    RandomStream rdet = rng.derive(30);
    for (std::size_t k = 0; k < photons.size(); ++k) {
      const int p = port[k];
      const double accept = sig_[p].efficiency * sig_live_[p] / eta_max_;
      if (!rdet.bernoulli(accept)) continue;
      const double sigma = sig_[p].jitter_fwhm_ps / constants::fwhm_per_sigma;
      detail::SignalClick c{photons[k].arrival_ps + rdet.normal(0.0, sigma), photons[k].source, photons[k].pair_id};
      out.clicks[p].push_back(c);
    }
    for (int p = 0; p < 2; ++p) {
      const double dark_per_ps = sig_[p].dark_rate_hz * constants::ps;
      if (dark_per_ps > 0)
        for (double t = t0 + rdet.exponential(dark_per_ps); t < t1; t += rdet.exponential(dark_per_ps))
          out.clicks[p].push_back({t, -1, 0});
    }
    return out;
  }

  void finalize_chunk(detail::ChunkData& chunk, double (&last_sig)[2], double (&last_her)[2],
                      std::vector<detail::SignalClick> (&tail)[2], std::vector<double> (&dark_tail)[2],
                      DipResult& res) const {
    const double w = cfg_.herald_window_ps;
    const double range = cfg_.coincidence_range_ps;

    // Herald streams: dead time, then partner lookup and dark-click lists.
    std::unordered_map<std::uint64_t, double> herald_time[2];
    std::vector<double> dark_herald[2];
    for (int s = 0; s < 2; ++s) {
      auto& hs = chunk.heralds[s];
      std::stable_sort(hs.begin(), hs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::pair<double, int>> kept;
      for (const auto& h : hs) {
        if (h.first - last_her[s] < her_[s].dead_time_ps() || h.first <= last_her[s]) continue;
        kept.push_back(h);
        last_her[s] = h.first;
      }
      // Partner idlers that survived dead time.
      std::vector<double> kept_partner_times;
      for (const auto& h : kept) {
        if (h.second < 0) dark_herald[s].push_back(h.first);
        else kept_partner_times.push_back(h.first);
      }
      std::sort(kept_partner_times.begin(), kept_partner_times.end());
      for (const auto& [t, id] : chunk.herald_partner[s])
        if (std::binary_search(kept_partner_times.begin(), kept_partner_times.end(), t)) herald_time[s][id] = t;
    }

    auto any_within = [w](const std::vector<double>& sorted, double t) {
      auto it = std::lower_bound(sorted.begin(), sorted.end(), t - w);
      return it != sorted.end() && *it <= t + w;
    };

    std::vector<detail::SignalClick> kept[2];
    for (int p = 0; p < 2; ++p) {
      auto& cs = chunk.clicks[p];
      std::stable_sort(cs.begin(), cs.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
      for (auto c : cs) {
        if (c.t - last_sig[p] < sig_[p].dead_time_ps() || c.t <= last_sig[p]) continue;
        last_sig[p] = c.t;
        if (c.source >= 0) {
          auto it = herald_time[c.source].find(c.pair_id);
          c.partner_ok = it != herald_time[c.source].end() && std::abs(it->second - c.t) <= w;
        }
        for (int s = 0; s < 2; ++s)
          c.dark_ok[s] = any_within(dark_tail[s], c.t) || any_within(dark_herald[s], c.t);
        kept[p].push_back(c);
      }
    }

    auto ok = [](const detail::SignalClick& c, int s) { return (c.source == s && c.partner_ok) || c.dark_ok[s]; };
    auto fourfold = [&](const detail::SignalClick& c, const detail::SignalClick& d) {
      return (ok(c, 0) && ok(d, 1)) || (ok(c, 1) && ok(d, 0));
    };

    // Pairs (c, d) with at least one click from this chunk; tails hold the
    // previous chunk's last `range` of clicks.
    std::vector<std::pair<detail::SignalClick, bool>> all[2];
    for (int p = 0; p < 2; ++p) {
      for (const auto& c : tail[p]) all[p].emplace_back(c, false);
      for (const auto& c : kept[p]) all[p].emplace_back(c, true);
    }
    std::size_t first = 0;
    const auto& cs = all[0];
    const auto& ds = all[1];
    for (const auto& [c, c_new] : cs) {
      while (first < ds.size() && ds[first].first.t - c.t < -range) ++first;
      for (std::size_t j = first; j < ds.size(); ++j) {
        const double tau = ds[j].first.t - c.t;
        if (tau >= range) break;
        if (!c_new && !ds[j].second) continue;
        res.twofold.add(tau);
        if (fourfold(c, ds[j].first)) res.histogram.add(tau);
      }
    }

    for (int p = 0; p < 2; ++p) {
      std::vector<detail::SignalClick> next;
      const double cut = (kept[p].empty() ? (tail[p].empty() ? 0.0 : tail[p].back().t) : kept[p].back().t) - range - 1.0;
      for (const auto& [c, is_new] : all[p])
        if (c.t >= cut) next.push_back(c);
      tail[p] = std::move(next);
    }
    for (int s = 0; s < 2; ++s) {
      std::vector<double> next;
      for (double t : dark_herald[s])
        if (!dark_herald[s].empty() && t >= dark_herald[s].back() - 2 * w) next.push_back(t);
      if (!next.empty()) dark_tail[s] = std::move(next);
    }
  }

  HomConfig cfg_;
  DetectorConfig sig_[2];
  DetectorConfig her_[2];
  std::vector<PairSource> sources_;
  std::vector<WavePacketSampler> packets_;
  double rates_[2] = {0, 0};
  double n_[2] = {0, 0};
  double acc_[2] = {1, 1};
  double sig_live_[2] = {1, 1};
  double her_live_[2] = {1, 1};
  double eta_max_ = 1;
  double keep_signal_[2] = {0, 0};
  double keep_idler_[2] = {0, 0};
  double tracked_[2] = {0, 0};
  double contamination_window_ps_ = 0;
  double interaction_window_ps_ = 0;
  std::unique_ptr<OverlapTable> overlap_;
};

inline DipResult run_hom(const RandomStream& rng, const HomConfig& config, double duration_ps, unsigned threads = 1) {
  return HomSimulator(config).run_and_fit(rng, duration_ps, threads);
}

inline nlohmann::ordered_json to_json(const DipResult& r) {
  nlohmann::ordered_json j;
  j["visibility"] = r.visibility;
  j["visibility_fit"] = r.visibility_fit;
  j["visibility_stderr"] = r.visibility_stderr;
  j["v_max_counts_per_bin"] = r.v_max;
  j["v_min_counts_per_bin"] = r.v_min;
  j["dip_width_fwhm_ps"] = r.dip_width_fwhm_ps;
  j["dip_center_ps"] = r.dip_center_ps;
  j["fourfold_events"] = r.fourfold_events;
  j["wing_events"] = r.wing_events;
  j["fourfold_rate_per_hour"] = r.fourfold_rate_per_hour;
  j["duration_s"] = r.duration_s;
  j["pair_rate_a_hz"] = r.pair_rate_a_hz;
  j["pair_rate_b_hz"] = r.pair_rate_b_hz;
  j["mean_photons_per_mode_a"] = r.mean_photons_per_mode_a;
  j["mean_photons_per_mode_b"] = r.mean_photons_per_mode_b;
  j["photon_coherence_ps"] = r.photon_coherence_ps;
  j["contamination_window_ps"] = r.contamination_window_ps;
  j["trials"] = r.trials;
  j["contaminated_trials"] = r.contaminated_trials;
  return j;
}

} // namespace pairsim
