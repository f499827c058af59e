#pragma once

// Continuous-time Monte Carlo of CW pair emission, per-photon loss and
// detector response. Times are double picoseconds from the simulation origin.
//
// Long runs are cut into fixed chunks. Each chunk draws from its own derived
// random stream, so chunks can be generated on any number of threads and the
// result is still bit-identical for a given seed.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "pairsim/constants.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/format.hpp"
#include "pairsim/radiometry.hpp"
#include "pairsim/random.hpp"
#include "pairsim/spectra.hpp"

namespace pairsim {

enum class PhotonRole : std::uint8_t { signal, idler };

inline std::string_view to_string(PhotonRole r) { return r == PhotonRole::signal ? "signal" : "idler"; }

struct PhotonEvent {
  std::uint32_t source_id = 0;
  std::uint64_t pair_id = 0;
  PhotonRole role = PhotonRole::signal;
  double emission_time_ps = 0;
  double wavelength_nm = 0;
  double coherence_fwhm_ps = 0;
  LineShape packet_shape = LineShape::gaussian;
};

enum class DetectorKind { upconversion, sspd, ingaas_gated, tes };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
  case DetectorKind::upconversion: return "upconversion";
  case DetectorKind::sspd: return "sspd";
  case DetectorKind::ingaas_gated: return "ingaas_gated";
  case DetectorKind::tes: return "tes";
  }
  return "?";
}

inline DetectorKind parse_detector_kind(std::string_view s) {
  if (s == "upconversion") return DetectorKind::upconversion;
  if (s == "sspd") return DetectorKind::sspd;
  if (s == "ingaas_gated") return DetectorKind::ingaas_gated;
  if (s == "tes") return DetectorKind::tes;
  throw ConfigError("", "unknown detector kind '" + std::string(s) + "'");
}

struct DetectorConfig {
  DetectorKind kind = DetectorKind::sspd;
  double efficiency = 0.05;
  double dark_rate_hz = 100.0;
  double jitter_fwhm_ps = 70.0;
  double dead_time_ns = 10.0;
  bool gated = false; // gated devices are run free-running at their quoted efficiency

  double dead_time_ps() const { return dead_time_ns * 1e3; }
};

inline void validate(const DetectorConfig& d) {
  if (!is_probability(d.efficiency)) throw DomainError("detector efficiency must lie in [0,1]");
  if (!(d.dark_rate_hz >= 0)) throw DomainError("dark rate must be non-negative");
  if (!(d.jitter_fwhm_ps >= 0)) throw DomainError("jitter must be non-negative");
  if (!(d.dead_time_ns >= 0)) throw DomainError("dead time must be non-negative");
}

struct ClickOrigin {
  bool dark = true;
  std::uint32_t source_id = 0;
  std::uint64_t pair_id = 0;
  PhotonRole role = PhotonRole::signal;

  static ClickOrigin from(const PhotonEvent& e) { return {false, e.source_id, e.pair_id, e.role}; }

  std::string tag() const {
    if (dark) return "dark";
    return "photon:" + std::to_string(source_id) + ":" + std::to_string(pair_id) + ":" +
           std::string(to_string(role));
  }
};

struct DetectionRecord {
  std::uint32_t detector_id = 0;
  double timestamp_ps = 0;
  ClickOrigin origin;
};

using DetectionStream = std::vector<DetectionRecord>;

// ---------------------------------------------------------------------------
// Pair source model

/// Everything needed to emit pairs from one source behind its filter chains.
class PairSource {
public:
  PairSource(std::uint32_t source_id, const SourceConfig& source, FilterChain signal_chain,
             FilterChain idler_chain)
      : source_id_(source_id), source_(source),
        sampler_(source, signal_chain, idler_chain) {
    const FilterStage* core = signal_chain.narrowest();
    const double filter_fwhm_nm = core ? core->profile.fwhm_nm() : source.spdc_bandwidth_fwhm_nm;
    pair_rate_hz_ = in_band_pair_rate(source, filter_fwhm_nm);
    packet_shape_ = core ? core->profile.shape : LineShape::gaussian;
    const double center = core ? core->profile.center_nm : source.spdc_center_nm;
    double joint_fwhm_nm = source.spdc_bandwidth_fwhm_nm;
    if (!signal_chain.empty() || !idler_chain.empty())
      joint_fwhm_nm = effective_pair_bandwidth_nm(signal_chain, idler_chain,
                                                  source.pump.wavelength_nm);
    pair_coherence_ps_ = coherence_time_ps(center, joint_fwhm_nm);
    photon_coherence_ps_ = pair_coherence_ps_ / std::sqrt(2.0);
  }

  std::uint32_t id() const { return source_id_; }
  const SourceConfig& config() const { return source_; }
  const PairSampler& sampler() const { return sampler_; }

  double pair_rate_hz() const { return pair_rate_hz_; }
  void set_pair_rate_hz(double r) {
    if (!(r >= 0)) throw DomainError("pair rate must be non-negative");
    pair_rate_hz_ = r;
  }

  /// FWHM of the signal-idler arrival-time difference (both wave packets).
  double pair_coherence_ps() const { return pair_coherence_ps_; }
  /// Per-photon wave-packet FWHM; two independent draws reproduce the pair value.
  double photon_coherence_ps() const { return photon_coherence_ps_; }
  LineShape packet_shape() const { return packet_shape_; }

  PhotonEvent make_photon(std::uint64_t pair_id, PhotonRole role, double t_ps, double lambda_nm) const {
    return {source_id_, pair_id, role, t_ps, lambda_nm, photon_coherence_ps_, packet_shape_};
  }

private:
  std::uint32_t source_id_;
  SourceConfig source_;
  PairSampler sampler_;
  double pair_rate_hz_ = 0;
  double pair_coherence_ps_ = 0;
  double photon_coherence_ps_ = 0;
  LineShape packet_shape_ = LineShape::gaussian;
};

// ---------------------------------------------------------------------------
// Chunked execution

struct ChunkPlan {
  static constexpr double default_chunk_ps = 100e9; // 100 ms

  double duration_ps = 0;
  double chunk_ps = default_chunk_ps;

  std::size_t count() const {
    if (!(duration_ps > 0)) return 0;
    return static_cast<std::size_t>(std::ceil(duration_ps / chunk_ps));
  }
  double begin(std::size_t k) const { return chunk_ps * static_cast<double>(k); }
  double end(std::size_t k) const { return std::min(duration_ps, chunk_ps * static_cast<double>(k + 1)); }
};

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs fn(k) for k in [0, n) on up to `threads` workers; results in index order.
template <class Fn>
auto parallel_map(std::size_t n, unsigned threads, Fn&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(n);
  threads = std::max(1u, threads);
  if (threads == 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) out[k] = fn(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) {
        try {
          out[k] = fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
  return out;
}

template <class T>
std::vector<T> concat(std::vector<std::vector<T>>&& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  std::vector<T> out;
  out.reserve(n);
  for (auto& p : parts) out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Generation

/// Homogeneous Poisson pair emission over [0, duration). Signal and idler
/// share the emission instant; the idler is dropped when it misses the idler
/// passband. Pair ids run sequentially in time order.
inline std::vector<PhotonEvent> generate_pairs(const RandomStream& rng, const PairSource& source,
                                               double duration_ps, unsigned threads = 1,
                                               double chunk_ps = ChunkPlan::default_chunk_ps) {
  const ChunkPlan plan{duration_ps, chunk_ps};
  const double rate_per_ps = source.pair_rate_hz() * constants::ps;
  auto chunks = parallel_map(plan.count(), threads, [&](std::size_t k) {
    std::vector<PhotonEvent> out;
    if (!(rate_per_ps > 0)) return out;
    RandomStream r = rng.derive(k);
    const double end = plan.end(k);
    for (double t = plan.begin(k) + r.exponential(rate_per_ps); t < end; t += r.exponential(rate_per_ps)) {
      const auto w = source.sampler()(r);
      out.push_back(source.make_photon(0, PhotonRole::signal, t, w.signal_nm));
      if (r.bernoulli(w.acceptance))
        out.push_back(source.make_photon(0, PhotonRole::idler, t, w.idler_nm));
    }
    return out;
  });
  auto events = concat(std::move(chunks));
  std::uint64_t pair = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].role == PhotonRole::signal && i > 0) ++pair;
    events[i].pair_id = pair;
  }
  return events;
}

/// Same statistics as generate_pairs followed by independent per-photon
/// survival with probabilities (keep_signal, keep_idler), but only surviving
/// photons are ever created: the pair process is thinned to pairs with at
/// least one survivor before any wavelength is drawn.
inline std::vector<PhotonEvent> generate_surviving_pairs(const RandomStream& rng, const PairSource& source,
                                                         double duration_ps, double keep_signal,
                                                         double keep_idler, unsigned threads = 1,
                                                         double chunk_ps = ChunkPlan::default_chunk_ps) {
  if (!is_probability(keep_signal) || !is_probability(keep_idler))
    throw DomainError("survival probabilities must lie in [0,1]");
  const double any = 1.0 - (1.0 - keep_signal) * (1.0 - keep_idler);
  const double p_both = keep_signal * keep_idler / (any > 0 ? any : 1.0);
  const double p_signal_only = keep_signal * (1.0 - keep_idler) / (any > 0 ? any : 1.0);
  const ChunkPlan plan{duration_ps, chunk_ps};
  const double rate_per_ps = source.pair_rate_hz() * any * constants::ps;
  auto chunks = parallel_map(plan.count(), threads, [&](std::size_t k) {
    std::vector<PhotonEvent> out;
    if (!(rate_per_ps > 0)) return out;
    RandomStream r = rng.derive(k);
    const double end = plan.end(k);
    std::uint64_t local = 0;
    for (double t = plan.begin(k) + r.exponential(rate_per_ps); t < end; t += r.exponential(rate_per_ps), ++local) {
      const auto w = source.sampler()(r);
      const double u = r.uniform();
      const bool signal = u < p_both + p_signal_only;
      const bool idler = (u < p_both || u >= p_both + p_signal_only) && r.bernoulli(w.acceptance);
      if (signal) out.push_back(source.make_photon(local, PhotonRole::signal, t, w.signal_nm));
      if (idler) out.push_back(source.make_photon(local, PhotonRole::idler, t, w.idler_nm));
    }
    return out;
  });
  // Globally unique pair ids: chunk index in the high bits.
  for (std::size_t k = 0; k < chunks.size(); ++k)
    for (auto& e : chunks[k]) e.pair_id |= static_cast<std::uint64_t>(k) << 40;
  return concat(std::move(chunks));
}

/// Each photon survives independently with its arm's transmission.
inline std::vector<PhotonEvent> apply_loss(RandomStream& rng, std::span<const PhotonEvent> events,
                                           double signal_transmission, double idler_transmission) {
  if (!is_probability(signal_transmission) || !is_probability(idler_transmission))
    throw DomainError("transmission must lie in [0,1]");
  std::vector<PhotonEvent> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    const double t = e.role == PhotonRole::signal ? signal_transmission : idler_transmission;
    if (t >= 1.0 || (t > 0.0 && rng.bernoulli(t))) out.push_back(e);
  }
  return out;
}

inline std::vector<PhotonEvent> apply_loss(RandomStream& rng, std::span<const PhotonEvent> events,
                                           double per_photon_transmission) {
  return apply_loss(rng, events, per_photon_transmission, per_photon_transmission);
}

inline std::vector<PhotonEvent> select_role(std::span<const PhotonEvent> events, PhotonRole role) {
  std::vector<PhotonEvent> out;
  for (const auto& e : events)
    if (e.role == role) out.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Wave packets

/// Arrival-time offset of a photon within its wave packet. Gaussian packets
/// are drawn directly; other shapes use an inverse-CDF table built from the
/// Fourier transform of the spectral amplitude.
class WavePacketSampler {
public:
  WavePacketSampler(LineShape shape, double fwhm_ps) : shape_(shape), fwhm_ps_(fwhm_ps) {
    if (shape_ != LineShape::gaussian && fwhm_ps_ > 0) build_table();
  }

  double operator()(RandomStream& rng) const {
    if (!(fwhm_ps_ > 0)) return 0.0;
    if (shape_ == LineShape::gaussian) return rng.normal(0.0, fwhm_ps_ / constants::fwhm_per_sigma);
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.begin()) return times_.front();
    if (it == cdf_.end()) return times_.back();
    const auto i = static_cast<std::size_t>(it - cdf_.begin());
    const double frac = cdf_[i] > cdf_[i - 1] ? (u - cdf_[i - 1]) / (cdf_[i] - cdf_[i - 1]) : 0.5;
    return times_[i - 1] + frac * (times_[i] - times_[i - 1]);
  }

  /// Time-domain intensity on the table grid (empty for gaussian packets).
  const std::vector<double>& times() const { return times_; }

private:
  void build_table() {
    // Spectral FWHM chosen so that 0.44 / dnu equals the packet FWHM.
    const double dnu = constants::coherence_factor / fwhm_ps_; // 1/ps
    constexpr std::size_t nu_points = 4001, t_points = 2001;
    const double nu_half = 40.0 * dnu;
    const double dn = 2.0 * nu_half / (nu_points - 1);
    std::vector<double> amp(nu_points), nus(nu_points);
    for (std::size_t j = 0; j < nu_points; ++j) {
      nus[j] = -nu_half + dn * static_cast<double>(j);
      amp[j] = std::sqrt(line_shape_value(shape_, nus[j], dnu));
    }
    const double t_half = 8.0 * fwhm_ps_;
    times_.resize(t_points);
    cdf_.assign(t_points, 0.0);
    std::vector<double> intensity(t_points);
    for (std::size_t i = 0; i < t_points; ++i) {
      times_[i] = -t_half + 2.0 * t_half * static_cast<double>(i) / (t_points - 1);
      double re = 0.0;
      for (std::size_t j = 0; j < nu_points; ++j) re += amp[j] * std::cos(2.0 * constants::pi * nus[j] * times_[i]);
      intensity[i] = re * re;
    }
    for (std::size_t i = 1; i < t_points; ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * (intensity[i] + intensity[i - 1]);
    for (auto& c : cdf_) c /= cdf_.back();
  }

  LineShape shape_;
  double fwhm_ps_;
  std::vector<double> times_;
  std::vector<double> cdf_;
};

namespace detail {
class PacketCache {
public:
  const WavePacketSampler& get(LineShape shape, double fwhm_ps) {
    auto key = std::make_pair(static_cast<int>(shape), fwhm_ps);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, WavePacketSampler(shape, fwhm_ps)).first;
    return it->second;
  }

private:
  std::map<std::pair<int, double>, WavePacketSampler> cache_;
};
} // namespace detail

// ---------------------------------------------------------------------------
// Detection

/// Non-paralyzable dead time: drops clicks closer than `dead_time_ps` to the
/// last kept click. Input must be time-ordered.
inline void enforce_dead_time(DetectionStream& clicks, double dead_time_ps) {
  std::size_t kept = 0;
  bool any = false;
  double last = 0;
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const double t = clicks[i].timestamp_ps;
    if (any && (t - last < dead_time_ps || t <= last)) continue;
    clicks[kept++] = clicks[i];
    last = t;
    any = true;
  }
  clicks.resize(kept);
}

inline void sort_by_time(DetectionStream& clicks) {
  std::stable_sort(clicks.begin(), clicks.end(),
                   [](const DetectionRecord& a, const DetectionRecord& b) { return a.timestamp_ps < b.timestamp_ps; });
}

/// Dark counts: Poisson process at the detector's dark rate over [0, duration).
inline DetectionStream dark_counts(RandomStream& rng, const DetectorConfig& det, std::uint32_t detector_id,
                                   double duration_ps) {
  DetectionStream out;
  const double rate_per_ps = det.dark_rate_hz * constants::ps;
  if (!(rate_per_ps > 0) || !(duration_ps > 0)) return out;
  for (double t = rng.exponential(rate_per_ps); t < duration_ps; t += rng.exponential(rate_per_ps))
    out.push_back({detector_id, t, ClickOrigin{}});
  return out;
}

/// Photon clicks with efficiency, wave-packet spread and jitter, merged with
/// dark counts; time-ordered and dead-time filtered.
inline DetectionStream detect(RandomStream& rng, std::span<const PhotonEvent> events,
                              const DetectorConfig& det, double duration_ps, std::uint32_t detector_id = 0) {
  validate(det);
  detail::PacketCache packets;
  const double jitter_sigma = det.jitter_fwhm_ps / constants::fwhm_per_sigma;
  DetectionStream clicks;
  clicks.reserve(static_cast<std::size_t>(static_cast<double>(events.size()) * det.efficiency) + 16);
  for (const auto& e : events) {
    if (!(det.efficiency >= 1.0 || rng.bernoulli(det.efficiency))) continue;
    double t = e.emission_time_ps;
    if (e.coherence_fwhm_ps > 0) t += packets.get(e.packet_shape, e.coherence_fwhm_ps)(rng);
    t += rng.normal(0.0, jitter_sigma);
    clicks.push_back({detector_id, t, ClickOrigin::from(e)});
  }
  auto darks = dark_counts(rng, det, detector_id, duration_ps);
  clicks.insert(clicks.end(), darks.begin(), darks.end());
  sort_by_time(clicks);
  enforce_dead_time(clicks, det.dead_time_ps());
  return clicks;
}

/// Raw event dump: one `detector_id,timestamp_ps,origin_tag` line per click.
inline void write_event_dump(std::ostream& out, std::span<const DetectionRecord> clicks) {
  out << "detector_id,timestamp_ps,origin_tag\n";
  for (const auto& c : clicks)
    out << c.detector_id << ',' << fmt::number(c.timestamp_ps) << ',' << c.origin.tag() << '\n';
}

} // namespace pairsim
