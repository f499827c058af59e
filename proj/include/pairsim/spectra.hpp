#pragma once

// Spectral line shapes, fibre-grating filter cascades and energy-correlated
// sampling of signal/idler wavelengths.
//
// A FilterStage passes light with peak transmission 10^(-IL/10) and never
// drops below the flat rejection floor 10^(-rejection/10) times that peak.
// Reflect-band gratings are routed through a circulator, so in the photon
// path they act as band-pass stages exactly like transmit-band ones.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "pairsim/constants.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/radiometry.hpp"
#include "pairsim/random.hpp"

namespace pairsim {

enum class LineShape { gaussian, lorentzian, rectangular };

inline std::string_view to_string(LineShape s) {
  switch (s) {
  case LineShape::gaussian: return "gaussian";
  case LineShape::lorentzian: return "lorentzian";
  case LineShape::rectangular: return "rectangular";
  }
  return "?";
}

inline LineShape parse_line_shape(std::string_view name) {
  if (name == "gaussian") return LineShape::gaussian;
  if (name == "lorentzian") return LineShape::lorentzian;
  if (name == "rectangular") return LineShape::rectangular;
  throw ConfigError("", "unknown line shape '" + std::string(name) + "'");
}

/// Peak-normalized line shape evaluated at offset `x` from center, with `x`
/// and `fwhm` in the same unit.
inline double line_shape_value(LineShape shape, double x, double fwhm) {
  const double u = x / fwhm;
  switch (shape) {
  case LineShape::gaussian: return std::exp(-4.0 * constants::ln2 * u * u);
  case LineShape::lorentzian: return 1.0 / (1.0 + 4.0 * u * u);
  case LineShape::rectangular: return std::abs(u) <= 0.5 ? 1.0 : 0.0;
  }
  return 0.0;
}

struct SpectralProfile {
  double center_nm = 1560.0;
  double fwhm_pm = 10.0;
  LineShape shape = LineShape::gaussian;

  double fwhm_nm() const { return fwhm_pm * 1e-3; }
  double value(double wavelength_nm) const {
    return line_shape_value(shape, wavelength_nm - center_nm, fwhm_nm());
  }
};

inline void validate(const SpectralProfile& p) {
  if (!(p.fwhm_pm > 0)) throw DomainError("profile FWHM must be positive");
  if (!(p.center_nm > 0)) throw DomainError("profile center must be positive");
}

enum class FilterMode { transmit_band, reflect_band };

struct FilterStage {
  SpectralProfile profile;
  FilterMode mode = FilterMode::transmit_band;
  double rejection_db = 45.0;
  double insertion_loss_db = 0.0;

  double peak_transmission() const { return std::pow(10.0, -insertion_loss_db / 10.0); }
  double rejection_floor() const { return std::pow(10.0, -rejection_db / 10.0); }
  double transmission(double wavelength_nm) const {
    return peak_transmission() * std::max(profile.value(wavelength_nm), rejection_floor());
  }
};

inline void validate(const FilterStage& s) {
  validate(s.profile);
  if (!(s.rejection_db >= 0)) throw DomainError("rejection must be non-negative dB");
  if (!(s.insertion_loss_db >= 0)) throw DomainError("insertion loss must be non-negative dB");
}

struct FilterChain {
  std::vector<FilterStage> stages;

  bool empty() const { return stages.empty(); }

  /// Product of the stage insertion losses.
  double peak_transmission() const {
    double t = 1.0;
    for (const auto& s : stages) t *= s.peak_transmission();
    return t;
  }

  /// Stage with the smallest FWHM; sets the sampling grid.
  const FilterStage* narrowest() const {
    const FilterStage* best = nullptr;
    for (const auto& s : stages)
      if (!best || s.profile.fwhm_pm < best->profile.fwhm_pm) best = &s;
    return best;
  }
};

inline void validate(const FilterChain& c) {
  for (const auto& s : c.stages) validate(s);
}

/// Chain transmission at a wavelength; an empty chain transmits everything.
inline double transmission(const FilterChain& chain, double wavelength_nm) {
  if (!(wavelength_nm > 0)) throw DomainError("wavelength must be positive");
  double t = 1.0;
  for (const auto& s : chain.stages) t *= s.transmission(wavelength_nm);
  return t;
}

/// Uniform wavelength grid used for all spectral quadrature.
struct WavelengthGrid {
  static constexpr std::size_t default_points = 2001;
  static constexpr double default_half_span_fwhm = 5.0;

  double start_nm = 0;
  double step_nm = 0;
  std::size_t points = 0;

  double at(std::size_t i) const { return start_nm + step_nm * static_cast<double>(i); }

  static WavelengthGrid around(double center_nm, double fwhm_nm,
                               std::size_t points = default_points,
                               double half_span_fwhm = default_half_span_fwhm) {
    const double half = half_span_fwhm * fwhm_nm;
    return {center_nm - half, 2.0 * half / static_cast<double>(points - 1), points};
  }
  static WavelengthGrid spanning(double lo_nm, double hi_nm, std::size_t points = default_points) {
    return {lo_nm, (hi_nm - lo_nm) / static_cast<double>(points - 1), points};
  }
};

/// Grid on which a signal-arm chain is sampled, clipped to the SPDC band.
inline WavelengthGrid signal_grid(const SourceConfig& source, const FilterChain& signal_chain) {
  const double band_lo = source.spdc_center_nm - 0.5 * source.spdc_bandwidth_fwhm_nm;
  const double band_hi = source.spdc_center_nm + 0.5 * source.spdc_bandwidth_fwhm_nm;
  const FilterStage* core = signal_chain.narrowest();
  if (!core) return WavelengthGrid::spanning(band_lo, band_hi);
  auto g = WavelengthGrid::around(core->profile.center_nm, core->profile.fwhm_nm());
  const double lo = std::max(g.start_nm, band_lo);
  const double hi = std::min(g.at(g.points - 1), band_hi);
  if (!(hi > lo)) throw DomainError("signal filter lies outside the SPDC band");
  return WavelengthGrid::spanning(lo, hi);
}

struct PairWavelengths {
  double signal_nm = 0;
  double idler_nm = 0;
  double acceptance = 0; // probability the idler passes its (peak-normalized) chain
};

/// Draws energy-conserving signal/idler wavelengths. The signal wavelength is
/// sampled only inside the signal filter passband (inverse CDF on a fixed
/// grid); the pair rate is scaled by the filter/SPDC width ratio elsewhere.
class PairSampler {
public:
  PairSampler(const SourceConfig& source, FilterChain signal_chain, FilterChain idler_chain)
      : pump_nm_(source.pump.wavelength_nm), idler_chain_(std::move(idler_chain)) {
    validate(source);
    validate(signal_chain);
    validate(idler_chain_);
    if (const auto* core = signal_chain.narrowest()) {
      const double c = core->profile.center_nm;
      const double lo = source.spdc_center_nm - 0.5 * source.spdc_bandwidth_fwhm_nm;
      const double hi = source.spdc_center_nm + 0.5 * source.spdc_bandwidth_fwhm_nm;
      if (c < lo || c > hi) throw DomainError("signal chain is centered outside the SPDC band");
    }
    if (const auto* core = idler_chain_.narrowest()) {
      const double mirrored = idler_wavelength(pump_nm_, core->profile.center_nm);
      const double lo = source.spdc_center_nm - 0.5 * source.spdc_bandwidth_fwhm_nm;
      const double hi = source.spdc_center_nm + 0.5 * source.spdc_bandwidth_fwhm_nm;
      if (mirrored < lo || mirrored > hi)
        throw DomainError("idler chain is centered outside the SPDC band");
    }
    grid_ = signal_grid(source, signal_chain);
    cdf_.resize(grid_.points);
    double prev = transmission(signal_chain, grid_.at(0));
    cdf_[0] = 0.0;
    for (std::size_t i = 1; i < grid_.points; ++i) {
      const double cur = transmission(signal_chain, grid_.at(i));
      cdf_[i] = cdf_[i - 1] + 0.5 * (prev + cur) * grid_.step_nm;
      prev = cur;
    }
    if (!(cdf_.back() > 0)) throw DomainError("signal chain transmits nothing inside the SPDC band");
    for (auto& v : cdf_) v /= cdf_.back();
    idler_peak_ = idler_chain_.peak_transmission();
  }

  const WavelengthGrid& grid() const { return grid_; }

  double sample_signal(RandomStream& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.begin()) return grid_.at(0);
    if (it == cdf_.end()) return grid_.at(grid_.points - 1);
    const auto i = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[i - 1], c1 = cdf_[i];
    const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.5;
    return grid_.at(i - 1) + frac * grid_.step_nm;
  }

  double idler_acceptance(double idler_nm) const {
    if (idler_chain_.empty()) return 1.0;
    return std::clamp(transmission(idler_chain_, idler_nm) / idler_peak_, 0.0, 1.0);
  }

  PairWavelengths operator()(RandomStream& rng) const {
    PairWavelengths p;
    p.signal_nm = sample_signal(rng);
    p.idler_nm = idler_wavelength(pump_nm_, p.signal_nm);
    p.acceptance = idler_acceptance(p.idler_nm);
    return p;
  }

  /// Expected idler acceptance, integrated over the signal distribution.
  double mean_acceptance() const {
    double acc = 0.0;
    for (std::size_t i = 1; i < grid_.points; ++i) {
      const double mid = grid_.at(i - 1) + 0.5 * grid_.step_nm;
      acc += (cdf_[i] - cdf_[i - 1]) * idler_acceptance(idler_wavelength(pump_nm_, mid));
    }
    return acc;
  }

private:
  double pump_nm_;
  FilterChain idler_chain_;
  WavelengthGrid grid_;
  std::vector<double> cdf_;
  double idler_peak_ = 1.0;
};

inline PairWavelengths sample_pair_wavelengths(RandomStream& rng, const SourceConfig& source,
                                               const FilterChain& signal_chain,
                                               const FilterChain& idler_chain) {
  return PairSampler(source, signal_chain, idler_chain)(rng);
}

namespace detail {
inline double shape_only(const FilterChain& chain, double wavelength_nm) {
  double v = 1.0;
  for (const auto& s : chain.stages) v *= s.profile.value(wavelength_nm);
  return v;
}

// FWHM of a sampled single-peaked curve, interpolating the half-max crossings.
inline double sampled_fwhm(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto peak_it = std::max_element(ys.begin(), ys.end());
  const double half = 0.5 * *peak_it;
  const auto peak = static_cast<std::size_t>(peak_it - ys.begin());
  std::size_t lo = peak;
  while (lo > 0 && ys[lo - 1] >= half) --lo;
  std::size_t hi = peak;
  while (hi + 1 < ys.size() && ys[hi + 1] >= half) ++hi;
  auto crossing = [&](std::size_t inside, std::size_t outside) {
    const double y0 = ys[inside], y1 = ys[outside];
    if (y0 == y1) return xs[inside];
    return xs[inside] + (half - y0) / (y1 - y0) * (xs[outside] - xs[inside]);
  };
  // A flat-topped curve whose edge falls between points: widen by the
  // interpolated crossing on each side, or up to the grid edge.
  const double left = lo > 0 ? crossing(lo, lo - 1) : xs.front();
  const double right = hi + 1 < ys.size() ? crossing(hi, hi + 1) : xs.back();
  return right - left;
}
} // namespace detail

/// FWHM (nm) of the signal-arm spectral density once both arms are filtered,
/// i.e. T_s(l) * T_i(idler(l)), found on the fixed quadrature grid.
inline double effective_pair_bandwidth_nm(const FilterChain& signal_chain,
                                          const FilterChain& idler_chain, double pump_nm) {
  validate(signal_chain);
  validate(idler_chain);
  const FilterStage* s_core = signal_chain.narrowest();
  const FilterStage* i_core = idler_chain.narrowest();
  if (!s_core && !i_core) throw DomainError("at least one arm must be filtered");

  double center = 0, fwhm = std::numeric_limits<double>::infinity();
  if (s_core) {
    center = s_core->profile.center_nm;
    fwhm = s_core->profile.fwhm_nm();
  }
  if (i_core && i_core->profile.fwhm_nm() < fwhm) {
    center = idler_wavelength(pump_nm, i_core->profile.center_nm);
    fwhm = i_core->profile.fwhm_nm();
  }
  // Rectangular stages need enough points across the edge; the fixed grid
  // spans +-5 FWHM of the narrowest stage.
  const auto grid = WavelengthGrid::around(center, fwhm);
  std::vector<double> xs(grid.points), ys(grid.points);
  double overlap = 0.0;
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double ls = grid.at(i);
    const double li = idler_wavelength(pump_nm, ls);
    xs[i] = ls;
    ys[i] = transmission(signal_chain, ls) * transmission(idler_chain, li);
    overlap = std::max(overlap, detail::shape_only(signal_chain, ls) * detail::shape_only(idler_chain, li));
  }
  if (overlap < 1e-6) throw DomainError("signal and idler passbands do not overlap");
  return detail::sampled_fwhm(xs, ys);
}

} // namespace pairsim
