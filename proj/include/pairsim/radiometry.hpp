#pragma once

// Closed-form radiometric relations for a CW down-conversion source:
// energy conservation, coherence time, temporal mode counting, mean photon
// number per mode, spectral radiance and emitted spectral brightness.
//
// Units follow the config files: wavelengths in nm, filter widths in nm
// unless a name says otherwise, times in ps, power in mW, rates in 1/s.

#include <cmath>
#include <string>

#include "pairsim/constants.hpp"
#include "pairsim/errors.hpp"

namespace pairsim {

struct PumpConfig {
  double wavelength_nm = 780.0;
  double power_mw = 7.0;
};

struct SourceConfig {
  PumpConfig pump;
  double conversion_efficiency = 1e-5; // pairs per pump photon
  double spdc_center_nm = 1560.0;
  double spdc_bandwidth_fwhm_nm = 80.0;
  double coupling_efficiency = 0.30;
  double si_filter_transmission = 0.90;
};

enum class PairTransmissionMode { heralded, pair };

struct RadiometryReport {
  double pump_photon_flux = 0;            // photons / s
  double created_pair_rate_full_band = 0; // pairs / s over the whole SPDC band
  double filter_ratio = 0;                // r = filter FWHM / SPDC FWHM
  double created_pair_rate_in_band = 0;   // pairs / s
  double coherence_time_ps = 0;           // 0.44 lambda^2 / (c dlambda)
  double modes_per_second = 0;
  double mean_photons_per_mode = 0;
  // Alternative mode-time convention: one mode per 1/dnu.
  double inverse_bandwidth_time_ps = 0;
  double mean_photons_per_mode_inverse_bandwidth = 0;
  double spectral_radiance = 0;           // W m^-2 sr^-1 m^-1
  double emitted_spectral_brightness = 0; // pairs s^-1 pm^-1
  double overall_transmission = 0;
};

inline void validate(const PumpConfig& pump) {
  if (!(pump.wavelength_nm > 0)) throw DomainError("pump wavelength must be positive");
  if (!(pump.power_mw >= 0)) throw DomainError("pump power must be non-negative");
}

inline bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

inline void validate(const SourceConfig& source) {
  validate(source.pump);
  if (!is_probability(source.conversion_efficiency))
    throw DomainError("conversion efficiency must lie in [0,1]");
  if (!is_probability(source.coupling_efficiency))
    throw DomainError("coupling efficiency must lie in [0,1]");
  if (!is_probability(source.si_filter_transmission))
    throw DomainError("Si filter transmission must lie in [0,1]");
  if (!(source.spdc_bandwidth_fwhm_nm > 0)) throw DomainError("SPDC bandwidth must be positive");
  if (!(source.spdc_center_nm > 0)) throw DomainError("SPDC center must be positive");
}

/// Wavelength of the idler photon given pump and signal, from
/// 1/lambda_p = 1/lambda_s + 1/lambda_i.
inline double idler_wavelength(double pump_nm, double signal_nm) {
  if (!(pump_nm > 0) || !(signal_nm > pump_nm))
    throw DomainError("signal wavelength must exceed the pump wavelength");
  return pump_nm * signal_nm / (signal_nm - pump_nm);
}

/// Coherence time in ps of a line of the given center and FWHM (both nm).
inline double coherence_time_ps(double center_nm, double fwhm_nm) {
  if (!(center_nm > 0) || !(fwhm_nm > 0))
    throw DomainError("coherence time needs positive center and bandwidth");
  const double lambda = center_nm * constants::nm;
  const double dlambda = fwhm_nm * constants::nm;
  return constants::coherence_factor * lambda * lambda / (constants::speed_of_light * dlambda) /
         constants::ps;
}

/// 1/dnu in ps for the same line; the other mode-time convention.
inline double inverse_bandwidth_time_ps(double center_nm, double fwhm_nm) {
  return coherence_time_ps(center_nm, fwhm_nm) / constants::coherence_factor;
}

/// <n> = N / M with M = 1 / tau_c modes per second.
inline double mean_photons_per_mode(double created_rate_per_s, double coherence_time_ps) {
  if (!(created_rate_per_s >= 0) || !(coherence_time_ps >= 0))
    throw DomainError("rate and coherence time must be non-negative");
  return created_rate_per_s * (coherence_time_ps * constants::ps);
}

/// L = h c^2 <n> / lambda^5, SI units (W m^-2 sr^-1 m^-1).
inline double spectral_radiance(double mean_photons_per_mode, double wavelength_nm) {
  if (!(wavelength_nm > 0)) throw DomainError("wavelength must be positive");
  if (!(mean_photons_per_mode >= 0)) throw DomainError("<n> must be non-negative");
  const double lambda = wavelength_nm * constants::nm;
  const double c = constants::speed_of_light;
  return constants::planck * c * c * mean_photons_per_mode / std::pow(lambda, 5);
}

/// Pump photons per second for the given pump.
inline double pump_photon_flux(const PumpConfig& pump) {
  validate(pump);
  const double photon_energy =
      constants::planck * constants::speed_of_light / (pump.wavelength_nm * constants::nm);
  return pump.power_mw * 1e-3 / photon_energy;
}

/// Created pair rate inside a filter of the given FWHM. The SPDC spectrum is
/// taken as flat over its FWHM for this bookkeeping.
inline double in_band_pair_rate(const SourceConfig& source, double filter_fwhm_nm) {
  validate(source);
  if (!(filter_fwhm_nm > 0)) throw DomainError("filter width must be positive");
  if (filter_fwhm_nm > source.spdc_bandwidth_fwhm_nm)
    throw DomainError("filter is wider than the SPDC band");
  return pump_photon_flux(source.pump) * source.conversion_efficiency * filter_fwhm_nm /
         source.spdc_bandwidth_fwhm_nm;
}

inline RadiometryReport radiometry_report(const SourceConfig& source, double filter_fwhm_nm,
                                          double per_photon_transmission,
                                          PairTransmissionMode mode = PairTransmissionMode::heralded) {
  validate(source);
  if (!is_probability(per_photon_transmission))
    throw DomainError("per-photon transmission must lie in [0,1]");
  if (!(filter_fwhm_nm > 0)) throw DomainError("filter width must be positive");
  if (filter_fwhm_nm > source.spdc_bandwidth_fwhm_nm)
    throw DomainError("filter is wider than the SPDC band");

  RadiometryReport r;
  r.pump_photon_flux = pump_photon_flux(source.pump);
  r.created_pair_rate_full_band = r.pump_photon_flux * source.conversion_efficiency;
  r.filter_ratio = filter_fwhm_nm / source.spdc_bandwidth_fwhm_nm;
  r.created_pair_rate_in_band = r.created_pair_rate_full_band * r.filter_ratio;
  r.coherence_time_ps = coherence_time_ps(source.spdc_center_nm, filter_fwhm_nm);
  r.modes_per_second = 1.0 / (r.coherence_time_ps * constants::ps);
  r.mean_photons_per_mode = mean_photons_per_mode(r.created_pair_rate_in_band, r.coherence_time_ps);
  r.inverse_bandwidth_time_ps = inverse_bandwidth_time_ps(source.spdc_center_nm, filter_fwhm_nm);
  r.mean_photons_per_mode_inverse_bandwidth =
      mean_photons_per_mode(r.created_pair_rate_in_band, r.inverse_bandwidth_time_ps);
  r.spectral_radiance = spectral_radiance(r.mean_photons_per_mode, source.spdc_center_nm);
  r.overall_transmission = mode == PairTransmissionMode::heralded
                               ? per_photon_transmission
                               : per_photon_transmission * per_photon_transmission;
  const double filter_fwhm_pm = filter_fwhm_nm * 1e3;
  r.emitted_spectral_brightness =
      r.created_pair_rate_in_band * r.overall_transmission / filter_fwhm_pm;
  return r;
}

} // namespace pairsim
