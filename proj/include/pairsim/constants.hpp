#pragma once

// CODATA 2018 exact values (SI).
namespace pairsim::constants {

inline constexpr double planck = 6.62607015e-34;      // J s
inline constexpr double speed_of_light = 299792458.0; // m / s
inline constexpr double ln2 = 0.69314718055994530942;
inline constexpr double pi = 3.14159265358979323846;

// Gaussian FWHM <-> standard deviation.
inline constexpr double fwhm_per_sigma = 2.35482004503094938202;

// Time-bandwidth factor used for coherence times.
inline constexpr double coherence_factor = 0.44;

inline constexpr double nm = 1e-9;
inline constexpr double pm = 1e-12;
inline constexpr double ps = 1e-12;

} // namespace pairsim::constants
