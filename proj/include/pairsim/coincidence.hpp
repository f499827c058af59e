#pragma once

// TAC/TDC emulation: start-stop time-difference histograms, gaussian peak
// fits and removal of detector jitter from a measured coincidence width.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairsim/constants.hpp"
#include "pairsim/engine.hpp"
#include "pairsim/errors.hpp"
#include "pairsim/fit.hpp"
#include "pairsim/format.hpp"

namespace pairsim {

struct CoincidenceHistogram {
  double bin_width_ps = 45.5;
  double min_ps = -10000.0;
  double max_ps = 10000.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total_events = 0; // differences binned

  static CoincidenceHistogram empty(double bin_width_ps, double min_ps, double max_ps) {
    if (!(bin_width_ps > 0)) throw DomainError("bin width must be positive");
    if (!(max_ps > min_ps) || !std::isfinite(min_ps) || !std::isfinite(max_ps))
      throw DomainError("histogram range must be finite and non-empty");
    CoincidenceHistogram h;
    h.bin_width_ps = bin_width_ps;
    h.min_ps = min_ps;
    h.max_ps = max_ps;
    h.counts.assign(static_cast<std::size_t>(std::ceil((max_ps - min_ps) / bin_width_ps)), 0);
    return h;
  }

  std::size_t size() const { return counts.size(); }
  double bin_low(std::size_t i) const { return min_ps + bin_width_ps * static_cast<double>(i); }
  double bin_center(std::size_t i) const { return bin_low(i) + 0.5 * bin_width_ps; }

  bool add(double dt_ps) {
    if (dt_ps < min_ps || dt_ps >= max_ps) return false;
    const auto idx = static_cast<std::size_t>(std::floor((dt_ps - min_ps) / bin_width_ps));
    if (idx >= counts.size()) return false;
    ++counts[idx];
    ++total_events;
    return true;
  }

  void merge(const CoincidenceHistogram& other) {
    if (other.counts.size() != counts.size() || other.bin_width_ps != bin_width_ps || other.min_ps != min_ps)
      throw DomainError("cannot merge histograms with different binning");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    total_events += other.total_events;
  }
};

/// All-pairs start/stop histogram: every stop within the range of a start
/// contributes stop - start. Both streams must be time-ordered.
inline CoincidenceHistogram histogram(std::span<const DetectionRecord> starts,
                                      std::span<const DetectionRecord> stops, double bin_width_ps,
                                      double min_ps, double max_ps) {
  auto h = CoincidenceHistogram::empty(bin_width_ps, min_ps, max_ps);
  std::size_t first = 0;
  for (const auto& s : starts) {
    const double lo = s.timestamp_ps + min_ps;
    while (first < stops.size() && stops[first].timestamp_ps < lo) ++first;
    for (std::size_t j = first; j < stops.size(); ++j) {
      const double dt = stops[j].timestamp_ps - s.timestamp_ps;
      if (dt >= max_ps) break;
      h.add(dt);
    }
  }
  return h;
}

/// Merges groups of `factor` adjacent bins; a trailing partial group is kept.
inline CoincidenceHistogram rebin(const CoincidenceHistogram& h, std::size_t factor) {
  if (factor == 0) throw DomainError("rebin factor must be positive");
  CoincidenceHistogram out;
  out.bin_width_ps = h.bin_width_ps * static_cast<double>(factor);
  out.min_ps = h.min_ps;
  out.counts.assign((h.counts.size() + factor - 1) / factor, 0);
  out.max_ps = h.min_ps + out.bin_width_ps * static_cast<double>(out.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) out.counts[i / factor] += h.counts[i];
  out.total_events = h.total_events;
  return out;
}

struct PeakFit {
  double center_ps = 0;
  double fwhm_ps = 0;
  double fwhm_stderr_ps = 0;
  double amplitude = 0; // counts per bin at the peak, above baseline
  double baseline = 0;  // counts per bin
};

struct HistogramStats {
  std::uint64_t max_bin = 0;
  double median_bin = 0;
  std::uint64_t total = 0;
};

inline HistogramStats stats(const CoincidenceHistogram& h) {
  HistogramStats s;
  if (h.counts.empty()) return s;
  std::vector<std::uint64_t> sorted = h.counts;
  std::sort(sorted.begin(), sorted.end());
  s.max_bin = sorted.back();
  const std::size_t n = sorted.size();
  s.median_bin = n % 2 ? static_cast<double>(sorted[n / 2])
                       : 0.5 * static_cast<double>(sorted[n / 2 - 1] + sorted[n / 2]);
  for (auto c : h.counts) s.total += c;
  return s;
}

class FitError : public StatisticsError {
public:
  FitError(const std::string& what, HistogramStats s) : StatisticsError(what), stats_(s) {}
  const HistogramStats& stats() const { return stats_; }

private:
  HistogramStats stats_;
};

namespace detail {
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Expected counts in [a, b) for a gaussian of peak density `amp` per bin width.
inline double gaussian_bin(double a, double b, double mu, double sigma, double amp, double bw) {
  const double mass = normal_cdf((b - mu) / sigma) - normal_cdf((a - mu) / sigma);
  return amp * std::sqrt(2.0 * constants::pi) * sigma / bw * mass;
}
} // namespace detail

/// Gaussian plus constant baseline, fitted to bin-integrated counts.
inline PeakFit fit_peak(const CoincidenceHistogram& h) {
  const auto st = stats(h);
  const double floor = std::max(st.median_bin, 1.0);
  if (h.counts.empty() || static_cast<double>(st.max_bin) < 5.0 * floor)
    throw FitError("no dominant coincidence peak (max bin " + std::to_string(st.max_bin) +
                       ", median " + fmt::number(st.median_bin) + ")",
                   st);

  const auto peak_idx = static_cast<std::size_t>(
      std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin());
  const double base0 = st.median_bin;
  const double amp0 = static_cast<double>(st.max_bin) - base0;
  const double half = base0 + 0.5 * amp0;
  std::size_t lo = peak_idx, hi = peak_idx;
  while (lo > 0 && static_cast<double>(h.counts[lo - 1]) >= half) --lo;
  while (hi + 1 < h.size() && static_cast<double>(h.counts[hi + 1]) >= half) ++hi;
  const double width0 = std::max(static_cast<double>(hi - lo + 1) * h.bin_width_ps, h.bin_width_ps);

  // Fit window: +-8 initial widths around the peak, plus enough wing for the baseline.
  const double center0 = h.bin_center(peak_idx);
  const double span = std::max(8.0 * width0, 20.0 * h.bin_width_ps);
  std::vector<std::size_t> idx;
  std::vector<double> y;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (std::abs(h.bin_center(i) - center0) <= span) {
      idx.push_back(i);
      y.push_back(static_cast<double>(h.counts[i]));
    }
  }

  const double bw = h.bin_width_ps;
  auto model = [&](const Eigen::VectorXd& p, std::size_t k) {
    const double a = h.bin_low(idx[k]);
    const double sigma = std::abs(p[1]);
    return p[3] + detail::gaussian_bin(a, a + bw, p[0], sigma, p[2], bw);
  };
  Eigen::VectorXd p0(4);
  p0 << center0, width0 / constants::fwhm_per_sigma, amp0, base0;
  const auto res = fit::poisson_fit(model, y, p0);
  const double sigma = std::abs(res.params[1]);
  if (!res.converged || !(sigma > 0) || !std::isfinite(sigma))
    throw FitError("gaussian peak fit did not converge", st);

  PeakFit out;
  out.center_ps = res.params[0];
  out.fwhm_ps = constants::fwhm_per_sigma * sigma;
  out.fwhm_stderr_ps = constants::fwhm_per_sigma * res.stderrs[1];
  out.amplitude = std::max(0.0, res.params[2]);
  out.baseline = res.params[3];
  return out;
}

/// Per-photon wave-packet width from a measured coincidence FWHM: remove the
/// two-detector jitter in quadrature, then split equally between the photons.
inline double deconvolve_photon_width(double measured_fwhm_ps, double jitter_fwhm_ps) {
  if (!(jitter_fwhm_ps >= 0)) throw DomainError("jitter must be non-negative");
  if (!(measured_fwhm_ps > jitter_fwhm_ps)) throw DomainError("measured width does not exceed the jitter");
  return std::sqrt((measured_fwhm_ps * measured_fwhm_ps - jitter_fwhm_ps * jitter_fwhm_ps) / 2.0);
}

inline std::string histogram_csv(const CoincidenceHistogram& h) {
  std::ostringstream out;
  out << "bin_center_ps,counts\r\n";
  for (std::size_t i = 0; i < h.size(); ++i)
    out << fmt::number(h.bin_center(i)) << ',' << h.counts[i] << "\r\n";
  return out.str();
}

inline nlohmann::ordered_json to_json(const PeakFit& f) {
  nlohmann::ordered_json j;
  j["center_ps"] = f.center_ps;
  j["fwhm_ps"] = f.fwhm_ps;
  j["fwhm_stderr_ps"] = f.fwhm_stderr_ps;
  j["amplitude"] = f.amplitude;
  j["baseline"] = f.baseline;
  return j;
}

} // namespace pairsim
