#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "pairsim/hom.hpp"
#include "stats.hpp"

using namespace pairsim;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kC_nm_per_ps = 2.99792458e5;

FilterChain narrow(double center, double fwhm_pm = 10) {
  return FilterChain{{FilterStage{SpectralProfile{center, fwhm_pm, LineShape::gaussian}, FilterMode::transmit_band, 45, 0}}};
}

// Ideal detectors and unit-free losses so runs stay short.
HomConfig fast_config(double n) {
  HomConfig c;
  HomArm arm;
  arm.signal_chain = narrow(1558);
  arm.idler_chain = narrow(idler_wavelength(780, 1558));
  c.source_a = c.source_b = arm;
  c.mean_photons_per_mode = n;
  DetectorConfig d;
  d.efficiency = 1;
  d.dark_rate_hz = 0;
  d.dead_time_ns = 0;
  d.jitter_fwhm_ps = 0;
  for (auto& x : c.signal_detectors) x = d;
  for (auto& x : c.herald_detectors) x = d;
  c.min_wing_events = 10;
  c.chunk_ps = 0.01e12;
  return c;
}

CoincidenceHistogram synthetic_dip(std::mt19937_64& gen, double v, double w, double r0, bool noise) {
  auto h = CoincidenceHistogram::empty(45.5, -10000, 10000);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = h.bin_center(i);
    const double mu = r0 * (1 - v * std::exp(-4 * std::log(2.0) * x * x / (w * w)));
    h.counts[i] = noise ? std::poisson_distribution<std::uint64_t>(mu)(gen) : static_cast<std::uint64_t>(std::llround(mu));
  }
  return h;
}
} // namespace

TEST(Overlap, IdenticalAtZeroDelay) {
  const SpectralProfile p{1560, 10, LineShape::gaussian};
  EXPECT_NEAR(wavepacket_overlap(p, p, 0), 1.0, 1e-9);
  const SpectralProfile l{1560, 10, LineShape::lorentzian};
  EXPECT_NEAR(wavepacket_overlap(l, l, 0), 1.0, 1e-9);
}

TEST(Overlap, VanishesAtLargeDelay) {
  const SpectralProfile p{1560, 10, LineShape::gaussian};
  EXPECT_LT(wavepacket_overlap(p, p, 5000), 1e-6);
  EXPECT_LT(wavepacket_overlap(p, p, -5000), 1e-6);
}

TEST(Overlap, GaussianClosedForm) {
  const SpectralProfile p{1560, 10, LineShape::gaussian};
  const double dnu = kC_nm_per_ps * 0.010 / (1560.0 * 1560.0);
  const double sigma = dnu / (2 * std::sqrt(2 * std::log(2.0)));
  for (double t : {0.0, 100.0, 200.0, 357.0, 500.0, 800.0, 1200.0}) {
    const double oracle = std::exp(-4 * kPi * kPi * sigma * sigma * t * t);
    EXPECT_NEAR(wavepacket_overlap(p, p, t), oracle, 1e-6) << t;
  }
  EXPECT_NEAR(wavepacket_overlap(p, p, 357), 0.25, 0.01);
}

TEST(Overlap, DetunedSpectraAreDistinguishable) {
  const SpectralProfile a{1560, 10, LineShape::gaussian}, b{1560.05, 10, LineShape::gaussian};
  EXPECT_LT(wavepacket_overlap(a, b, 0), 1e-6);
}

TEST(Overlap, TableMatchesDirectForSingleStage) {
  // With unfiltered idlers the joint density is the signal filter alone.
  const auto c = narrow(1560);
  const OverlapTable t(c, {}, 780, c, {}, 780, 6000);
  const SpectralProfile p{1560, 10, LineShape::gaussian};
  for (double d : {0.0, 150.0, 357.0, 700.0})
    EXPECT_NEAR(t(d), wavepacket_overlap(p, p, d), 2e-3) << d;
  EXPECT_EQ(t(7000), 0.0);
}

TEST(Beamsplitter, Limits) {
  RandomStream rng(41, 0);
  for (int i = 0; i < 10000; ++i) {
    ASSERT_EQ(beamsplit(rng, 1.0).outcome, BsOutcome::same_port);
    ASSERT_EQ(beamsplit(rng, 0.0, 1.0).outcome, BsOutcome::different_ports);
    ASSERT_EQ(beamsplit(rng, 1.0, 0.0).outcome, BsOutcome::different_ports);
  }
  EXPECT_THROW(beamsplit(rng, 1.5), DomainError);
  EXPECT_THROW(beamsplit(rng, 0.5, -0.1), DomainError);
}

TEST(Beamsplitter, PartialOverlapBinomial) {
  RandomStream rng(42, 0);
  const std::uint64_t n = 200000;
  std::uint64_t diff = 0, same_c = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto r = beamsplit(rng, 0.5);
    if (r.outcome == BsOutcome::different_ports) {
      ++diff;
      EXPECT_NE(r.port_a, r.port_b);
    } else {
      EXPECT_EQ(r.port_a, r.port_b);
      same_c += r.port_a == 0;
    }
  }
  EXPECT_LT(teststats::binomial_z(diff, n, 0.25), 4.0);
  EXPECT_LT(teststats::binomial_z(same_c, n - diff, 0.5), 4.0);
}

TEST(Beamsplitter, DistinguishableAtLargeDelayChiSquare) {
  const auto c = narrow(1560);
  const OverlapTable t(c, {}, 780, c, {}, 780, 6000);
  RandomStream rng(43, 0);
  std::vector<std::uint64_t> counts;
  std::vector<double> expected;
  for (double d : {3000.0, -3000.0, 4500.0, -5500.0, 8000.0}) {
    std::uint64_t diff = 0;
    const std::uint64_t n = 50000;
    for (std::uint64_t i = 0; i < n; ++i) diff += beamsplit(rng, t(d)).outcome == BsOutcome::different_ports;
    counts.push_back(diff);
    counts.push_back(n - diff);
    expected.push_back(n / 2.0);
    expected.push_back(n / 2.0);
  }
  EXPECT_GT(teststats::chi_square_pvalue(counts, expected, 0), 0.001);
}

TEST(Beamsplitter, SinglePhotonRouting) {
  RandomStream rng(44, 0);
  std::uint64_t c = 0;
  const std::uint64_t n = 100000;
  for (std::uint64_t i = 0; i < n; ++i) c += route_single(rng, true, 0.3) == 0;
  EXPECT_LT(teststats::binomial_z(c, n, 0.3), 4.0);
}

TEST(DipProfile, NoiselessWithinOnePercent) {
  std::mt19937_64 gen(45);
  const auto h = synthetic_dip(gen, 0.78, 714, 2000, false);
  const auto d = dip_profile(h);
  EXPECT_NEAR(d.visibility / 0.78, 1.0, 0.01);
  EXPECT_NEAR(d.width_fwhm_ps / 714, 1.0, 0.01);
  EXPECT_NEAR(d.center_ps, 0, 5);
}

TEST(DipProfile, PoissonOverSeeds) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 gen(static_cast<std::uint64_t>(seed));
    const auto d = dip_profile(synthetic_dip(gen, 0.78, 714, 100, true));
    EXPECT_NEAR(d.visibility, 0.78, 0.05) << seed;
    EXPECT_GT(d.visibility_stderr, 0);
  }
}

TEST(DipProfile, FlatHistogramGivesNoDip) {
  std::mt19937_64 gen(46);
  const auto d = dip_profile(synthetic_dip(gen, 0.0, 714, 200, true));
  EXPECT_NEAR(d.visibility, 0.0, 0.1);
}

TEST(DipProfile, EmptyWingsThrow) {
  auto h = CoincidenceHistogram::empty(45.5, -10000, 10000);
  EXPECT_THROW(dip_profile(h), StatisticsError);
}

TEST(HomSimulator, FourfoldNeverExceedsTwofold) {
  const HomSimulator sim(fast_config(0.08));
  const auto r = sim.run(RandomStream(47, 0), 0.02e12);
  ASSERT_GT(r.fourfold_events, 0u);
  for (std::size_t i = 0; i < r.histogram.size(); ++i) ASSERT_LE(r.histogram.counts[i], r.twofold.counts[i]);
  EXPECT_LE(r.contaminated_trials, r.trials);
}

TEST(HomSimulator, RatesFollowMeanPhotonNumber) {
  const HomSimulator sim(fast_config(0.08));
  EXPECT_NEAR(sim.mean_photons_per_mode(0), 0.08, 1e-12);
  EXPECT_NEAR(sim.pair_rate_hz(0), 0.08 / (coherence_time_ps(1558, 0.010) * 1e-12), 1.0);
  EXPECT_NEAR(sim.overlap(0), 1.0, 1e-3);
}

TEST(HomSimulator, DipWidthExceedsPhotonCoherence) {
  const HomSimulator sim(fast_config(0.01));
  const auto r = sim.run_and_fit(RandomStream(48, 0), 0.2e12);
  EXPECT_GE(r.dip_width_fwhm_ps, r.photon_coherence_ps);
  EXPECT_GT(r.visibility, 0.8);
}

TEST(HomSimulator, VisibilityFallsWithMeanPhotonNumber) {
  std::vector<double> v;
  for (double n : {0.01, 0.04, 0.08, 0.16}) {
    const HomSimulator sim(fast_config(n));
    // Equal four-fold statistics per point: duration scales as 1/n^2.
    const double duration = 32e12 * (0.01 / n) * (0.01 / n);
    const auto r = sim.run_and_fit(RandomStream(49, static_cast<std::uint64_t>(n * 1000)), duration);
    v.push_back(r.visibility);
  }
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i], v[i - 1]) << i;
}

TEST(HomSimulator, Deterministic) {
  const HomSimulator sim(fast_config(0.08));
  const auto a = sim.run(RandomStream(50, 0), 0.02e12, 1);
  const auto b = sim.run(RandomStream(50, 0), 0.02e12, 3);
  EXPECT_EQ(a.histogram.counts, b.histogram.counts);
  EXPECT_EQ(a.twofold.counts, b.twofold.counts);
}

TEST(HomSimulator, ThinWingsAreStatisticsError) {
  auto c = fast_config(0.0001);
  c.min_wing_events = 100;
  const HomSimulator sim(c);
  EXPECT_THROW(sim.run_and_fit(RandomStream(51, 0), 0.001e12), StatisticsError);
}

TEST(HomConfigValidation, RejectsBadValues) {
  auto c = fast_config(0.08);
  c.bs_reflectivity = 1.5;
  EXPECT_THROW(HomSimulator{c}, DomainError);
  c = fast_config(-1);
  EXPECT_THROW(HomSimulator{c}, DomainError);
  c = fast_config(0.08);
  c.source_b.signal_chain = {};
  EXPECT_THROW(HomSimulator{c}, DomainError);
}
