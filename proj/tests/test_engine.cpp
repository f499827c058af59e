#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "pairsim/coincidence.hpp"
#include "pairsim/engine.hpp"
#include "stats.hpp"

using namespace pairsim;

namespace {
FilterChain narrow(double center, double fwhm_pm = 10) {
  return FilterChain{{FilterStage{SpectralProfile{center, fwhm_pm, LineShape::gaussian}, FilterMode::transmit_band, 45, 0}}};
}

PairSource paper_source(double power_mw = 7.0) {
  SourceConfig s;
  s.pump.power_mw = power_mw;
  return PairSource(0, s, narrow(1558), narrow(idler_wavelength(780, 1558)));
}

std::size_t count_role(const std::vector<PhotonEvent>& ev, PhotonRole r) {
  return static_cast<std::size_t>(std::count_if(ev.begin(), ev.end(), [r](const PhotonEvent& e) { return e.role == r; }));
}
} // namespace

TEST(RandomStreams, ReproducibleAndDistinct) {
  RandomStream a(5, 1), b(5, 1), c(5, 2);
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b(), z = c();
    EXPECT_EQ(x, y);
    EXPECT_NE(x, z);
  }
  auto d1 = RandomStream(5, 1).derive(3), d2 = RandomStream(5, 1).derive(3), d3 = RandomStream(5, 1).derive(4);
  EXPECT_EQ(d1(), d2());
  EXPECT_NE(RandomStream(5, 1).derive(3)(), d3());
}

TEST(RandomStreams, DerivedStreamsUncorrelated) {
  RandomStream a = RandomStream(9, 0).derive(0), b = RandomStream(9, 0).derive(1);
  const int n = 100000;
  double sab = 0;
  for (int i = 0; i < n; ++i) sab += (a.uniform() - 0.5) * (b.uniform() - 0.5);
  // Correlation coefficient of independent uniforms ~ N(0, 1/n).
  EXPECT_LT(std::abs(sab / n * 12.0) * std::sqrt(n), 4.0);
}

TEST(GeneratePairs, CountIsPoissonAroundInBandRate) {
  const auto src = paper_source();
  const double duration_ps = 0.01e12;
  const double mean = src.pair_rate_hz() * 0.01;
  EXPECT_NEAR(src.pair_rate_hz(), in_band_pair_rate(SourceConfig{}, 0.010), 1e-6 * src.pair_rate_hz());
  double sum = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const auto ev = generate_pairs(RandomStream(seed, 0), src, duration_ps);
    const double n = static_cast<double>(count_role(ev, PhotonRole::signal));
    EXPECT_LT(teststats::poisson_z(n, mean), 4.0);
    sum += n;
  }
  EXPECT_LT(std::abs(sum / 20 - mean) / std::sqrt(mean / 20), 3.0);
}

TEST(GeneratePairs, ZeroDurationAndZeroRate) {
  EXPECT_TRUE(generate_pairs(RandomStream(1, 0), paper_source(), 0.0).empty());
  EXPECT_TRUE(generate_pairs(RandomStream(1, 0), paper_source(0.0), 1e9).empty());
}

TEST(GeneratePairs, DoublingPumpDoublesCount) {
  const double d = 0.005e12;
  const double a = static_cast<double>(count_role(generate_pairs(RandomStream(2, 0), paper_source(7), d), PhotonRole::signal));
  const double b = static_cast<double>(count_role(generate_pairs(RandomStream(3, 0), paper_source(14), d), PhotonRole::signal));
  EXPECT_NEAR(b / a, 2.0, 5 * 2.0 * std::sqrt(1 / a + 1 / b));
}

TEST(GeneratePairs, TimeOrderedSharedEmissionAndEnergyConservation) {
  const auto ev = generate_pairs(RandomStream(4, 0), paper_source(), 0.001e12, 1, 0.0002e12);
  ASSERT_FALSE(ev.empty());
  for (std::size_t i = 1; i < ev.size(); ++i) ASSERT_LE(ev[i - 1].emission_time_ps, ev[i].emission_time_ps);
  for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
    if (ev[i].role == PhotonRole::signal && ev[i + 1].role == PhotonRole::idler) {
      ASSERT_EQ(ev[i].pair_id, ev[i + 1].pair_id);
      ASSERT_EQ(ev[i].emission_time_ps, ev[i + 1].emission_time_ps);
      const double rel = std::abs(1 / 780.0 - 1 / ev[i].wavelength_nm - 1 / ev[i + 1].wavelength_nm) * 780.0;
      ASSERT_LT(rel, 1e-12);
    }
  }
}

TEST(GeneratePairs, InterArrivalsExponentialKs) {
  const auto src = paper_source(0.7);
  const double rate = src.pair_rate_hz() * 1e-12; // per ps
  const double duration = 1.05e5 / rate;
  auto ev = select_role(generate_pairs(RandomStream(5, 0), src, duration, 1, duration + 1), PhotonRole::signal);
  std::vector<double> gaps;
  for (std::size_t i = 1; i < ev.size() && gaps.size() < 100000; ++i)
    gaps.push_back(ev[i].emission_time_ps - ev[i - 1].emission_time_ps);
  ASSERT_EQ(gaps.size(), 100000u);
  EXPECT_GT(teststats::ks_pvalue(gaps, [rate](double x) { return 1 - std::exp(-rate * x); }), 0.01);
}

TEST(GeneratePairs, ParallelMatchesSerial) {
  const auto src = paper_source(0.7);
  const auto a = generate_pairs(RandomStream(6, 0), src, 0.05e12, 1, 0.005e12);
  const auto b = generate_pairs(RandomStream(6, 0), src, 0.05e12, 4, 0.005e12);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].emission_time_ps, b[i].emission_time_ps);
    ASSERT_EQ(a[i].pair_id, b[i].pair_id);
  }
}

TEST(ApplyLoss, Limits) {
  const auto ev = generate_pairs(RandomStream(7, 0), paper_source(0.07), 0.01e12);
  RandomStream rng(7, 1);
  EXPECT_EQ(apply_loss(rng, ev, 1.0).size(), ev.size());
  EXPECT_TRUE(apply_loss(rng, ev, 0.0).empty());
}

TEST(ApplyLoss, PairSurvivalIsTSquared) {
  // 1e6 pairs with unit idler acceptance (unfiltered source).
  SourceConfig s;
  const PairSource src(0, s, {}, {});
  const double duration = 1e6 / (src.pair_rate_hz() * 1e-12);
  const auto ev = generate_pairs(RandomStream(8, 0), src, duration);
  RandomStream rng(8, 1);
  const auto kept = apply_loss(rng, ev, 0.13);
  std::uint64_t pairs = count_role(ev, PhotonRole::signal), both = 0;
  for (std::size_t i = 0; i + 1 < kept.size(); ++i)
    if (kept[i].pair_id == kept[i + 1].pair_id) ++both;
  EXPECT_NEAR(static_cast<double>(both) / pairs, 0.0169, 0.0005);
  EXPECT_LT(teststats::binomial_z(both, pairs, 0.0169), 4.0);
}

TEST(ApplyLoss, ThinnedGenerationMatchesLossStatistics) {
  const auto src = paper_source(0.7);
  const double d = 0.2e12;
  const double ks = 0.3, ki = 0.2;
  const auto ev = generate_surviving_pairs(RandomStream(9, 0), src, d, ks, ki);
  const double n = src.pair_rate_hz() * d * 1e-12;
  const double acc = src.sampler().mean_acceptance();
  const double signals = static_cast<double>(count_role(ev, PhotonRole::signal));
  const double idlers = static_cast<double>(count_role(ev, PhotonRole::idler));
  EXPECT_LT(teststats::poisson_z(signals, n * ks), 4.0);
  EXPECT_LT(teststats::poisson_z(idlers, n * ki * acc), 4.0);
}

TEST(Detect, NothingInNothingOut) {
  DetectorConfig d;
  d.efficiency = 0;
  d.dark_rate_hz = 0;
  RandomStream rng(10, 0);
  const auto ev = generate_pairs(RandomStream(10, 1), paper_source(0.07), 0.01e12);
  EXPECT_TRUE(detect(rng, ev, d, 0.01e12).empty());
}

TEST(Detect, DarkCountsArePoisson) {
  DetectorConfig d;
  d.efficiency = 0;
  d.dark_rate_hz = 1000;
  d.dead_time_ns = 0;
  RandomStream rng(11, 0);
  const auto clicks = detect(rng, std::vector<PhotonEvent>{}, d, 10e12);
  EXPECT_LT(teststats::poisson_z(static_cast<double>(clicks.size()), 1e4), 3.0);
  for (const auto& c : clicks) ASSERT_TRUE(c.origin.dark);
}

TEST(Detect, DeadTimeAndOrderingProperty) {
  RandomStream gen(12, 0);
  for (int trial = 0; trial < 40; ++trial) {
    DetectorConfig d;
    d.efficiency = gen.uniform();
    d.dark_rate_hz = 1e5 * gen.uniform();
    d.jitter_fwhm_ps = 500 * gen.uniform();
    d.dead_time_ns = 1000 * gen.uniform() * gen.uniform();
    const double power = 0.01 + 2 * gen.uniform();
    const auto ev = generate_pairs(gen.derive(static_cast<std::uint64_t>(trial)), paper_source(power), 0.002e12);
    RandomStream rng = gen.derive(1000 + static_cast<std::uint64_t>(trial));
    const auto clicks = detect(rng, ev, d, 0.002e12);
    for (std::size_t i = 1; i < clicks.size(); ++i) {
      ASSERT_GT(clicks[i].timestamp_ps, clicks[i - 1].timestamp_ps);
      ASSERT_GE(clicks[i].timestamp_ps - clicks[i - 1].timestamp_ps, d.dead_time_ps());
    }
  }
}

TEST(Detect, UnfilteredCoincidencePeakIsJitterLimited) {
  SourceConfig s;
  s.pump.power_mw = 0.005;
  const PairSource src(0, s, {}, {});
  EXPECT_LT(src.photon_coherence_ps(), 0.05);
  DetectorConfig d;
  d.efficiency = 1.0;
  d.dark_rate_hz = 0;
  d.dead_time_ns = 0;
  d.jitter_fwhm_ps = 80.0 / std::sqrt(2.0);
  const double duration = 0.05e12;
  const auto ev = generate_surviving_pairs(RandomStream(13, 0), src, duration, 0.03, 0.03);
  RandomStream r1(13, 1), r2(13, 2);
  const auto a = detect(r1, select_role(ev, PhotonRole::signal), d, duration, 0);
  const auto b = detect(r2, select_role(ev, PhotonRole::idler), d, duration, 1);
  const auto fit = fit_peak(histogram(a, b, 10, -1000, 1000));
  EXPECT_NEAR(fit.fwhm_ps / 80.0, 1.0, 0.05);
}

TEST(Detect, SeedDeterminismByteExact) {
  auto run = [] {
    DetectorConfig d;
    d.dark_rate_hz = 1e4;
    const auto ev = generate_pairs(RandomStream(14, 0), paper_source(0.7), 0.01e12, 3, 0.001e12);
    RandomStream rng(14, 1);
    std::ostringstream out;
    write_event_dump(out, detect(rng, ev, d, 0.01e12));
    return out.str();
  };
  const std::string a = run(), b = run();
  EXPECT_GT(a.size(), 100u);
  EXPECT_EQ(a, b);
}

TEST(WavePacket, GaussianWidthAndTabulatedShapes) {
  RandomStream rng(15, 0);
  const WavePacketSampler g(LineShape::gaussian, 357);
  double s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = g(rng);
    s2 += x * x;
  }
  EXPECT_NEAR(std::sqrt(s2 / n) * 2.354820045, 357, 357 * 0.01);
  // Tabulated shapes: quantiles scale linearly with the packet width, and the
  // packet is symmetric.
  const WavePacketSampler l1(LineShape::lorentzian, 200), l2(LineShape::lorentzian, 400);
  std::vector<double> a(n), b(n);
  for (auto& x : a) x = l1(rng);
  for (auto& x : b) x = l2(rng);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (double q : {0.1, 0.25, 0.75, 0.9}) {
    const auto k = static_cast<std::size_t>(q * n);
    EXPECT_NEAR(b[k] / a[k], 2.0, 0.06) << q;
    EXPECT_NEAR(a[k], -a[n - 1 - k], 0.03 * std::abs(a[k]) + 1.0) << q;
  }
}

TEST(PairSource, CoherenceBookkeeping) {
  const FilterChain c = narrow(1560);
  SourceConfig s;
  const PairSource src(0, s, c, c);
  EXPECT_NEAR(src.pair_coherence_ps(), coherence_time_ps(1560, 0.010 / std::sqrt(2.0)), 3.0);
  EXPECT_NEAR(src.photon_coherence_ps(), src.pair_coherence_ps() / std::sqrt(2.0), 1e-9);
}
