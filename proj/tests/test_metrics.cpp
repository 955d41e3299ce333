#include <gtest/gtest.h>

#include <complex>
#include <sstream>

#include "inrpan/metrics.hpp"
#include "inrpan/synth.hpp"
#include "test_support.hpp"

using namespace inrpan;

namespace {

MsImage random_ms(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, float lo = 0.05f,
                  float hi = 1.0f) {
  return MsImage::from_values(c, h, w, test::random_values(c * h * w, seed, lo, hi));
}

MsImage add_noise(const MsImage& img, double amplitude, std::uint64_t seed) {
  MsImage out = img;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, amplitude);
  for (auto& v : out.data) v = static_cast<float>(v + n(rng));
  return out;
}

// Direct closed form of Q over one window, then averaged; no shared code.
double q_oracle(std::span<const float> x, std::span<const float> y, std::size_t h, std::size_t w,
                std::size_t win) {
  double acc = 0;
  int count = 0;
  for (std::size_t i = 0; i + win <= h; ++i)
    for (std::size_t j = 0; j + win <= w; ++j) {
      std::vector<double> a, b;
      for (std::size_t u = i; u < i + win; ++u)
        for (std::size_t v = j; v < j + win; ++v) {
          a.push_back(x[u * w + v]);
          b.push_back(y[u * w + v]);
        }
      const double n = static_cast<double>(a.size());
      double ma = 0, mb = 0;
      for (std::size_t k = 0; k < a.size(); ++k) ma += a[k] / n, mb += b[k] / n;
      double va = 0, vb = 0, cab = 0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        va += (a[k] - ma) * (a[k] - ma) / n;
        vb += (b[k] - mb) * (b[k] - mb) / n;
        cab += (a[k] - ma) * (b[k] - mb) / n;
      }
      acc += 4 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST(QIndex, SelfIsOne) {
  auto x = random_ms(1, 16, 16, 1);
  EXPECT_NEAR(q_index(x.data, x.data, 16, 16, 8), 1.0, 1e-12);
}

TEST(QIndex, AnticorrelatedBelowOne) {
  auto x = random_ms(1, 16, 16, 2);
  double mean = 0;
  for (float v : x.data) mean += v / 256.0;
  std::vector<float> y(x.data.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(2 * mean - x.data[i]);
  EXPECT_LT(q_index(x.data, y, 16, 16, 16), 0.0);
  EXPECT_LT(q_index(x.data, y, 16, 16, 8), 1.0);
}

TEST(QIndex, MatchesScalarClosedForm) {
  auto x = random_ms(1, 8, 8, 3);
  auto y = random_ms(1, 8, 8, 4);
  EXPECT_NEAR(q_index(x.data, y.data, 8, 8, 8), q_oracle(x.data, y.data, 8, 8, 8), 1e-12);
  auto a = random_ms(1, 12, 10, 5);
  auto b = add_noise(a, 0.1, 6);
  EXPECT_NEAR(q_index(a.data, b.data, 12, 10, 4), q_oracle(a.data, b.data, 12, 10, 4), 1e-12);
}

TEST(QIndex, SymmetricAndWindowClamped) {
  auto x = random_ms(1, 10, 9, 7);
  auto y = random_ms(1, 10, 9, 8);
  EXPECT_DOUBLE_EQ(q_index(x.data, y.data, 10, 9, 4), q_index(y.data, x.data, 10, 9, 4));
  // a window larger than the image shrinks to the image
  EXPECT_DOUBLE_EQ(q_index(x.data, y.data, 10, 9, 32), q_oracle(x.data, y.data, 10, 9, 9));
}

TEST(QIndex, ConstantWindows) {
  std::vector<float> c(16, 0.5f), d(16, 0.25f), z(16, 0.0f);
  EXPECT_EQ(q_index(c, c, 4, 4, 4), 1.0);
  EXPECT_EQ(q_index(c, d, 4, 4, 4), 0.0);  // skipped -> no windows
  EXPECT_EQ(q_index(z, z, 4, 4, 4), 0.0);
  EXPECT_THROW(q_index(c, std::vector<float>(15), 4, 4, 4), ShapeError);
  EXPECT_THROW(q_index(c, d, 4, 4, 0), std::invalid_argument);
}

TEST(Hypercomplex, AlgebraBasics) {
  // complex case
  const double a[] = {1, 2}, b[] = {3, -1};
  auto p = hc_mul(a, b);
  EXPECT_DOUBLE_EQ(p[0], 5);
  EXPECT_DOUBLE_EQ(p[1], 5);
  // norm is multiplicative up to octonions
  for (std::size_t n : {4u, 8u}) {
    auto x = test::random_values(n, 10 + n);
    auto y = test::random_values(n, 20 + n);
    std::vector<double> xd(x.begin(), x.end()), yd(y.begin(), y.end());
    EXPECT_NEAR(hc_norm(hc_mul(xd, yd)), hc_norm(xd) * hc_norm(yd), 1e-12);
    auto xx = hc_mul(xd, hc_conj(xd));
    EXPECT_NEAR(xx[0], hc_norm(xd) * hc_norm(xd), 1e-12);
    for (std::size_t k = 1; k < n; ++k) EXPECT_NEAR(xx[k], 0.0, 1e-12);
  }
  EXPECT_EQ(next_power_of_two(3), 4u);
  EXPECT_EQ(next_power_of_two(8), 8u);
}

TEST(Q2n, SelfIsOne) {
  for (std::size_t c : {1u, 3u, 4u, 8u}) {
    auto x = random_ms(c, 12, 12, 30 + c);
    EXPECT_NEAR(q2n(x, x, 6), 1.0, 1e-9) << c;
  }
}

TEST(Q2n, SingleBandIsModulusOfQ) {
  auto x = random_ms(1, 10, 10, 40);
  auto y = add_noise(x, 0.05, 41);
  EXPECT_NEAR(q2n(x, y, 10), std::abs(q_index(x.data, y.data, 10, 10, 10)), 1e-12);
  EXPECT_NEAR(q2n(x, y, 4), q_index(x.data, y.data, 10, 10, 4), 1e-9);
  auto z = random_ms(1, 10, 10, 42);
  EXPECT_NEAR(q2n(x, z, 10), std::abs(q_index(x.data, z.data, 10, 10, 10)), 1e-12);
}

TEST(Q2n, TwoBandMatchesComplexArithmetic) {
  auto x = random_ms(2, 6, 7, 50);
  auto y = random_ms(2, 6, 7, 51);
  const std::size_t win = 4, area = 42;
  double acc = 0;
  int count = 0;
  for (std::size_t i = 0; i + win <= 6; ++i)
    for (std::size_t j = 0; j + win <= 7; ++j) {
      std::complex<double> mx, my;
      for (std::size_t u = i; u < i + win; ++u)
        for (std::size_t v = j; v < j + win; ++v) {
          mx += std::complex<double>(x.data[u * 7 + v], x.data[area + u * 7 + v]) / 16.0;
          my += std::complex<double>(y.data[u * 7 + v], y.data[area + u * 7 + v]) / 16.0;
        }
      std::complex<double> cov;
      double vx = 0, vy = 0;
      for (std::size_t u = i; u < i + win; ++u)
        for (std::size_t v = j; v < j + win; ++v) {
          const auto dx = std::complex<double>(x.data[u * 7 + v], x.data[area + u * 7 + v]) - mx;
          const auto dy = std::complex<double>(y.data[u * 7 + v], y.data[area + u * 7 + v]) - my;
          cov += dx * std::conj(dy) / 16.0;
          vx += std::norm(dx) / 16.0;
          vy += std::norm(dy) / 16.0;
        }
      acc += 4 * std::abs(cov) * std::abs(mx) * std::abs(my) / ((vx + vy) * (std::norm(mx) + std::norm(my)));
      ++count;
    }
  EXPECT_NEAR(q2n(x, y, win), acc / count, 1e-12);
}

TEST(Q2n, FourBandMatchesPerPixelHypercomplexProducts) {
  auto x = random_ms(3, 5, 5, 60);  // padded to 4 components
  auto y = random_ms(3, 5, 5, 61);
  const std::size_t win = 5, area = 25;
  std::vector<double> mx(4), my(4), cov(4);
  for (std::size_t p = 0; p < area; ++p)
    for (std::size_t b = 0; b < 3; ++b) {
      mx[b] += x.data[b * area + p] / 25.0;
      my[b] += y.data[b * area + p] / 25.0;
    }
  double vx = 0, vy = 0;
  for (std::size_t p = 0; p < area; ++p) {
    std::vector<double> dx(4), dy(4);
    for (std::size_t b = 0; b < 3; ++b) {
      dx[b] = x.data[b * area + p] - mx[b];
      dy[b] = y.data[b * area + p] - my[b];
    }
    auto prod = hc_mul(dx, hc_conj(dy));
    for (std::size_t k = 0; k < 4; ++k) cov[k] += prod[k] / 25.0;
    vx += hc_norm(dx) * hc_norm(dx) / 25.0;
    vy += hc_norm(dy) * hc_norm(dy) / 25.0;
  }
  const double nx = hc_norm(mx), ny = hc_norm(my);
  const double expect = 4 * hc_norm(cov) * nx * ny / ((vx + vy) * (nx * nx + ny * ny));
  EXPECT_NEAR(q2n(x, y, win), expect, 1e-12);
}

TEST(Q2n, ShapeMismatch) {
  EXPECT_THROW(q2n(MsImage(2, 4, 4), MsImage(3, 4, 4)), ShapeError);
}

TEST(Sam, ClosedForms) {
  auto x = random_ms(4, 6, 6, 70);
  EXPECT_NEAR(sam(x, x), 0.0, 1e-6);
  MsImage a = MsImage::from_values(2, 1, 1, {1, 0});
  MsImage b = MsImage::from_values(2, 1, 1, {1, 1});
  EXPECT_NEAR(sam(a, b), 45.0, 1e-9);
  MsImage twice = x;
  for (auto& v : twice.data) v *= 2;
  EXPECT_NEAR(sam(x, twice), 0.0, 1e-5);
  auto y = random_ms(4, 6, 6, 71);
  EXPECT_DOUBLE_EQ(sam(x, y), sam(y, x));
}

TEST(Sam, ZeroPixelsSkipped) {
  MsImage a = MsImage::from_values(2, 1, 2, {0, 1, 0, 0});
  MsImage b = MsImage::from_values(2, 1, 2, {0, 1, 0, 1});
  EXPECT_NEAR(sam(a, b), 45.0, 1e-9);
}

TEST(Ergas, ValuesAndLinearityInRatio) {
  auto x = random_ms(3, 5, 5, 80);
  EXPECT_EQ(ergas(x, x, 4), 0.0);
  auto y = random_ms(3, 5, 5, 81);
  EXPECT_NEAR(ergas(x, y, 8), ergas(x, y, 4) / 2, 1e-12);
}

TEST(Ergas, TinyScalarCase) {
  MsImage f = MsImage::from_values(2, 2, 1, {1, 2, 3, 5});
  MsImage r = MsImage::from_values(2, 2, 1, {1, 1, 4, 4});
  // band 0: rmse sqrt(1/2), mean 1; band 1: rmse 1, mean 4
  const double expect = 100.0 / 4.0 * std::sqrt((0.5 + 1.0 / 16.0) / 2.0);
  EXPECT_NEAR(ergas(f, r, 4), expect, 1e-12);
}

TEST(Scc, IdentitiesAndOracle) {
  auto x = random_ms(2, 8, 8, 90);
  EXPECT_NEAR(scc(x, x), 1.0, 1e-12);
  MsImage shifted = x;
  for (auto& v : shifted.data) v += 0.3f;
  EXPECT_NEAR(scc(x, shifted), 1.0, 1e-5);

  auto y = random_ms(1, 4, 4, 91);
  auto z = random_ms(1, 4, 4, 92);
  // 4x4 -> 2x2 valid interior
  auto lap = [](const MsImage& m) {
    std::vector<double> o;
    for (int i = 1; i < 3; ++i)
      for (int j = 1; j < 3; ++j) {
        double s = 8.0 * m.data[i * 4 + j];
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            if (di || dj) s -= m.data[(i + di) * 4 + j + dj];
        o.push_back(s);
      }
    return o;
  };
  const auto a = lap(y), b = lap(z);
  double ma = 0, mb = 0;
  for (int k = 0; k < 4; ++k) ma += a[k] / 4, mb += b[k] / 4;
  double sab = 0, saa = 0, sbb = 0;
  for (int k = 0; k < 4; ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  EXPECT_NEAR(scc(y, z), sab / std::sqrt(saa * sbb), 1e-9);
}

TEST(NoReference, SelfConsistentFusionHasZeroSpectralDistortion) {
  auto pair = synth_pair(5, 8, 8, 4, sensor_by_name("synthetic"));
  EXPECT_NEAR(d_lambda(*pair.ground_truth, pair.lrms, pair.sensor), 0.0, 1e-9);
}

TEST(NoReference, RangesOnRandomInputs) {
  auto pair = synth_pair(6, 8, 8, 4, sensor_by_name("synthetic"));
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto f = random_ms(4, 32, 32, 100 + s);
    const double dl = d_lambda(f, pair.lrms, pair.sensor);
    const double ds = d_s(f, pair.pan, pair.lrms, pair.sensor);
    EXPECT_GE(dl, 0.0);
    EXPECT_LE(dl, 1.0);
    EXPECT_GE(ds, 0.0);
    EXPECT_LE(ds, 1.0);
  }
}

TEST(NoReference, DLambdaIsOneMinusQ2nOfDegradedFusion) {
  auto pair = synth_pair(7, 8, 8, 4, sensor_by_name("synthetic"));
  auto f = add_noise(*pair.ground_truth, 0.05, 8);
  const auto degraded = degrade(f, ms_kernel(pair.sensor));
  EXPECT_NEAR(d_lambda(f, pair.lrms, pair.sensor, 8), 1.0 - q2n(degraded, pair.lrms, 8), 1e-12);
}

TEST(NoReference, DsMatchesScalarOracle) {
  auto pair = synth_pair(9, 8, 8, 4, sensor_by_name("synthetic"));
  auto f = add_noise(*pair.ground_truth, 0.03, 10);
  const std::size_t win = 16, lr_win = 4;
  const PanImage pan_lr = degrade(pair.pan, pan_kernel(pair.sensor));
  double high = 0, low = 0;
  for (std::size_t b = 0; b < 4; ++b) {
    high += q_oracle(f.band(b), pair.pan.data, 32, 32, win) / 4;
    low += q_oracle(pair.lrms.band(b), pan_lr.data, 8, 8, lr_win) / 4;
  }
  EXPECT_NEAR(d_s(f, pair.pan, pair.lrms, pair.sensor, win), std::abs(high - low), 1e-9);
  EXPECT_EQ(low_resolution_window(32, 4), 8u);
  EXPECT_EQ(low_resolution_window(4, 4), 2u);
}

TEST(NoReference, DsZeroWhenBothScalesAgree) {
  // a fused image whose per-band Q against PAN equals the low-resolution Q
  // at both scales: every band a positive affine copy of PAN, and the LRMS
  // an affine copy of the degraded PAN
  auto pair = synth_pair(11, 8, 8, 4, sensor_by_name("synthetic"));
  const PanImage pan_lr = degrade(pair.pan, pan_kernel(pair.sensor));
  MsImage f(4, 32, 32), lr(4, 8, 8);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t i = 0; i < 32 * 32; ++i) f.band(b)[i] = pair.pan.data[i];
    for (std::size_t i = 0; i < 64; ++i) lr.band(b)[i] = pan_lr.data[i];
  }
  EXPECT_NEAR(d_s(f, pair.pan, lr, pair.sensor), 0.0, 1e-9);
}

TEST(NoReference, Hqnr) {
  EXPECT_EQ(hqnr(0, 0), 1.0);
  EXPECT_EQ(hqnr(1, 0.4), 0.0);
  EXPECT_NEAR(hqnr(0.0187, 0.0233), 0.9585, 1.5e-4);
}

TEST(Evaluate, GroundTruthAgainstItself) {
  auto pair = synth_pair(12, 8, 8, 4, sensor_by_name("synthetic"));
  auto r = evaluate(*pair.ground_truth, pair, pair.ground_truth);
  EXPECT_NEAR(r.d_lambda, 0.0, 1e-9);
  ASSERT_TRUE(r.sam_degrees && r.ergas && r.q2n && r.scc);
  EXPECT_NEAR(*r.sam_degrees, 0.0, 1e-6);
  EXPECT_EQ(*r.ergas, 0.0);
  EXPECT_NEAR(*r.q2n, 1.0, 1e-9);
  EXPECT_NEAR(*r.scc, 1.0, 1e-9);
  EXPECT_NEAR(r.hqnr, (1 - r.d_lambda) * (1 - r.d_s), 1e-12);
}

TEST(Evaluate, CsvRow) {
  MetricsReport r;
  r.d_lambda = 0.25;
  r.d_s = 0.5;
  r.hqnr = 0.375;
  std::ostringstream out;
  r.write_csv_row(out);
  EXPECT_EQ(out.str(), "0.25,0.5,0.375,,,,\n");
  EXPECT_STREQ(MetricsReport::kCsvHeader, "d_lambda,d_s,hqnr,q2n,sam,ergas,scc");
}

TEST(Evaluate, NoiseMonotonicallyWorsensSamAndErgas) {
  auto ref = random_ms(4, 16, 16, 13, 0.2f, 0.8f);
  const double amps[] = {0.01, 0.03, 0.06, 0.1};
  double prev_sam = 0, prev_ergas = 0;
  for (double a : amps) {
    double s = 0, e = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto noisy = add_noise(ref, a, 1000 + seed);
      s += sam(noisy, ref) / 20;
      e += ergas(noisy, ref, 4) / 20;
    }
    EXPECT_GT(s, prev_sam);
    EXPECT_GT(e, prev_ergas);
    prev_sam = s;
    prev_ergas = e;
  }
}

TEST(HqnrMap, ShapeAndRange) {
  auto pair = synth_pair(14, 16, 16, 4, sensor_by_name("synthetic"));
  Tensor map = hqnr_map(*pair.ground_truth, pair, 8);
  EXPECT_EQ(map.shape(), (Shape{2, 2}));
  for (float v : map.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Baselines, NearestIdentityAndConstants) {
  auto x = random_ms(3, 5, 6, 15);
  EXPECT_EQ(baseline_resample(x, 1.0, ResampleMethod::nearest).data, x.data);
  MsImage c(2, 4, 4, 0.3f);
  for (auto m : {ResampleMethod::nearest, ResampleMethod::bicubic})
    for (double n : {1.6, 2.0, 3.4}) {
      auto y = baseline_resample(c, n, m);
      EXPECT_EQ(y.height, static_cast<std::size_t>(std::floor(4 * n + 0.5)));
      for (float v : y.data) EXPECT_NEAR(v, 0.3f, 1e-6);
    }
}

TEST(Baselines, NearestReplicatesBlocks) {
  MsImage x = MsImage::from_values(1, 2, 2, {1, 2, 3, 4});
  auto y = baseline_resample(x, 2.0, ResampleMethod::nearest);
  EXPECT_EQ(y.data, (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Baselines, BicubicReproducesLinearRampInInterior) {
  MsImage ramp(1, 10, 10);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) ramp.at(0, i, j) = static_cast<float>(0.05 * i + 0.02 * j);
  auto y = baseline_resample(ramp, 2.0, ResampleMethod::bicubic);
  for (std::size_t i = 4; i < 16; ++i)
    for (std::size_t j = 4; j < 16; ++j) {
      const double py = (i + 0.5) / 2 - 0.5, px = (j + 0.5) / 2 - 0.5;
      EXPECT_NEAR(y.at(0, i, j), 0.05 * py + 0.02 * px, 1e-4);
    }
  EXPECT_THROW(baseline_resample(ramp, 0.0, ResampleMethod::bicubic), std::invalid_argument);
}
