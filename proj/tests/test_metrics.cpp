#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mtrans/metrics.hpp"
#include "mtrans/rng.hpp"
#include "mtrans/tensor.hpp"

using namespace mtrans;

namespace {

Tensor random_image(size_t H, size_t W, Rng& rng, double lo = 0.0,
                    double hi = 1.0) {
  std::vector<double> v(H * W);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor::from_data({H, W}, v);
}

/// SSIM oracle: two-pass moment computation over each valid window with a
/// separately constructed (1-D outer product) Gaussian kernel.
double ssim_oracle(const Tensor& x, const Tensor& y, double peak) {
  const size_t H = x.dim(0), W = x.dim(1), win = 11;
  std::vector<double> g1(win);
  double s1 = 0.0;
  for (size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s1 += g1[i];
  }
  for (auto& v : g1) v /= s1;
  const double c1 = 0.0001 * peak * peak, c2 = 0.0009 * peak * peak;
  double total = 0.0;
  size_t cnt = 0;
  for (size_t r = 0; r + win <= H; ++r)
    for (size_t c = 0; c + win <= W; ++c) {
      double mx = 0.0, my = 0.0;
      for (size_t i = 0; i < win; ++i)
        for (size_t j = 0; j < win; ++j) {
          const double wij = g1[i] * g1[j];
          mx += wij * x.at((r + i) * W + c + j);
          my += wij * y.at((r + i) * W + c + j);
        }
      double vx = 0.0, vy = 0.0, cov = 0.0;
      for (size_t i = 0; i < win; ++i)
        for (size_t j = 0; j < win; ++j) {
          const double wij = g1[i] * g1[j];
          const double dx = x.at((r + i) * W + c + j) - mx;
          const double dy = y.at((r + i) * W + c + j) - my;
          vx += wij * dx * dx;
          vy += wij * dy * dy;
          cov += wij * dx * dy;
        }
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++cnt;
    }
  return total / static_cast<double>(cnt);
}

/// Two-sided tail of Student's t by Simpson integration of the density.
double t_tail_oracle(double t, double nu) {
  const double lo = std::abs(t), hi = lo + 400.0;
  const size_t steps = 400000;  // even
  const double h = (hi - lo) / static_cast<double>(steps);
  const double logc = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                      0.5 * std::log(nu * 3.14159265358979323846);
  auto pdf = [&](double u) {
    return std::exp(logc - (nu + 1.0) / 2.0 * std::log1p(u * u / nu));
  };
  double acc = pdf(lo) + pdf(hi);
  for (size_t i = 1; i < steps; ++i) {
    acc += pdf(lo + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  }
  return 2.0 * acc * h / 3.0;
}

}  // namespace

TEST_CASE("psnr closed forms and formula oracle") {
  Tensor zeros = Tensor::zeros({16, 16});
  Tensor ones = Tensor::full({16, 16}, 1.0);
  CHECK(psnr(zeros, ones, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  // uniform error of 0.1 gives MSE 0.01 -> 20 dB
  std::vector<double> v(256, 0.1);
  CHECK(psnr(Tensor::from_data({16, 16}, v), zeros, 1.0) ==
        doctest::Approx(20.0).epsilon(1e-12));

  Rng rng(31);
  Tensor a = random_image(12, 12, rng);
  Tensor b = random_image(12, 12, rng);
  long double mse = 0.0L;
  for (size_t i = 0; i < a.size(); ++i) {
    const long double d = a.at(i) - b.at(i);
    mse += d * d;
  }
  mse /= 144.0L;
  const double want = 10.0 * std::log10(2.5 * 2.5 / static_cast<double>(mse));
  CHECK(psnr(a, b, 2.5) == doctest::Approx(want).epsilon(1e-10));

  CHECK(std::isinf(psnr(a, a, 1.0)));
  CHECK_THROWS_AS(psnr(a, b, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(psnr(a, Tensor::zeros({3, 3}), 1.0), std::invalid_argument);
}

TEST_CASE("psnr decreases monotonically with noise amplitude") {
  Rng rng(32);
  Tensor ref = random_image(16, 16, rng);
  std::vector<double> noise(256);
  for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.3, 0.8}) {
    std::vector<double> v(256);
    for (size_t i = 0; i < 256; ++i) v[i] = ref.at(i) + amp * noise[i];
    const double cur = psnr(Tensor::from_data({16, 16}, v), ref, 1.0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("ssim identities and oracle agreement") {
  Rng rng(33);
  Tensor x = random_image(16, 16, rng);
  CHECK(ssim(x, x, 1.0) == doctest::Approx(1.0).epsilon(1e-12));

  // constant luminance shift must cost similarity
  std::vector<double> shifted(x.data(), x.data() + x.size());
  for (auto& v : shifted) v += 0.3;
  const double s = ssim(Tensor::from_data({16, 16}, shifted), x, 1.0);
  CHECK(s < 1.0);

  Tensor y = random_image(16, 16, rng);
  CHECK(ssim(x, y, 1.0) == doctest::Approx(ssim_oracle(x, y, 1.0)).epsilon(1e-10));
  CHECK(ssim(x, y, 1.0) == doctest::Approx(ssim(y, x, 1.0)).epsilon(1e-12));
  CHECK(ssim(x, y, 1.0) <= 1.0);

  Tensor z = random_image(20, 13, rng);
  Tensor w = random_image(20, 13, rng);
  CHECK(ssim(z, w, 0.7) == doctest::Approx(ssim_oracle(z, w, 0.7)).epsilon(1e-10));

  CHECK_THROWS_AS(ssim(Tensor::zeros({8, 8}), Tensor::zeros({8, 8}), 1.0),
                  std::invalid_argument);
}

TEST_CASE("nmse identities and scale invariance") {
  Rng rng(34);
  Tensor ref = random_image(10, 10, rng, 0.1, 1.0);
  CHECK(nmse(ref, ref) == 0.0);
  CHECK(nmse(Tensor::zeros({10, 10}), ref) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> twice(ref.data(), ref.data() + ref.size());
  for (auto& v : twice) v *= 2.0;
  CHECK(nmse(Tensor::from_data({10, 10}, twice), ref) ==
        doctest::Approx(1.0).epsilon(1e-14));

  Tensor x = random_image(10, 10, rng);
  const double base = nmse(x, ref);
  // power-of-two scaling is exact in floating point
  std::vector<double> xs(x.data(), x.data() + x.size());
  std::vector<double> rs(ref.data(), ref.data() + ref.size());
  for (auto& v : xs) v *= 4.0;
  for (auto& v : rs) v *= 4.0;
  CHECK(nmse(Tensor::from_data({10, 10}, xs), Tensor::from_data({10, 10}, rs)) ==
        base);

  CHECK_THROWS_AS(nmse(x, Tensor::zeros({10, 10})), std::invalid_argument);
}

TEST_CASE("regularized incomplete beta basics") {
  for (double x : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) {
    CHECK(reg_inc_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(reg_inc_beta(0.5, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  for (double x : {0.2, 0.6}) {
    CHECK(reg_inc_beta(2.5, 1.5, x) + reg_inc_beta(1.5, 2.5, 1.0 - x) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("paired t-test against numeric integration") {
  std::vector<double> a = {1.1, 2.3, 0.7, 1.9, 1.5};
  std::vector<double> b = {0.9, 2.0, 0.8, 1.4, 1.1};
  TTestResult r = paired_t_test(a, b);
  CHECK(!r.degenerate);
  CHECK(r.n == 5);
  // recompute t by hand formula
  double mean = 0.0;
  for (size_t i = 0; i < 5; ++i) mean += a[i] - b[i];
  mean /= 5.0;
  double var = 0.0;
  for (size_t i = 0; i < 5; ++i) {
    const double d = a[i] - b[i] - mean;
    var += d * d;
  }
  var /= 4.0;
  CHECK(r.t == doctest::Approx(mean / std::sqrt(var / 5.0)).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(t_tail_oracle(r.t, 4.0)).epsilon(1e-6));

  TTestResult rev = paired_t_test(b, a);
  CHECK(rev.t == doctest::Approx(-r.t).epsilon(1e-14));
  CHECK(rev.p == doctest::Approx(r.p).epsilon(1e-14));
}

TEST_CASE("paired t-test near-certain direction") {
  std::vector<double> a = {1.001, 0.9995, 1.0005, 1.002};
  std::vector<double> zero(4, 0.0);
  TTestResult r = paired_t_test(a, zero);
  CHECK(r.t > 100.0);
  CHECK(r.p < 1e-5);
}

TEST_CASE("paired t-test degenerate cases") {
  std::vector<double> a = {1.0, 2.0, 3.0};
  TTestResult same = paired_t_test(a, a);
  CHECK(same.degenerate);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  std::vector<double> b = {0.0, 1.0, 2.0};  // constant difference of 1
  TTestResult shift = paired_t_test(a, b);
  CHECK(shift.degenerate);
  CHECK(std::isinf(shift.t));
  CHECK(shift.t > 0.0);
  CHECK(shift.p == 0.0);

  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test({1.0, 2.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("summaries exclude non-finite values with a count") {
  const double inf = std::numeric_limits<double>::infinity();
  MetricStat s = summarize({30.0, 32.0, inf, 34.0});
  CHECK(s.excluded == 1);
  CHECK(s.mean == doctest::Approx(32.0));
  CHECK(s.stddev == doctest::Approx(2.0));
  CHECK(s.values.size() == 4);

  MetricStat one = summarize({5.0});
  CHECK(one.mean == 5.0);
  CHECK(one.stddev == 0.0);

  MetricStat none = summarize({inf, inf});
  CHECK(none.excluded == 2);
  CHECK(none.mean == 0.0);
}
