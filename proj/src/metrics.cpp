#include "mtrans/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtrans {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void require_pair(const Tensor& x, const Tensor& ref, const char* who) {
  if (x.shape() != ref.shape()) {
    fail(std::string(who) + " shape mismatch: " + x.shape_str() + " vs " +
         ref.shape_str());
  }
  if (x.size() == 0) fail(std::string(who) + " of empty images");
}

constexpr size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

}  // namespace

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  require_pair(x, ref, "psnr");
  if (!(peak > 0.0)) fail("psnr peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x.at(i) - ref.at(i);
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& x, const Tensor& ref, double peak) {
  require_pair(x, ref, "ssim");
  if (x.rank() != 2) fail("ssim needs rank-2 images, got " + x.shape_str());
  if (!(peak > 0.0)) fail("ssim peak must be positive");
  const size_t H = x.dim(0), W = x.dim(1);
  if (H < kSsimWindow || W < kSsimWindow) {
    fail("ssim image " + x.shape_str() + " smaller than the 11x11 window");
  }

  double w[kSsimWindow][kSsimWindow];
  double wsum = 0.0;
  for (size_t i = 0; i < kSsimWindow; ++i)
    for (size_t j = 0; j < kSsimWindow; ++j) {
      const double di = static_cast<double>(i) - 5.0;
      const double dj = static_cast<double>(j) - 5.0;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * kSsimSigma * kSsimSigma));
      wsum += w[i][j];
    }
  for (auto& row : w)
    for (auto& v : row) v /= wsum;

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double acc = 0.0;
  size_t count = 0;
  for (size_t y = 0; y + kSsimWindow <= H; ++y) {
    for (size_t xx = 0; xx + kSsimWindow <= W; ++xx) {
      double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (size_t i = 0; i < kSsimWindow; ++i)
        for (size_t j = 0; j < kSsimWindow; ++j) {
          const double a = x.at((y + i) * W + xx + j);
          const double b = ref.at((y + i) * W + xx + j);
          mx += w[i][j] * a;
          my += w[i][j] * b;
          sxx += w[i][j] * a * a;
          syy += w[i][j] * b * b;
          sxy += w[i][j] * a * b;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) /
             ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double nmse(const Tensor& x, const Tensor& ref) {
  require_pair(x, ref, "nmse");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x.at(i) - ref.at(i);
    num += d * d;
    den += ref.at(i) * ref.at(i);
  }
  if (den == 0.0) fail("nmse reference is identically zero");
  return num / den;
}

// Continued-fraction evaluation (modified Lentz) of the regularized
// incomplete beta function.
double reg_inc_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) fail("reg_inc_beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  // the continued fraction converges fast only below (a+1)/(a+b+2); past it
  // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a). Strictly past it, so the
  // boundary case cannot ping-pong between the two branches.
  if (x > (a + 1.0) / (a + b + 2.0)) {
    return 1.0 - reg_inc_beta(b, a, 1.0 - x);
  }
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double md = static_cast<double>(m);
    double num = md * (b - md) * x / ((a + 2.0 * md - 1.0) * (a + 2.0 * md));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + md) * (a + b + md) * x /
          ((a + 2.0 * md) * (a + 2.0 * md + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(ln_front) * h / a;
}

double student_t_two_sided_p(double t, double nu) {
  if (!(nu > 0.0)) fail("student t needs positive degrees of freedom");
  if (std::isinf(t)) return 0.0;
  const double x = nu / (nu + t * t);
  return reg_inc_beta(nu / 2.0, 0.5, x);
}

TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() != b.size()) fail("paired_t_test needs equal-length samples");
  const size_t n = a.size();
  if (n < 2) fail("paired_t_test needs at least two pairs");
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);

  TTestResult res;
  res.n = n;
  if (var == 0.0) {
    res.degenerate = true;
    if (mean == 0.0) {
      res.t = 0.0;
      res.p = 1.0;
    } else {
      res.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
      res.p = 0.0;
    }
    return res;
  }
  res.t = mean / (std::sqrt(var) / std::sqrt(static_cast<double>(n)));
  res.p = student_t_two_sided_p(res.t, static_cast<double>(n - 1));
  return res;
}

MetricStat summarize(std::vector<double> values) {
  MetricStat s;
  s.values = std::move(values);
  double acc = 0.0;
  size_t n = 0;
  for (double v : s.values) {
    if (!std::isfinite(v)) {
      ++s.excluded;
      continue;
    }
    acc += v;
    ++n;
  }
  if (n == 0) return s;
  s.mean = acc / static_cast<double>(n);
  if (n >= 2) {
    double var = 0.0;
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      var += (v - s.mean) * (v - s.mean);
    }
    s.stddev = std::sqrt(var / static_cast<double>(n - 1));
  }
  return s;
}

}  // namespace mtrans
