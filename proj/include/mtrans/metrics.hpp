#pragma once

#include <cstddef>
#include <vector>

#include "mtrans/tensor.hpp"

namespace mtrans {

/// 10*log10(peak^2 / MSE). Identical images have zero MSE; that case comes
/// back as +infinity, which summary aggregation excludes (with a count) so
/// means stay finite.
double psnr(const Tensor& x, const Tensor& ref, double peak);

/// Mean local structural similarity with an 11x11 Gaussian window
/// (sigma 1.5), C1 = (0.01*peak)^2, C2 = (0.03*peak)^2. Only windows fully
/// inside the image contribute (no padding). Images must be at least the
/// window size in both dimensions.
double ssim(const Tensor& x, const Tensor& ref, double peak);

/// ||x - ref||^2 / ||ref||^2; the reference must not be identically zero.
double nmse(const Tensor& x, const Tensor& ref);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  size_t n = 0;
  /// true when the differences have exactly zero variance, which leaves the
  /// statistic undefined; t/p then carry the limiting values (0/1 for all-zero
  /// differences, +-inf/0 for a constant nonzero shift)
  bool degenerate = false;
};

/// Two-sided paired Student's t-test on differences a - b, n - 1 degrees of
/// freedom, sample standard deviation. Needs n >= 2.
TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b);

/// CDF machinery exposed for direct verification: regularized incomplete
/// beta I_x(a, b), evaluated by continued fraction.
double reg_inc_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with nu degrees of freedom.
double student_t_two_sided_p(double t, double nu);

struct MetricStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over finite values
  std::vector<double> values;
  size_t excluded = 0;  // non-finite entries left out of mean/stddev
};

struct MetricSummary {
  MetricStat psnr;
  MetricStat ssim;
  MetricStat nmse;
};

MetricStat summarize(std::vector<double> values);

}  // namespace mtrans
