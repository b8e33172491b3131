#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "mtrans/tensor.hpp"

namespace mtrans {

/// Row-major H x W complex grid; the frequency-domain convention everywhere
/// in this project is centered (zero frequency at H/2, W/2).
struct ComplexGrid {
  size_t H = 0, W = 0;
  std::vector<std::complex<double>> v;

  static ComplexGrid zeros(size_t H, size_t W);
  /// real rank-2 tensor promoted to a complex grid with zero imaginary part
  static ComplexGrid from_real(const Tensor& img);

  std::complex<double>& at(size_t r, size_t c) { return v[r * W + c]; }
  const std::complex<double>& at(size_t r, size_t c) const { return v[r * W + c]; }
  bool all_finite() const;
};

/// Orthonormal centered 2D Fourier transform: 1/sqrt(N) scaling in each
/// direction on both paths, zero frequency at the grid center. Sizes must be
/// powers of two (radix-2 implementation).
ComplexGrid fft2(const ComplexGrid& x);
ComplexGrid ifft2(const ComplexGrid& y);

/// |ifft2(g)| as a rank-2 tensor
Tensor magnitude_image(const ComplexGrid& g);

enum class MaskKind : uint8_t { random = 0, equispaced = 1 };

/// Cartesian line mask: per-column keep flags replicated over all rows.
struct SamplingMask {
  size_t W = 0;
  std::vector<uint8_t> columns;  // 1 = sampled
  MaskKind kind = MaskKind::random;
  unsigned R = 0;
  double center_fraction = 0.0;
  uint64_t seed = 0;

  size_t num_sampled() const;
  bool keep(size_t col) const { return columns[col] != 0; }
};

/// Builds a column mask with ceil(center_fraction * W) fully sampled central
/// columns and the rest of the floor(W / R) budget placed uniformly at random
/// (random kind) or at even spacing over the remaining columns (equispaced).
/// Deterministic in `seed`.
SamplingMask make_mask(MaskKind kind, unsigned R, double center_fraction,
                       size_t W, uint64_t seed);

/// Zeroes every column the mask drops; kept columns are copied bit-exactly.
ComplexGrid undersample(const ComplexGrid& y, const SamplingMask& m);

/// Magnitude of the inverse transform of (under)sampled frequency data.
Tensor zero_fill(const ComplexGrid& yhat);

/// Keeps the central (H/s) x (W/s) block of centered frequency data, scales
/// it by 1/s^2, and returns the magnitude of the reduced-size inverse
/// transform. The 1/s^2 factor makes a constant image of level c come out at
/// level c/s; downstream normalization removes the factor.
Tensor degrade_lr(const ComplexGrid& y, size_t s);

struct Normalized {
  Tensor image;      // values in [0, 1], maximum exactly 1
  double max_value;  // divisor, kept for metric computation
};

/// Divides by the image maximum, which must be positive and finite.
Normalized normalize(const Tensor& img);

enum class Task : uint8_t { reconstruction = 0, super_resolution = 1 };

/// One sample after acquisition simulation: the degraded target-modality
/// input, the fully sampled auxiliary image guiding it, and the ground
/// truth, all normalized to [0, 1] with the divisors kept for metrics.
struct DegradedSample {
  Task task = Task::reconstruction;
  Tensor target_input;  // H x W, or (H/s) x (W/s) for super-resolution
  Tensor aux_image;     // H x W
  Tensor target_gt;     // H x W
  double target_max = 0.0;
  double aux_max = 0.0;
};

}  // namespace mtrans
