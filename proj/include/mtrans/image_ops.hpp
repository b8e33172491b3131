#pragma once

#include "mtrans/tensor.hpp"

namespace mtrans {

/// Bilinear resampling of a rank-2 image to out_h x out_w, half-pixel
/// centers, edge clamped. Plain values only; never tape-bound.
Tensor bilinear_upsample(const Tensor& img, size_t out_h, size_t out_w);

/// Central-difference gradient magnitude (one-sided at borders).
Tensor gradient_magnitude(const Tensor& img);

/// Pearson correlation of two equally-shaped value maps; 0 when either map
/// has zero variance.
double pearson_correlation(const Tensor& a, const Tensor& b);

/// Correlation of the gradient-magnitude maps of two images: the shared-
/// geometry check for synthetic modality pairs.
double structure_correlation(const Tensor& a, const Tensor& b);

}  // namespace mtrans
