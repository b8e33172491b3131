#include "mtrans/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtrans {

namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(what) + " expects a rank-2 tensor, got " +
                                t.shape_str());
}

}  // namespace

Tensor bilinear_upsample(const Tensor& img, size_t out_h, size_t out_w) {
  require_rank2(img, "bilinear_upsample");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_upsample: empty output");
  const size_t in_h = img.shape()[0];
  const size_t in_w = img.shape()[1];
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  std::vector<double> out(out_h * out_w, 0.0);
  for (size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
    const size_t y0 = static_cast<size_t>(fy);
    const size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
      const size_t x0 = static_cast<size_t>(fx);
      const size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = img.at2(y0, x0) * (1.0 - wx) + img.at2(y0, x1) * wx;
      const double bot = img.at2(y1, x0) * (1.0 - wx) + img.at2(y1, x1) * wx;
      out[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
    }
  }
  return Tensor::from_data({out_h, out_w}, std::move(out), img.dtype());
}

Tensor gradient_magnitude(const Tensor& img) {
  require_rank2(img, "gradient_magnitude");
  const size_t h = img.shape()[0];
  const size_t w = img.shape()[1];
  std::vector<double> out(h * w, 0.0);
  for (size_t r = 0; r < h; ++r) {
    for (size_t c = 0; c < w; ++c) {
      const size_t rp = (r + 1 < h) ? r + 1 : r;
      const size_t rm = (r > 0) ? r - 1 : r;
      const size_t cp = (c + 1 < w) ? c + 1 : c;
      const size_t cm = (c > 0) ? c - 1 : c;
      const double dr = (img.at2(rp, c) - img.at2(rm, c)) / static_cast<double>(rp - rm == 0 ? 1 : rp - rm);
      const double dc = (img.at2(r, cp) - img.at2(r, cm)) / static_cast<double>(cp - cm == 0 ? 1 : cp - cm);
      out[r * w + c] = std::sqrt(dr * dr + dc * dc);
    }
  }
  return Tensor::from_data({h, w}, std::move(out), DType::f64);
}

double pearson_correlation(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("pearson_correlation: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  const size_t n = a.size();
  if (n == 0) throw std::invalid_argument("pearson_correlation: empty input");
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.at(i);
    mb += b.at(i);
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.at(i) - ma;
    const double db = b.at(i) - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double structure_correlation(const Tensor& a, const Tensor& b) {
  return pearson_correlation(gradient_magnitude(a), gradient_magnitude(b));
}

}  // namespace mtrans
