#include "mtrans/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mtrans/rng.hpp"

namespace mtrans {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

bool power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 transform, kernel exp(-+2*pi*i*k*n/N),
/// no scaling. Length must be a power of two.
void fft_pow2(std::complex<double>* a, size_t n, bool inverse) {
  if (n == 1) return;
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> t = a[i + j + len / 2] * w;
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wl;
      }
    }
  }
}

/// Global phase of the centered transform along one dimension. With the
/// center at N/2 the shift theorem leaves exp(-pi*i*N/2), which is -1 only
/// for N = 2 among the powers of two (N = 1 has no shift at all).
double center_phase(size_t n) { return n == 2 ? -1.0 : 1.0; }

ComplexGrid transform2(const ComplexGrid& x, bool inverse) {
  if (!power_of_two(x.H) || !power_of_two(x.W)) {
    fail("transform size must be a power of two, got " + std::to_string(x.H) +
         " x " + std::to_string(x.W));
  }
  if (x.v.size() != x.H * x.W) fail("complex grid storage does not match its size");
  ComplexGrid out = x;
  // (-1)^(r+c) modulation converts index shifts into the centered convention
  for (size_t r = 0; r < out.H; ++r)
    for (size_t c = 0; c < out.W; ++c)
      if ((r + c) & 1) out.at(r, c) = -out.at(r, c);
  for (size_t r = 0; r < out.H; ++r) fft_pow2(&out.v[r * out.W], out.W, inverse);
  std::vector<std::complex<double>> col(out.H);
  for (size_t c = 0; c < out.W; ++c) {
    for (size_t r = 0; r < out.H; ++r) col[r] = out.at(r, c);
    fft_pow2(col.data(), out.H, inverse);
    for (size_t r = 0; r < out.H; ++r) out.at(r, c) = col[r];
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(out.H * out.W));
  const double phase = center_phase(out.H) * center_phase(out.W) * norm;
  for (size_t r = 0; r < out.H; ++r)
    for (size_t c = 0; c < out.W; ++c) {
      double s = phase;
      if ((r + c) & 1) s = -s;
      out.at(r, c) *= s;
    }
  return out;
}

}  // namespace

ComplexGrid ComplexGrid::zeros(size_t H, size_t W) {
  ComplexGrid g;
  g.H = H;
  g.W = W;
  g.v.assign(H * W, {0.0, 0.0});
  return g;
}

ComplexGrid ComplexGrid::from_real(const Tensor& img) {
  if (img.rank() != 2) fail("from_real needs a rank-2 tensor, got " + img.shape_str());
  ComplexGrid g = zeros(img.dim(0), img.dim(1));
  for (size_t i = 0; i < img.size(); ++i) g.v[i] = {img.at(i), 0.0};
  return g;
}

bool ComplexGrid::all_finite() const {
  for (const auto& z : v) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  }
  return true;
}

ComplexGrid fft2(const ComplexGrid& x) { return transform2(x, false); }
ComplexGrid ifft2(const ComplexGrid& y) { return transform2(y, true); }

Tensor magnitude_image(const ComplexGrid& g) {
  ComplexGrid img = ifft2(g);
  std::vector<double> vals(img.v.size());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = std::abs(img.v[i]);
  return Tensor::from_data({img.H, img.W}, std::move(vals));
}

size_t SamplingMask::num_sampled() const {
  size_t n = 0;
  for (uint8_t c : columns) n += c;
  return n;
}

SamplingMask make_mask(MaskKind kind, unsigned R, double center_fraction,
                       size_t W, uint64_t seed) {
  if (R < 2) fail("mask acceleration must be at least 2, got " + std::to_string(R));
  if (!(center_fraction > 0.0 && center_fraction < 1.0)) {
    fail("mask center_fraction must lie in (0, 1)");
  }
  if (center_fraction * static_cast<double>(W) < 1.0) {
    fail("mask center_fraction * W must be at least 1");
  }
  const size_t budget = W / R;
  const size_t center_n =
      static_cast<size_t>(std::ceil(center_fraction * static_cast<double>(W)));
  if (budget <= center_n) {
    fail("mask budget W/R = " + std::to_string(budget) +
         " does not exceed the " + std::to_string(center_n) +
         "-column center block");
  }
  SamplingMask m;
  m.W = W;
  m.columns.assign(W, 0);
  m.kind = kind;
  m.R = R;
  m.center_fraction = center_fraction;
  m.seed = seed;

  const size_t center_start = W / 2 - center_n / 2;
  for (size_t i = 0; i < center_n; ++i) m.columns[center_start + i] = 1;

  std::vector<size_t> others;
  for (size_t c = 0; c < W; ++c)
    if (!m.columns[c]) others.push_back(c);
  const size_t extra = budget - center_n;
  if (extra > others.size()) fail("mask budget exceeds available columns");

  if (kind == MaskKind::equispaced) {
    for (size_t i = 0; i < extra; ++i) {
      m.columns[others[i * others.size() / extra]] = 1;
    }
  } else {
    Rng rng(seed);
    for (size_t i = 0; i < extra; ++i) {
      const size_t j = i + static_cast<size_t>(rng.below(others.size() - i));
      std::swap(others[i], others[j]);
      m.columns[others[i]] = 1;
    }
  }
  return m;
}

ComplexGrid undersample(const ComplexGrid& y, const SamplingMask& m) {
  if (y.W != m.W) {
    fail("mask width " + std::to_string(m.W) + " does not match grid width " +
         std::to_string(y.W));
  }
  ComplexGrid out = y;
  for (size_t r = 0; r < y.H; ++r)
    for (size_t c = 0; c < y.W; ++c)
      if (!m.keep(c)) out.at(r, c) = {0.0, 0.0};
  return out;
}

Tensor zero_fill(const ComplexGrid& yhat) { return magnitude_image(yhat); }

Tensor degrade_lr(const ComplexGrid& y, size_t s) {
  if (s == 0 || !power_of_two(s)) {
    fail("degradation factor must be a power of two, got " + std::to_string(s));
  }
  if (y.H % s != 0 || y.W % s != 0) {
    fail("degradation factor " + std::to_string(s) + " does not divide " +
         std::to_string(y.H) + " x " + std::to_string(y.W));
  }
  const size_t Hs = y.H / s, Ws = y.W / s;
  const size_t r0 = y.H / 2 - Hs / 2, c0 = y.W / 2 - Ws / 2;
  const double gain = 1.0 / (static_cast<double>(s) * static_cast<double>(s));
  ComplexGrid crop = ComplexGrid::zeros(Hs, Ws);
  for (size_t r = 0; r < Hs; ++r)
    for (size_t c = 0; c < Ws; ++c) crop.at(r, c) = y.at(r0 + r, c0 + c) * gain;
  return magnitude_image(crop);
}

Normalized normalize(const Tensor& img) {
  if (img.size() == 0) fail("normalize of an empty image");
  double mx = img.at(0);
  for (size_t i = 1; i < img.size(); ++i) mx = std::max(mx, img.at(i));
  if (!std::isfinite(mx) || mx <= 0.0) {
    fail("normalize needs a positive finite maximum");
  }
  std::vector<double> vals(img.size());
  for (size_t i = 0; i < img.size(); ++i) vals[i] = img.at(i) / mx;
  return Normalized{Tensor::from_data(img.shape(), std::move(vals)), mx};
}

}  // namespace mtrans
