#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <set>
#include <vector>

#include "mtrans/kspace.hpp"
#include "mtrans/rng.hpp"

using namespace mtrans;

namespace {

ComplexGrid random_grid(size_t H, size_t W, Rng& rng) {
  ComplexGrid g = ComplexGrid::zeros(H, W);
  for (auto& z : g.v) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  return g;
}

/// Dense centered orthonormal DFT straight from the definition:
///   X[k] = (1/sqrt(N)) * sum_n x[n] * exp(sign*2*pi*i*(k - N/2)*(n - N/2)/N)
/// Applied along rows then columns; O(N^2) per line, shares nothing with the
/// radix-2 implementation under test.
ComplexGrid dense_dft2(const ComplexGrid& x, double sign) {
  const size_t H = x.H, W = x.W;
  ComplexGrid rows = ComplexGrid::zeros(H, W);
  for (size_t r = 0; r < H; ++r)
    for (size_t k = 0; k < W; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (size_t n = 0; n < W; ++n) {
        const double a = sign * 2.0 * std::numbers::pi *
                         (static_cast<double>(k) - static_cast<double>(W / 2)) *
                         (static_cast<double>(n) - static_cast<double>(W / 2)) /
                         static_cast<double>(W);
        acc += x.at(r, n) * std::complex<double>(std::cos(a), std::sin(a));
      }
      rows.at(r, k) = acc / std::sqrt(static_cast<double>(W));
    }
  ComplexGrid out = ComplexGrid::zeros(H, W);
  for (size_t c = 0; c < W; ++c)
    for (size_t k = 0; k < H; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (size_t n = 0; n < H; ++n) {
        const double a = sign * 2.0 * std::numbers::pi *
                         (static_cast<double>(k) - static_cast<double>(H / 2)) *
                         (static_cast<double>(n) - static_cast<double>(H / 2)) /
                         static_cast<double>(H);
        acc += rows.at(n, c) * std::complex<double>(std::cos(a), std::sin(a));
      }
      out.at(k, c) = acc / std::sqrt(static_cast<double>(H));
    }
  return out;
}

double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

double grid_energy(const ComplexGrid& g) {
  double e = 0.0;
  for (const auto& z : g.v) e += std::norm(z);
  return e;
}

}  // namespace

TEST_CASE("forward and inverse transforms match the dense definition") {
  Rng rng(21);
  for (auto [H, W] : {std::pair<size_t, size_t>{8, 8}, {16, 8}, {4, 16}, {2, 2},
                      {1, 8}, {16, 16}}) {
    ComplexGrid x = random_grid(H, W, rng);
    CHECK(max_abs_diff(fft2(x), dense_dft2(x, -1.0)) < 1e-10);
    CHECK(max_abs_diff(ifft2(x), dense_dft2(x, +1.0)) < 1e-10);
  }
}

TEST_CASE("transform round trip, Parseval, linearity") {
  Rng rng(22);
  for (auto [H, W] : {std::pair<size_t, size_t>{8, 8}, {32, 32}, {16, 64}}) {
    ComplexGrid x = random_grid(H, W, rng);
    ComplexGrid y = fft2(x);
    CHECK(max_abs_diff(ifft2(y), x) < 1e-10);
    CHECK(std::abs(grid_energy(x) - grid_energy(y)) < 1e-10);

    ComplexGrid z = random_grid(H, W, rng);
    ComplexGrid lhs = ComplexGrid::zeros(H, W);
    for (size_t i = 0; i < lhs.v.size(); ++i) lhs.v[i] = 2.5 * x.v[i] - 0.75 * z.v[i];
    lhs = fft2(lhs);
    ComplexGrid fx = fft2(x), fz = fft2(z);
    ComplexGrid rhs = ComplexGrid::zeros(H, W);
    for (size_t i = 0; i < rhs.v.size(); ++i) rhs.v[i] = 2.5 * fx.v[i] - 0.75 * fz.v[i];
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("center impulse transforms to a flat spectrum") {
  const size_t H = 16, W = 8;
  ComplexGrid x = ComplexGrid::zeros(H, W);
  x.at(H / 2, W / 2) = {1.0, 0.0};
  ComplexGrid y = fft2(x);
  const double want = 1.0 / std::sqrt(static_cast<double>(H * W));
  for (const auto& z : y.v) {
    CHECK(std::abs(z.real() - want) < 1e-12);
    CHECK(std::abs(z.imag()) < 1e-12);
  }
}

TEST_CASE("non-power-of-two sizes are rejected") {
  CHECK_THROWS_AS(fft2(ComplexGrid::zeros(6, 8)), std::invalid_argument);
  CHECK_THROWS_AS(ifft2(ComplexGrid::zeros(8, 12)), std::invalid_argument);
  CHECK_THROWS_AS(fft2(ComplexGrid::zeros(0, 8)), std::invalid_argument);
}

TEST_CASE("mask construction: counts, center block, determinism") {
  SamplingMask m = make_mask(MaskKind::random, 4, 0.08, 32, 7);
  CHECK(m.num_sampled() == 8);  // floor(32/4)
  // ceil(0.08 * 32) = 3 central columns around index 16
  CHECK(m.keep(15));
  CHECK(m.keep(16));
  CHECK(m.keep(17));

  SamplingMask m2 = make_mask(MaskKind::random, 4, 0.08, 32, 7);
  CHECK(m.columns == m2.columns);
  SamplingMask m3 = make_mask(MaskKind::random, 4, 0.08, 32, 8);
  CHECK(m.columns != m3.columns);  // overwhelmingly likely per seed pair

  for (size_t W = 32; W <= 512; W *= 2) {
    for (unsigned R : {4u, 6u, 8u}) {
      const double cf = R == 4 ? 0.08 : (R == 6 ? 0.06 : 0.04);
      SamplingMask e = make_mask(MaskKind::equispaced, R, cf, W, 1);
      const long want = static_cast<long>(W / R);
      CHECK(std::abs(static_cast<long>(e.num_sampled()) - want) <= 1);
      SamplingMask r = make_mask(MaskKind::random, R, cf, W, 1);
      CHECK(std::abs(static_cast<long>(r.num_sampled()) - want) <= 1);
    }
  }
}

TEST_CASE("mask construction rejects degenerate budgets") {
  CHECK_THROWS_AS(make_mask(MaskKind::random, 1, 0.08, 32, 1),
                  std::invalid_argument);
  // 1/R <= center_fraction leaves nothing outside the center block
  CHECK_THROWS_AS(make_mask(MaskKind::random, 4, 0.25, 32, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_mask(MaskKind::random, 4, 0.30, 32, 1),
                  std::invalid_argument);
  // center_fraction * W < 1
  CHECK_THROWS_AS(make_mask(MaskKind::random, 4, 0.01, 32, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_mask(MaskKind::random, 4, 1.5, 32, 1),
                  std::invalid_argument);
}

TEST_CASE("undersample zeroes dropped columns and nothing else") {
  Rng rng(23);
  ComplexGrid y = random_grid(8, 32, rng);
  SamplingMask m = make_mask(MaskKind::random, 4, 0.08, 32, 3);
  ComplexGrid u = undersample(y, m);
  for (size_t r = 0; r < y.H; ++r)
    for (size_t c = 0; c < y.W; ++c) {
      // element-wise oracle
      const std::complex<double> want =
          m.keep(c) ? y.at(r, c) : std::complex<double>{0.0, 0.0};
      CHECK(u.at(r, c) == want);
    }
  // idempotent, bit-exact
  ComplexGrid uu = undersample(u, m);
  for (size_t i = 0; i < u.v.size(); ++i) CHECK(uu.v[i] == u.v[i]);
  CHECK(grid_energy(u) <= grid_energy(y));

  SamplingMask full = m;
  full.columns.assign(32, 1);
  ComplexGrid same = undersample(y, full);
  for (size_t i = 0; i < y.v.size(); ++i) CHECK(same.v[i] == y.v[i]);

  SamplingMask narrow = make_mask(MaskKind::random, 4, 0.08, 16, 3);
  CHECK_THROWS_AS(undersample(y, narrow), std::invalid_argument);
}

TEST_CASE("zero_fill recovers the image under a full mask") {
  Rng rng(24);
  const size_t H = 16, W = 16;
  std::vector<double> img(H * W);
  for (auto& v : img) v = rng.uniform(0.0, 1.0);
  Tensor x = Tensor::from_data({H, W}, img);
  ComplexGrid y = fft2(ComplexGrid::from_real(x));
  SamplingMask full;
  full.W = W;
  full.columns.assign(W, 1);
  Tensor back = zero_fill(undersample(y, full));
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(back.at(i) == doctest::Approx(std::abs(x.at(i))).epsilon(1e-10));

  Tensor z = zero_fill(ComplexGrid::zeros(8, 8));
  for (size_t i = 0; i < z.size(); ++i) CHECK(z.at(i) == 0.0);
}

TEST_CASE("zero_fill matches the dense oracle on an 8x8 case") {
  Rng rng(25);
  ComplexGrid yhat = random_grid(8, 8, rng);
  Tensor got = zero_fill(yhat);
  ComplexGrid ref = dense_dft2(yhat, +1.0);
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.at(i) - std::abs(ref.v[i])) < 1e-10);
}

TEST_CASE("degrade_lr: identity at s=1 and constant scaling") {
  Rng rng(26);
  ComplexGrid y = random_grid(16, 16, rng);
  Tensor d1 = degrade_lr(y, 1);
  ComplexGrid inv = ifft2(y);
  for (size_t i = 0; i < d1.size(); ++i)
    CHECK(std::abs(d1.at(i) - std::abs(inv.v[i])) < 1e-10);

  // constant image c comes out constant at c/s
  const double c = 3.25;
  ComplexGrid yc = fft2(ComplexGrid::from_real(Tensor::full({16, 16}, c)));
  for (size_t s : {size_t{2}, size_t{4}}) {
    Tensor d = degrade_lr(yc, s);
    REQUIRE(d.shape() == std::vector<size_t>{16 / s, 16 / s});
    for (size_t i = 0; i < d.size(); ++i)
      CHECK(d.at(i) == doctest::Approx(c / static_cast<double>(s)).epsilon(1e-10));
  }

  CHECK_THROWS_AS(degrade_lr(y, 3), std::invalid_argument);
  CHECK_THROWS_AS(degrade_lr(y, 32), std::invalid_argument);
}

TEST_CASE("degrade_lr matches a dense truncation oracle at 16x16, s=2") {
  Rng rng(27);
  std::vector<double> img(16 * 16);
  for (auto& v : img) v = rng.uniform(0.0, 1.0);
  ComplexGrid y = fft2(ComplexGrid::from_real(Tensor::from_data({16, 16}, img)));

  const size_t s = 2, Hs = 8, Ws = 8;
  ComplexGrid crop = ComplexGrid::zeros(Hs, Ws);
  for (size_t r = 0; r < Hs; ++r)
    for (size_t c = 0; c < Ws; ++c)
      crop.at(r, c) = y.at(8 - 4 + r, 8 - 4 + c) / static_cast<double>(s * s);
  ComplexGrid ref = dense_dft2(crop, +1.0);

  Tensor got = degrade_lr(y, s);
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.at(i) - std::abs(ref.v[i])) < 1e-10);
}

TEST_CASE("degrade_lr commutes with constant intensity shifts") {
  // image with frequency content strictly inside the kept band, so the
  // reduced-size reconstruction stays real and positive
  const size_t H = 16, W = 16;
  std::vector<double> img(H * W);
  for (size_t r = 0; r < H; ++r)
    for (size_t c = 0; c < W; ++c)
      img[r * W + c] = 1.0 + 0.2 * std::cos(2.0 * std::numbers::pi * r / H) *
                                 std::cos(2.0 * std::numbers::pi * c / W);
  const double delta = 0.4;
  std::vector<double> shifted = img;
  for (auto& v : shifted) v += delta;

  const size_t s = 2;
  Tensor a = degrade_lr(fft2(ComplexGrid::from_real(Tensor::from_data({H, W}, img))), s);
  Tensor b = degrade_lr(
      fft2(ComplexGrid::from_real(Tensor::from_data({H, W}, shifted))), s);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(b.at(i) == doctest::Approx(a.at(i) + delta / s).epsilon(1e-10));
}

TEST_CASE("normalize scales to unit maximum and reports the divisor") {
  Normalized n = normalize(Tensor::full({4, 4}, 5.0));
  CHECK(n.max_value == 5.0);
  for (size_t i = 0; i < n.image.size(); ++i) CHECK(n.image.at(i) == 1.0);

  Rng rng(28);
  std::vector<double> img(64);
  for (auto& v : img) v = rng.uniform(0.0, 3.0);
  Normalized r = normalize(Tensor::from_data({8, 8}, img));
  double mx = 0.0;
  for (size_t i = 0; i < r.image.size(); ++i) mx = std::max(mx, r.image.at(i));
  CHECK(mx == 1.0);

  Normalized again = normalize(r.image);
  CHECK(again.max_value == 1.0);
  for (size_t i = 0; i < r.image.size(); ++i)
    CHECK(again.image.at(i) == r.image.at(i));

  CHECK_THROWS_AS(normalize(Tensor::zeros({4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(normalize(Tensor::full({2, 2}, -1.0)), std::invalid_argument);
}
