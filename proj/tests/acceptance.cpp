// Acceptance harness: one pass/fail line per criterion. Run with no
// arguments for all criteria, or --only 1,4,9 for a subset.
#include <chrono>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mtrans/cli.hpp"
#include "mtrans/gradcheck.hpp"
#include "mtrans/harness.hpp"
#include "mtrans/io.hpp"
#include "mtrans/kspace.hpp"
#include "mtrans/metrics.hpp"
#include "mtrans/model.hpp"
#include "mtrans/rng.hpp"
#include "mtrans/tensor.hpp"

using namespace mtrans;

namespace {

/// criterion failure with a reason; anything else escaping is also a failure
struct Fail : std::runtime_error {
  explicit Fail(const std::string& msg) : std::runtime_error(msg) {}
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw Fail(msg);
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return std::move(out).str();
}

std::string work_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "acceptance_tmp";
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string work_path(const std::string& name) {
  return (std::filesystem::path(work_dir()) / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Fail("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Fail("cannot write " + path);
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  if (code != 0 && !err.str().empty()) std::cerr << err.str();
  return code;
}

Tensor random_image(size_t h, size_t w, Rng& rng) {
  std::vector<double> vals(h * w);
  for (auto& v : vals) v = rng.uniform();
  return Tensor::from_data({h, w}, std::move(vals));
}

ComplexGrid random_grid(size_t h, size_t w, Rng& rng) {
  ComplexGrid g = ComplexGrid::zeros(h, w);
  for (auto& z : g.v) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  return g;
}

/// Dense centered orthonormal DFT straight from the definition:
///   X[k] = (1/sqrt(N)) * sum_n x[n] * exp(sign*2*pi*i*(k - N/2)*(n - N/2)/N)
/// applied along rows then columns. O(N^2) per line; shares nothing with the
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
  for (size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

/// shared toy model: 32x32 reconstruction, C=4, P=8, two stages, two heads
MTransConfig toy32() {
  MTransConfig cfg;
  cfg.H = 32;
  cfg.W = 32;
  cfg.C = 4;
  cfg.P = 8;
  cfg.N_enc = 2;
  cfg.heads = 2;
  return cfg;
}

const uint64_t kSanitySeeds[] = {1, 4, 6, 9, 10};

// ---------------------------------------------------------------------------

std::string criterion_gradient_fidelity() {
  TrainConfig tc;
  tc.model = toy32();
  tc.train_samples = 1;
  tc.batch = 1;
  tc.seed = 1;
  const auto dataset = build_train_dataset(tc);
  const DegradedSample& s = dataset[0];
  const MTransParams params =
      init_mtrans_params(tc.model, derive_seed(tc.seed, seed_init));
  const MTransConfig& mc = tc.model;

  LossFn fn = [&](const ParamStore& ps, Tape&) {
    const ForwardResult r = mtrans_forward(s.target_input, s.aux_image, ps, mc);
    return mtrans_loss(r.x_tar, s.target_gt, r.x_aux, s.aux_image, mc.alpha);
  };
  const GradCheckReport rep = grad_check(fn, params.store, 1e-6, 17, 64);
  require(rep.max_rel_err < 1e-4,
          "max_rel_err " + fmt(rep.max_rel_err) + " >= 1e-4");
  size_t coords = 0;
  for (const auto& p : rep.params) coords += p.coords_checked;
  return "max_rel_err " + fmt(rep.max_rel_err) + " over " +
         std::to_string(coords) + " coordinates in " +
         std::to_string(rep.params.size()) + " parameters, " +
         std::to_string(rep.kinks_excluded) + " kink coordinates excluded";
}

std::string criterion_acquisition_identities() {
  Rng rng(2026);
  double worst_round = 0.0, worst_parseval = 0.0, worst_identity = 0.0,
         worst_oracle = 0.0;

  for (size_t n : {8, 16, 32}) {
    const ComplexGrid x = random_grid(n, n, rng);
    const ComplexGrid y = fft2(x);
    ComplexGrid back = ifft2(y);
    worst_round = std::max(worst_round, max_abs_diff(back, x));
    back = fft2(ifft2(x));
    worst_round = std::max(worst_round, max_abs_diff(back, x));

    double ex = 0.0, ey = 0.0;
    for (const auto& z : x.v) ex += std::norm(z);
    for (const auto& z : y.v) ey += std::norm(z);
    worst_parseval = std::max(worst_parseval, std::abs(ex - ey));
  }
  require(worst_round < 1e-10, "round trip error " + fmt(worst_round));
  require(worst_parseval < 1e-10, "Parseval error " + fmt(worst_parseval));

  const Tensor img = random_image(16, 16, rng);
  const ComplexGrid y16 = fft2(ComplexGrid::from_real(img));
  SamplingMask full;
  full.W = 16;
  full.columns.assign(16, 1);
  full.R = 1;
  worst_identity =
      std::max(worst_identity, max_abs_diff(zero_fill(undersample(y16, full)), img));
  worst_identity = std::max(worst_identity, max_abs_diff(degrade_lr(y16, 1), img));
  require(worst_identity < 1e-10, "identity error " + fmt(worst_identity));

  for (size_t n : {8, 16}) {
    const Tensor x = random_image(n, n, rng);
    const ComplexGrid y = fft2(ComplexGrid::from_real(x));
    const ComplexGrid oracle_y = dense_dft2(ComplexGrid::from_real(x), -1.0);

    const SamplingMask m = make_mask(MaskKind::random, 4, 1.0 / static_cast<double>(n), n, 7);
    ComplexGrid kept = oracle_y;
    for (size_t r = 0; r < n; ++r)
      for (size_t c = 0; c < n; ++c)
        if (!m.keep(c)) kept.at(r, c) = 0.0;
    const ComplexGrid oracle_img = dense_dft2(kept, +1.0);
    const Tensor lib_recon = zero_fill(undersample(y, m));
    for (size_t i = 0; i < lib_recon.size(); ++i)
      worst_oracle = std::max(
          worst_oracle, std::abs(lib_recon.at(i) - std::abs(oracle_img.v[i])));

    const size_t half = n / 2, lo = n / 2 - n / 4;
    ComplexGrid crop = ComplexGrid::zeros(half, half);
    for (size_t r = 0; r < half; ++r)
      for (size_t c = 0; c < half; ++c)
        crop.at(r, c) = oracle_y.at(lo + r, lo + c) / 4.0;
    const ComplexGrid oracle_lr = dense_dft2(crop, +1.0);
    const Tensor lib_lr = degrade_lr(y, 2);
    for (size_t i = 0; i < lib_lr.size(); ++i)
      worst_oracle = std::max(worst_oracle,
                              std::abs(lib_lr.at(i) - std::abs(oracle_lr.v[i])));
  }
  require(worst_oracle < 1e-10, "dense DFT oracle error " + fmt(worst_oracle));

  return "round trip " + fmt(worst_round) + ", Parseval " + fmt(worst_parseval) +
         ", identities " + fmt(worst_identity) + ", oracle " + fmt(worst_oracle);
}

std::string criterion_architecture_invariants() {
  std::vector<MTransConfig> cfgs;
  Rng crng(33);
  const Variant variants[] = {Variant::mtrans, Variant::early_fusion,
                              Variant::single_scale_large,
                              Variant::single_scale_small};
  const std::pair<Task, size_t> tasks[] = {
      {Task::reconstruction, 1}, {Task::super_resolution, 2},
      {Task::super_resolution, 4}};
  for (Variant v : variants)
    for (auto [task, s] : tasks)
      for (size_t side : {16, 32}) {
        MTransConfig c;
        c.H = c.W = side;
        c.P = 8;
        c.variant = v;
        c.task = task;
        c.s = s;
        c.C = 2 + 2 * crng.below(2);
        c.N_enc = 1 + crng.below(2);
        c.ffn_mult = 1 + crng.below(2);
        c.heads = 1 + crng.below(2);
        try {
          c.validate();
        } catch (const std::exception&) {
          c.heads = 1;
          try {
            c.validate();
          } catch (const std::exception&) {
            continue;
          }
        }
        cfgs.push_back(c);
      }
  require(cfgs.size() >= 20,
          "only " + std::to_string(cfgs.size()) + " valid configs generated");

  double worst_rowsum = 0.0, worst_perm = 0.0;
  size_t records_checked = 0;
  Rng drng(34);
  for (const MTransConfig& cfg : cfgs) {
    const size_t in_h = cfg.task == Task::super_resolution ? cfg.H / cfg.s : cfg.H;
    const size_t in_w = cfg.task == Task::super_resolution ? cfg.W / cfg.s : cfg.W;
    const Tensor tin = random_image(in_h, in_w, drng);
    const Tensor aux = random_image(cfg.H, cfg.W, drng);
    const MTransParams mp = init_mtrans_params(cfg, drng.next_u64());

    AttentionRecords records;
    const ForwardResult res = mtrans_forward(tin, aux, mp.store, cfg, &records);
    require(res.x_tar.shape() == std::vector<size_t>{cfg.H, cfg.W},
            "target output shape " + res.x_tar.shape_str());
    if (cfg.single_branch()) {
      require(!res.x_aux.defined(), "single-branch run produced an aux output");
    } else {
      require(res.x_aux.shape() == std::vector<size_t>{cfg.H, cfg.W},
              "aux output shape " + res.x_aux.shape_str());
    }
    const size_t expected_records =
        cfg.N_enc * cfg.heads * (cfg.single_branch() ? 1 : 2);
    require(records.size() == expected_records,
            "captured " + std::to_string(records.size()) + " attention records, expected " +
                std::to_string(expected_records));
    for (const AttentionRecord& r : records) {
      require(r.matrix.rank() == 2, "attention matrix rank");
      const size_t q = r.matrix.dim(0), k = r.matrix.dim(1);
      if (cfg.single_branch()) {
        require(r.kv_offset == 0 && k == q,
                "self-attention record must carry query tokens only");
      } else {
        require(r.kv_offset == q, "keys must start with the query tokens");
        require(k == q + r.kv_grid_h * r.kv_grid_w,
                "key count must be query tokens plus the other branch's tiles");
      }
      for (size_t row = 0; row < q; ++row) {
        double sum = 0.0;
        for (size_t col = 0; col < k; ++col) sum += r.matrix.at2(row, col);
        worst_rowsum = std::max(worst_rowsum, std::abs(sum - 1.0));
      }
      ++records_checked;
    }

    // tiling round trip at both patch sides
    for (size_t p : {cfg.p_tar(), cfg.p_aux()}) {
      std::vector<double> fv(cfg.C * cfg.H * cfg.W);
      for (auto& v : fv) v = drng.uniform(-1.0, 1.0);
      const Tensor f = Tensor::from_data({cfg.C, cfg.H, cfg.W}, std::move(fv));
      const Tensor back = unpatchify(patchify(f, p), p, cfg.C, cfg.H, cfg.W);
      require(max_abs_diff(back, f) == 0.0, "patchify round trip");
    }

    // per-query invariance to permuting the other branch's key/value rows
    const size_t d = cfg.d_tar();
    const size_t nq = 6, nk = 5;
    ParamStore ca;
    ca.add("blk.ln_q.g", Tensor::full({d}, 1.0));
    ca.add("blk.ln_q.b", Tensor::zeros({d}));
    ca.add("blk.ln_kv.g", Tensor::full({d}, 1.0));
    ca.add("blk.ln_kv.b", Tensor::zeros({d}));
    ca.add("blk.out.w", Tensor::glorot_uniform({d, d}, d, d, drng));
    ca.add("blk.out.b", Tensor::zeros({d}));

    std::vector<double> qv(nq * d), kv(nk * d);
    for (auto& v : qv) v = drng.uniform(-1.0, 1.0);
    for (auto& v : kv) v = drng.uniform(-1.0, 1.0);
    const Tensor q_src = Tensor::from_data({nq, d}, std::move(qv));
    const Tensor kv_rows = Tensor::from_data({nk, d}, kv);

    std::vector<size_t> perm(nk);
    for (size_t i = 0; i < nk; ++i) perm[i] = i;
    for (size_t i = 0; i + 1 < nk; ++i) {
      const size_t j = i + static_cast<size_t>(drng.below(nk - i));
      std::swap(perm[i], perm[j]);
    }
    std::vector<double> pv(nk * d);
    for (size_t i = 0; i < nk; ++i)
      for (size_t j = 0; j < d; ++j) pv[i * d + j] = kv[perm[i] * d + j];
    const Tensor kv_perm = Tensor::from_data({nk, d}, std::move(pv));

    const Tensor base = cross_attention(q_src, kv_rows, ca, "blk", cfg, 0,
                                        Branch::target, 1, nk);
    const Tensor swapped = cross_attention(q_src, kv_perm, ca, "blk", cfg, 0,
                                           Branch::target, 1, nk);
    worst_perm = std::max(worst_perm, max_abs_diff(base, swapped));
  }
  require(worst_rowsum < 1e-6, "attention row sum error " + fmt(worst_rowsum));
  require(worst_perm < 1e-10, "kv permutation error " + fmt(worst_perm));
  return std::to_string(cfgs.size()) + " configs, " +
         std::to_string(records_checked) + " attention matrices, row sums off by " +
         fmt(worst_rowsum) + ", permutation drift " + fmt(worst_perm);
}

std::string criterion_training_sanity() {
  TrainConfig tc;
  tc.model = toy32();
  tc.lr = 1e-4;
  tc.batch = 4;
  tc.steps = 200;
  tc.train_samples = 8;
  tc.eval_samples = 2;
  std::string ratios;
  for (uint64_t seed : kSanitySeeds) {
    tc.seed = seed;
    const TrainResult res = train(tc);
    for (double v : res.report.losses)
      require(std::isfinite(v), "non-finite loss under seed " + std::to_string(seed));
    const double ratio = res.report.final_loss / res.report.initial_loss;
    require(std::isfinite(ratio), "non-finite ratio under seed " + std::to_string(seed));
    require(ratio <= 0.5, "seed " + std::to_string(seed) + ": final/initial " +
                              fmt(ratio) + " > 0.5");
    ratios += (ratios.empty() ? "" : " ") + fmt(ratio);
  }
  return "final/initial per seed: " + ratios;
}

std::string criterion_multimodal_benefit() {
  TrainConfig base;
  base.model = toy32();
  base.model.task = Task::super_resolution;
  base.model.s = 2;
  base.model.alpha = 0.5;
  base.lr = 1e-3;
  base.batch = 4;
  base.steps = 1500;
  base.train_samples = 8;
  base.eval_samples = 8;

  AblationCell paired{"paired", base};
  AblationCell noise{"noise", base};
  noise.config.aux_mode = AuxMode::noise;

  const std::vector<uint64_t> seeds(kSanitySeeds, kSanitySeeds + 5);
  const AblationReport rep = run_ablation({paired, noise}, seeds);
  double mean_paired = 0.0, mean_noise = 0.0;
  for (const TrainReport& r : rep.reports[0]) mean_paired += r.eval.psnr.mean;
  for (const TrainReport& r : rep.reports[1]) mean_noise += r.eval.psnr.mean;
  mean_paired /= static_cast<double>(rep.reports[0].size());
  mean_noise /= static_cast<double>(rep.reports[1].size());
  const AblationPairTest& t = rep.pairs.at(0);

  const std::string detail = "paired " + fmt(mean_paired) + " dB vs noise " +
                             fmt(mean_noise) + " dB, diff " +
                             fmt(t.mean_diff_psnr) + ", p " + fmt(t.psnr_test.p) +
                             " over " + std::to_string(t.psnr_test.n) + " pairs";
  require(mean_paired > mean_noise, detail);
  require(!t.psnr_test.degenerate, "degenerate t-test: " + detail);
  require(t.psnr_test.p < 0.05, detail);
  return detail;
}

std::string criterion_ablation_machinery() {
  const AblationMatrix m = parse_ablation_matrix(
      "seeds 1,2\n"
      "base.H 16\nbase.W 16\nbase.C 2\nbase.P 8\nbase.N_enc 1\nbase.heads 1\n"
      "base.steps 5\nbase.batch 2\nbase.train_samples 3\nbase.eval_samples 2\n"
      "cell.mtrans.fusion_variant mtrans\n"
      "cell.single_scale_large.fusion_variant single_scale_large\n"
      "cell.single_scale_small.fusion_variant single_scale_small\n"
      "cell.early_fusion.fusion_variant early_fusion\n");
  require(m.cells.size() == 4, "expected 4 cells");
  const AblationReport rep = run_ablation(m.cells, m.seeds);

  require(rep.cell_names.size() == 4, "report lost cells");
  for (size_t c = 0; c < 4; ++c) {
    require(rep.reports[c].size() == 2, "cell trained under wrong seed count");
    for (const TrainReport& r : rep.reports[c]) {
      require(r.losses.size() == 5, "cell stopped early");
      for (double v : r.losses) require(std::isfinite(v), "non-finite loss");
    }
  }
  require(rep.pairs.size() == 6, "expected 6 cell pairs, got " +
                                     std::to_string(rep.pairs.size()));
  for (const AblationPairTest& p : rep.pairs)
    require(p.psnr_test.n == 4, "pair " + p.cell_a + " vs " + p.cell_b +
                                    " pooled " + std::to_string(p.psnr_test.n) +
                                    " samples, expected 4");

  const std::string log = ablation_report_log(rep);
  require(log.find("mtrans-ablation-report v1") == 0, "log header");
  require(log.find("pair mtrans vs early_fusion") != std::string::npos,
          "log misses a pair line");
  const auto j = nlohmann::json::parse(ablation_report_json(rep));
  require(j["cells"].size() == 4 && j["pairs"].size() == 6, "json report shape");
  return "4 variants x 2 seeds trained; 6 pairwise comparisons with per-sample differences";
}

std::string criterion_loss_linearity() {
  Rng rng(71);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor pt = random_image(8, 8, rng);
    const Tensor gt = random_image(8, 8, rng);
    const Tensor pa = random_image(8, 8, rng);
    const Tensor ga = random_image(8, 8, rng);
    const double l0 = mtrans_loss(pt, gt, pa, ga, 0.0).value();
    const double l1 = mtrans_loss(pt, gt, pa, ga, 1.0).value();
    const double lh = mtrans_loss(pt, gt, pa, ga, 0.5).value();
    worst = std::max(worst, std::abs(lh - 0.5 * (l0 + l1)));
  }
  require(worst < 1e-12, "midpoint deviation " + fmt(worst));
  return "L(0.5) within " + fmt(worst) + " of the endpoint mean";
}

std::string criterion_metric_oracles() {
  Rng rng(81);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_image(16, 16, rng);
    const Tensor ref = random_image(16, 16, rng);
    double peak = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) peak = std::max(peak, ref.at(i));

    // brute recomputations from the definitions
    double mse = 0.0, num = 0.0, den = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double d = x.at(i) - ref.at(i);
      mse += d * d;
      num += d * d;
      den += ref.at(i) * ref.at(i);
    }
    mse /= static_cast<double>(x.size());
    const double psnr_brute = 10.0 * std::log10(peak * peak / mse);
    const double nmse_brute = num / den;

    double g[11];
    double gsum = 0.0;
    for (int i = 0; i < 11; ++i) {
      g[i] = std::exp(-((i - 5.0) * (i - 5.0)) / (2.0 * 1.5 * 1.5));
      gsum += g[i];
    }
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    double acc = 0.0;
    size_t windows = 0;
    for (size_t y0 = 0; y0 + 11 <= 16; ++y0)
      for (size_t x0 = 0; x0 + 11 <= 16; ++x0) {
        double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = (g[i] / gsum) * (g[j] / gsum);
            const double a = x.at2(y0 + static_cast<size_t>(i), x0 + static_cast<size_t>(j));
            const double b = ref.at2(y0 + static_cast<size_t>(i), x0 + static_cast<size_t>(j));
            mx += w * a;
            my += w * b;
            sxx += w * a * a;
            syy += w * b * b;
            sxy += w * a * b;
          }
        sxx -= mx * mx;
        syy -= my * my;
        sxy -= mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) /
               ((mx * mx + my * my + c1) * (sxx + syy + c2));
        ++windows;
      }
    const double ssim_brute = acc / static_cast<double>(windows);

    worst = std::max(worst, std::abs(psnr(x, ref, peak) - psnr_brute));
    worst = std::max(worst, std::abs(nmse(x, ref) - nmse_brute));
    worst = std::max(worst, std::abs(ssim(x, ref, peak) - ssim_brute));

    // doubling both images shifts exponents only, so invariance is exact
    std::vector<double> sx(x.size()), sref(ref.size());
    for (size_t i = 0; i < x.size(); ++i) sx[i] = 2.0 * x.at(i);
    for (size_t i = 0; i < ref.size(); ++i) sref[i] = 2.0 * ref.at(i);
    const Tensor x2 = Tensor::from_data(x.shape(), std::move(sx));
    const Tensor ref2 = Tensor::from_data(ref.shape(), std::move(sref));
    require(nmse(x2, ref2) == nmse(x, ref), "NMSE scale invariance broke");

    require(std::abs(ssim(ref, ref, peak) - 1.0) < 1e-12, "SSIM(x,x) != 1");
  }
  require(worst < 1e-10, "brute-force mismatch " + fmt(worst));
  return "20 pairs, worst brute-force disagreement " + fmt(worst);
}

std::string criterion_determinism() {
  const std::string cfg_path = work_path("determinism.cfg");
  spit(cfg_path,
       "H=16\nW=16\nC=2\nP=8\nN_enc=2\nheads=2\n"
       "lr=1e-4\nbatch=2\nsteps=50\ntrain_samples=4\neval_samples=2\nseed=1\n");
  const std::string dir_a = work_path("det_a");
  const std::string dir_b = work_path("det_b");
  require(run_cli({"train", "--config", cfg_path, "--out", dir_a}) == 0,
          "first training run failed");
  require(run_cli({"train", "--config", cfg_path, "--out", dir_b}) == 0,
          "second training run failed");
  for (const char* name :
       {"report.log", "report.json", "checkpoint.txt", "checkpoint.mtt"}) {
    const std::string a = (std::filesystem::path(dir_a) / name).string();
    const std::string b = (std::filesystem::path(dir_b) / name).string();
    require(slurp(a) == slurp(b), std::string(name) + " differs between runs");
  }
  return "two runs, byte-identical report.log, report.json, checkpoint.txt, checkpoint.mtt";
}

std::string criterion_attention_export() {
  const std::string cfg_path = work_path("attn.cfg");
  spit(cfg_path,
       "H=16\nW=16\nC=2\nP=8\nN_enc=2\nheads=2\n"
       "lr=1e-4\nbatch=2\nsteps=50\ntrain_samples=4\neval_samples=2\nseed=1\n");
  const std::string dir = work_path("attn_train");
  require(run_cli({"train", "--config", cfg_path, "--out", dir}) == 0,
          "training run failed");
  const std::string ckpt = (std::filesystem::path(dir) / "checkpoint.txt").string();

  size_t maps = 0;
  for (size_t stage = 0; stage < 2; ++stage)
    for (size_t head = 0; head < 2; ++head) {
      const std::string map_path = work_path(
          "attn_s" + std::to_string(stage) + "_h" + std::to_string(head) + ".pgm");
      require(run_cli({"attn", "--ckpt", ckpt, "--sample", "0", "--stage",
                       std::to_string(stage), "--head", std::to_string(head),
                       "--out", map_path}) == 0,
              "attention export failed at stage " + std::to_string(stage) +
                  " head " + std::to_string(head));
      const Tensor map = read_pgm(map_path);
      require(map.shape() == std::vector<size_t>{16, 16},
              "map shape " + map.shape_str());
      double mx = 0.0;
      for (size_t i = 0; i < map.size(); ++i) {
        require(map.at(i) >= 0.0 && map.at(i) <= 1.0, "map value out of [0, 1]");
        mx = std::max(mx, map.at(i));
      }
      require(mx == 1.0, "map maximum " + fmt(mx) + " != 1");
      ++maps;
    }

  // the source attention behind those maps: re-run the forward pass with
  // capture on the same held-out sample the export used
  const LoadedCheckpoint ck = load_checkpoint(ckpt);
  TrainConfig sample_cfg;
  sample_cfg.model = ck.config;
  sample_cfg.eval_samples = 1;
  sample_cfg.seed = 0;
  const auto dataset = build_eval_dataset(sample_cfg);
  AttentionRecords records;
  mtrans_forward(dataset[0].target_input, dataset[0].aux_image, ck.params.store,
                 ck.config, &records);
  require(records.size() == 8, "expected 8 attention records, got " +
                                   std::to_string(records.size()));
  double worst = 0.0;
  for (const AttentionRecord& r : records)
    for (size_t row = 0; row < r.matrix.dim(0); ++row) {
      double sum = 0.0;
      for (size_t col = 0; col < r.matrix.dim(1); ++col)
        sum += r.matrix.at2(row, col);
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  require(worst < 1e-6, "source attention rows off by " + fmt(worst));
  return std::to_string(maps) +
         " per-head maps in [0, 1]; source attention rows sum to 1 within " +
         fmt(worst);
}

struct Criterion {
  int id;
  const char* name;
  std::function<std::string()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "gradient fidelity", criterion_gradient_fidelity},
      {2, "acquisition identities", criterion_acquisition_identities},
      {3, "architecture invariants", criterion_architecture_invariants},
      {4, "training sanity", criterion_training_sanity},
      {5, "multi-modal benefit", criterion_multimodal_benefit},
      {6, "ablation machinery", criterion_ablation_machinery},
      {7, "loss linearity", criterion_loss_linearity},
      {8, "metric oracles", criterion_metric_oracles},
      {9, "training determinism", criterion_determinism},
      {10, "attention export", criterion_attention_export},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      std::string token;
      while (std::getline(list, token, ',')) selected.push_back(std::stoi(token));
    } else {
      std::cerr << "usage: acceptance [--only N[,N...]]\n";
      return 2;
    }
  }

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.id) == selected.end())
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = c.run();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line.precision(1);
    line << std::fixed;
    line << (ok ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << " (" << secs
         << "s): " << detail;
    std::cout << line.str() << std::endl;
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
