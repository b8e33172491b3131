#include "mtrans/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "mtrans/image_ops.hpp"
#include "mtrans/io.hpp"
#include "mtrans/rng.hpp"

namespace mtrans {

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Effective loss arguments for a variant: the single-branch network trains
/// on the target term alone.
Tensor sample_loss(const ForwardResult& r, const DegradedSample& s,
                   const MTransConfig& mc) {
  if (mc.single_branch())
    return mtrans_loss(r.x_tar, s.target_gt, Tensor(), Tensor(), 1.0);
  return mtrans_loss(r.x_tar, s.target_gt, r.x_aux, s.aux_image, mc.alpha);
}

std::string param_norms(const ParamStore& ps) {
  std::ostringstream out;
  for (size_t i = 0; i < ps.size(); ++i) {
    const Tensor& t = ps.get(i);
    double sq = 0.0;
    for (size_t j = 0; j < t.size(); ++j) sq += t.at(j) * t.at(j);
    out << (i ? " " : "") << ps.name(i) << "=" << format_double(std::sqrt(sq));
  }
  return std::move(out).str();
}

}  // namespace

std::string aux_mode_name(AuxMode m) {
  switch (m) {
    case AuxMode::paired: return "paired";
    case AuxMode::noise: return "noise";
    case AuxMode::self: return "self";
  }
  throw std::invalid_argument("bad aux mode value");
}

AuxMode aux_mode_from_name(const std::string& name) {
  if (name == "paired") return AuxMode::paired;
  if (name == "noise") return AuxMode::noise;
  if (name == "self") return AuxMode::self;
  throw std::invalid_argument("unknown aux mode: " + name);
}

std::string mask_kind_name(MaskKind k) {
  return k == MaskKind::random ? "random" : "equispaced";
}

MaskKind mask_kind_from_name(const std::string& name) {
  if (name == "random") return MaskKind::random;
  if (name == "equispaced") return MaskKind::equispaced;
  throw std::invalid_argument("unknown mask kind: " + name);
}

PhantomPair make_synthetic_pair(const SyntheticPhantomSpec& spec, size_t index) {
  if (spec.H == 0 || spec.W == 0)
    throw std::invalid_argument("phantom spec needs positive H and W");
  if (spec.max_ellipses < spec.min_ellipses)
    throw std::invalid_argument("phantom spec: max_ellipses < min_ellipses");
  Rng rng(derive_seed(spec.seed, index));

  // draw order: count, then per ellipse (cx, cy, a, b, theta, amp), then the
  // bias field's (fx, fy, phase)
  const size_t count =
      spec.min_ellipses +
      static_cast<size_t>(rng.below(spec.max_ellipses - spec.min_ellipses + 1));
  struct Ellipse {
    double cx, cy, a, b, cth, sth, amp;
  };
  std::vector<Ellipse> shapes(count);
  const double side = static_cast<double>(std::min(spec.H, spec.W));
  for (auto& e : shapes) {
    e.cx = rng.uniform(0.25, 0.75) * static_cast<double>(spec.W);
    e.cy = rng.uniform(0.25, 0.75) * static_cast<double>(spec.H);
    e.a = rng.uniform(0.25, 0.55) * side;
    e.b = rng.uniform(0.25, 0.55) * side;
    const double th = rng.uniform(0.0, 3.14159265358979323846);
    e.cth = std::cos(th);
    e.sth = std::sin(th);
    e.amp = rng.uniform(0.7, 1.0);
  }
  const double fx = 1.0 + static_cast<double>(rng.below(2));
  const double fy = 1.0 + static_cast<double>(rng.below(2));
  const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

  std::vector<double> a_vals(spec.H * spec.W), b_vals(spec.H * spec.W);
  for (size_t y = 0; y < spec.H; ++y) {
    for (size_t x = 0; x < spec.W; ++x) {
      double field = 0.0;
      for (const auto& e : shapes) {
        const double dx = (static_cast<double>(x) + 0.5) - e.cx;
        const double dy = (static_cast<double>(y) + 0.5) - e.cy;
        const double u = (dx * e.cth + dy * e.sth) / e.a;
        const double v = (-dx * e.sth + dy * e.cth) / e.b;
        const double r2 = u * u + v * v;
        // smooth dome: full strength near the center, wide linear falloff
        field += e.amp * clamp01((1.3 - r2) / 0.9);
      }
      field = clamp01(field);
      const double bias =
          0.5 + 0.5 * std::sin(2.0 * 3.14159265358979323846 *
                                   (fx * (static_cast<double>(x) + 0.5) /
                                        static_cast<double>(spec.W) +
                                    fy * (static_cast<double>(y) + 0.5) /
                                        static_cast<double>(spec.H)) +
                               phase);
      a_vals[y * spec.W + x] = 0.1 + 0.85 * field;
      b_vals[y * spec.W + x] = clamp01(1.0 - 0.7 * field + 0.3 * bias);
    }
  }
  PhantomPair pair;
  pair.img_a = normalize(Tensor::from_data({spec.H, spec.W}, std::move(a_vals))).image;
  pair.img_b = normalize(Tensor::from_data({spec.H, spec.W}, std::move(b_vals))).image;
  return pair;
}

std::vector<DegradedSample> build_dataset(size_t n, const DatasetParams& dp,
                                          const SyntheticPhantomSpec& spec) {
  if (n == 0) throw std::invalid_argument("build_dataset needs n >= 1");
  if (dp.task == Task::super_resolution && dp.s == 0)
    throw std::invalid_argument("build_dataset: scale must be positive");
  std::vector<DegradedSample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const PhantomPair pair = make_synthetic_pair(spec, i);
    const uint64_t sample_seed = derive_seed(dp.degrade_seed, i);
    DegradedSample s;
    s.task = dp.task;
    s.target_gt = pair.img_b;

    const ComplexGrid y = fft2(ComplexGrid::from_real(pair.img_b));
    Tensor degraded;
    if (dp.task == Task::reconstruction) {
      if (dp.accel <= 1) {
        degraded = zero_fill(y);
      } else {
        const SamplingMask m = make_mask(dp.mask_kind, dp.accel,
                                         dp.center_fraction, spec.W,
                                         derive_seed(sample_seed, 0));
        degraded = zero_fill(undersample(y, m));
      }
    } else {
      degraded = degrade_lr(y, dp.s);
    }
    const Normalized nin = normalize(degraded);
    s.target_input = nin.image;
    s.target_max = nin.max_value;

    switch (dp.aux_mode) {
      case AuxMode::paired:
        s.aux_image = pair.img_a;
        break;
      case AuxMode::noise: {
        Rng nrng(derive_seed(sample_seed, 1));
        std::vector<double> noise(spec.H * spec.W);
        for (auto& v : noise) v = nrng.uniform();
        s.aux_image = Tensor::from_data({spec.H, spec.W}, std::move(noise));
        break;
      }
      case AuxMode::self:
        s.aux_image = bilinear_upsample(s.target_input, spec.H, spec.W);
        break;
    }
    s.aux_max = 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

void sgd_step(ParamStore& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size())
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params.size()) +
                                " parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.get(i);
    const Tensor& g = grads[i];
    if (g.shape() != p.shape())
      throw std::invalid_argument("sgd_step: gradient shape " + g.shape_str() +
                                  " does not match parameter " + params.name(i));
    std::vector<double> vals(p.size());
    for (size_t j = 0; j < p.size(); ++j) vals[j] = p.at(j) - lr * g.at(j);
    params.set(i, Tensor::from_data(p.shape(), std::move(vals), p.dtype()));
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (batch == 0) throw std::invalid_argument("train config: batch must be >= 1");
  if (train_samples == 0)
    throw std::invalid_argument("train config: train_samples must be >= 1");
  if (batch > train_samples)
    throw std::invalid_argument("train config: batch exceeds dataset size");
  if (eval_samples == 0)
    throw std::invalid_argument("train config: eval_samples must be >= 1");
  if (accel == 0) throw std::invalid_argument("train config: accel must be >= 1");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig tc;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got: " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config: empty key or value in: " + line);

    if (key == "H") tc.model.H = std::stoull(value);
    else if (key == "W") tc.model.W = std::stoull(value);
    else if (key == "C") tc.model.C = std::stoull(value);
    else if (key == "P") tc.model.P = std::stoull(value);
    else if (key == "N_enc") tc.model.N_enc = std::stoull(value);
    else if (key == "heads") tc.model.heads = std::stoull(value);
    else if (key == "ffn_mult") tc.model.ffn_mult = std::stoull(value);
    else if (key == "task") tc.model.task = task_from_name(value);
    else if (key == "s") tc.model.s = std::stoull(value);
    else if (key == "alpha") tc.model.alpha = std::stod(value);
    else if (key == "eps_ln") tc.model.eps_ln = std::stod(value);
    else if (key == "fusion_variant") tc.model.variant = variant_from_name(value);
    else if (key == "dtype") tc.model.dtype = dtype_from_name(value);
    else if (key == "lr") tc.lr = std::stod(value);
    else if (key == "batch") tc.batch = std::stoull(value);
    else if (key == "steps") tc.steps = std::stoull(value);
    else if (key == "train_samples") tc.train_samples = std::stoull(value);
    else if (key == "eval_samples") tc.eval_samples = std::stoull(value);
    else if (key == "mask_kind") tc.mask_kind = mask_kind_from_name(value);
    else if (key == "accel") tc.accel = static_cast<unsigned>(std::stoul(value));
    else if (key == "center_fraction") tc.center_fraction = std::stod(value);
    else if (key == "aux_mode") tc.aux_mode = aux_mode_from_name(value);
    else if (key == "seed") tc.seed = std::stoull(value);
    else throw std::invalid_argument("config: unknown key " + key);
  }
  tc.validate();
  return tc;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(std::move(buf).str());
}

std::string serialize_train_config(const TrainConfig& tc) {
  std::ostringstream out;
  out << "H=" << tc.model.H << "\n";
  out << "W=" << tc.model.W << "\n";
  out << "C=" << tc.model.C << "\n";
  out << "P=" << tc.model.P << "\n";
  out << "N_enc=" << tc.model.N_enc << "\n";
  out << "heads=" << tc.model.heads << "\n";
  out << "ffn_mult=" << tc.model.ffn_mult << "\n";
  out << "task=" << task_name(tc.model.task) << "\n";
  out << "s=" << tc.model.s << "\n";
  out << "alpha=" << format_double(tc.model.alpha) << "\n";
  out << "eps_ln=" << format_double(tc.model.eps_ln) << "\n";
  out << "fusion_variant=" << variant_name(tc.model.variant) << "\n";
  out << "dtype=" << dtype_name(tc.model.dtype) << "\n";
  out << "lr=" << format_double(tc.lr) << "\n";
  out << "batch=" << tc.batch << "\n";
  out << "steps=" << tc.steps << "\n";
  out << "train_samples=" << tc.train_samples << "\n";
  out << "eval_samples=" << tc.eval_samples << "\n";
  out << "mask_kind=" << mask_kind_name(tc.mask_kind) << "\n";
  out << "accel=" << tc.accel << "\n";
  out << "center_fraction=" << format_double(tc.center_fraction) << "\n";
  out << "aux_mode=" << aux_mode_name(tc.aux_mode) << "\n";
  out << "seed=" << tc.seed << "\n";
  return std::move(out).str();
}

nlohmann::ordered_json train_config_json(const TrainConfig& tc) {
  nlohmann::ordered_json j;
  j["H"] = tc.model.H;
  j["W"] = tc.model.W;
  j["C"] = tc.model.C;
  j["P"] = tc.model.P;
  j["N_enc"] = tc.model.N_enc;
  j["heads"] = tc.model.heads;
  j["ffn_mult"] = tc.model.ffn_mult;
  j["task"] = task_name(tc.model.task);
  j["s"] = tc.model.s;
  j["alpha"] = tc.model.alpha;
  j["eps_ln"] = tc.model.eps_ln;
  j["fusion_variant"] = variant_name(tc.model.variant);
  j["dtype"] = dtype_name(tc.model.dtype);
  j["lr"] = tc.lr;
  j["batch"] = tc.batch;
  j["steps"] = tc.steps;
  j["train_samples"] = tc.train_samples;
  j["eval_samples"] = tc.eval_samples;
  j["mask_kind"] = mask_kind_name(tc.mask_kind);
  j["accel"] = tc.accel;
  j["center_fraction"] = tc.center_fraction;
  j["aux_mode"] = aux_mode_name(tc.aux_mode);
  j["seed"] = tc.seed;
  return j;
}

namespace {

nlohmann::ordered_json stat_json(const MetricStat& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["excluded"] = s.excluded;
  j["values"] = s.values;
  return j;
}

nlohmann::ordered_json report_json_obj(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "mtrans-train-report";
  j["version"] = 1;
  j["config"] = train_config_json(r.config);
  j["initial_loss"] = r.initial_loss;
  j["final_loss"] = r.final_loss;
  j["losses"] = r.losses;
  nlohmann::ordered_json ev;
  ev["psnr"] = stat_json(r.eval.psnr);
  ev["ssim"] = stat_json(r.eval.ssim);
  ev["nmse"] = stat_json(r.eval.nmse);
  j["eval"] = ev;
  return j;
}

}  // namespace

std::string train_report_log(const TrainReport& r) {
  std::ostringstream out;
  out << "mtrans-train-report v1\n";
  std::istringstream cfg(serialize_train_config(r.config));
  std::string line;
  while (std::getline(cfg, line)) out << "config " << line << "\n";
  out << "initial_loss " << format_double(r.initial_loss) << "\n";
  out << "final_loss " << format_double(r.final_loss) << "\n";
  for (size_t i = 0; i < r.losses.size(); ++i)
    out << "step " << i << " " << format_double(r.losses[i]) << "\n";
  auto stat = [&](const char* name, const MetricStat& s) {
    out << "eval " << name << " mean " << format_double(s.mean) << " stddev "
        << format_double(s.stddev) << " excluded " << s.excluded << "\n";
  };
  stat("psnr", r.eval.psnr);
  stat("ssim", r.eval.ssim);
  stat("nmse", r.eval.nmse);
  for (size_t i = 0; i < r.eval.psnr.values.size(); ++i) {
    out << "sample " << i << " psnr " << format_double(r.eval.psnr.values[i])
        << " ssim " << format_double(r.eval.ssim.values[i]) << " nmse "
        << format_double(r.eval.nmse.values[i]) << "\n";
  }
  return std::move(out).str();
}

std::string train_report_json(const TrainReport& r) {
  return report_json_obj(r).dump(2) + "\n";
}

std::vector<DegradedSample> build_train_dataset(const TrainConfig& tc) {
  SyntheticPhantomSpec spec;
  spec.H = tc.model.H;
  spec.W = tc.model.W;
  spec.seed = derive_seed(tc.seed, seed_train_phantoms);

  DatasetParams dp;
  dp.task = tc.model.task;
  dp.mask_kind = tc.mask_kind;
  dp.accel = tc.accel;
  dp.center_fraction = tc.center_fraction;
  dp.s = tc.model.s;
  dp.aux_mode = tc.aux_mode;
  dp.degrade_seed = derive_seed(tc.seed, seed_train_degrade);
  return build_dataset(tc.train_samples, dp, spec);
}

std::vector<DegradedSample> build_eval_dataset(const TrainConfig& tc) {
  SyntheticPhantomSpec spec;
  spec.H = tc.model.H;
  spec.W = tc.model.W;
  spec.seed = derive_seed(tc.seed, seed_eval_phantoms);

  DatasetParams dp;
  dp.task = tc.model.task;
  dp.mask_kind = tc.mask_kind;
  dp.accel = tc.accel;
  dp.center_fraction = tc.center_fraction;
  dp.s = tc.model.s;
  dp.aux_mode = tc.aux_mode;
  dp.degrade_seed = derive_seed(tc.seed, seed_eval_degrade);
  return build_dataset(tc.eval_samples, dp, spec);
}

TrainResult train(const TrainConfig& tc, const std::string& checkpoint_path) {
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const MTransConfig& mc = tc.model;

  const auto train_set = build_train_dataset(tc);
  const auto eval_set = build_eval_dataset(tc);

  TrainResult res;
  res.params = init_mtrans_params(mc, derive_seed(tc.seed, seed_init));
  res.report.config = tc;

  auto full_loss = [&](const ParamStore& ps) {
    double acc = 0.0;
    for (const auto& s : train_set) {
      const ForwardResult r = mtrans_forward(s.target_input, s.aux_image, ps, mc);
      acc += sample_loss(r, s, mc).value();
    }
    return acc / static_cast<double>(train_set.size());
  };
  res.report.initial_loss = full_loss(res.params.store);

  Rng order(derive_seed(tc.seed, seed_batch_order));
  std::vector<size_t> indices(train_set.size());
  const size_t n_params = res.params.store.size();
  for (size_t step = 0; step < tc.steps; ++step) {
    std::iota(indices.begin(), indices.end(), size_t{0});
    for (size_t i = 0; i < tc.batch; ++i) {
      const size_t j = i + static_cast<size_t>(order.below(indices.size() - i));
      std::swap(indices[i], indices[j]);
    }

    double batch_loss = 0.0;
    std::vector<std::vector<double>> gsum(n_params);
    for (size_t k = 0; k < tc.batch; ++k) {
      const DegradedSample& s = train_set[indices[k]];
      Tape tape;
      ParamStore watched = res.params.store.watched(tape);
      const ForwardResult r = mtrans_forward(s.target_input, s.aux_image, watched, mc);
      const Tensor loss = sample_loss(r, s, mc);
      batch_loss += loss.value();
      const std::vector<Tensor> grads = tape.backward(loss);
      for (size_t pi = 0; pi < n_params; ++pi) {
        if (gsum[pi].empty()) gsum[pi].assign(grads[pi].size(), 0.0);
        for (size_t j = 0; j < grads[pi].size(); ++j) gsum[pi][j] += grads[pi].at(j);
      }
    }
    batch_loss /= static_cast<double>(tc.batch);
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               "; parameter norms: " + param_norms(res.params.store));
    res.report.losses.push_back(batch_loss);

    std::vector<Tensor> gtensors(n_params);
    for (size_t pi = 0; pi < n_params; ++pi) {
      for (auto& v : gsum[pi]) v /= static_cast<double>(tc.batch);
      gtensors[pi] = Tensor::from_data(res.params.store.get(pi).shape(),
                                       std::move(gsum[pi]));
    }
    sgd_step(res.params.store, gtensors, tc.lr);
  }

  res.report.final_loss = full_loss(res.params.store);
  res.report.eval = evaluate(res.params.store, mc, eval_set);
  res.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!checkpoint_path.empty())
    save_checkpoint(checkpoint_path, mc, res.params.store);
  return res;
}

MetricSummary evaluate(const ParamStore& params, const MTransConfig& cfg,
                       const std::vector<DegradedSample>& dataset, size_t jobs) {
  const size_t n = dataset.size();
  std::vector<double> psnr_v(n), ssim_v(n), nmse_v(n);
  auto score = [&](size_t i) {
    const DegradedSample& s = dataset[i];
    const ForwardResult r = mtrans_forward(s.target_input, s.aux_image, params, cfg);
    double peak = 0.0;
    for (size_t j = 0; j < s.target_gt.size(); ++j)
      peak = std::max(peak, s.target_gt.at(j));
    psnr_v[i] = psnr(r.x_tar, s.target_gt, peak);
    ssim_v[i] = ssim(r.x_tar, s.target_gt, peak);
    nmse_v[i] = nmse(r.x_tar, s.target_gt);
  };
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) score(i);
  } else {
    const size_t workers = std::min(jobs, n);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t i = w; i < n; i += workers) score(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  MetricSummary sum;
  sum.psnr = summarize(std::move(psnr_v));
  sum.ssim = summarize(std::move(ssim_v));
  sum.nmse = summarize(std::move(nmse_v));
  return sum;
}

AblationReport run_ablation(const std::vector<AblationCell>& cells,
                            const std::vector<uint64_t>& seeds) {
  if (cells.empty()) throw std::invalid_argument("run_ablation: no cells");
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  for (const auto& c : cells) {
    c.config.validate();
    if (c.config.eval_samples != cells[0].config.eval_samples)
      throw std::invalid_argument(
          "run_ablation: cells must share eval_samples for pairing");
  }

  AblationReport rep;
  rep.seeds = seeds;
  for (const auto& c : cells) {
    rep.cell_names.push_back(c.name);
    std::vector<TrainReport> runs;
    for (uint64_t s : seeds) {
      TrainConfig tc = c.config;
      tc.seed = s;
      runs.push_back(train(tc).report);
    }
    rep.reports.push_back(std::move(runs));
  }

  // pooled per-sample held-out metrics, seed-major, paired across cells
  auto pool = [&](size_t cell, const MetricStat MetricSummary::*stat) {
    std::vector<double> vals;
    for (const auto& run : rep.reports[cell]) {
      const auto& v = (run.eval.*stat).values;
      vals.insert(vals.end(), v.begin(), v.end());
    }
    return vals;
  };
  auto mean_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] - b[i];
    return acc / static_cast<double>(a.size());
  };
  for (size_t i = 0; i < cells.size(); ++i) {
    for (size_t j = i + 1; j < cells.size(); ++j) {
      AblationPairTest t;
      t.cell_a = cells[i].name;
      t.cell_b = cells[j].name;
      const auto pa = pool(i, &MetricSummary::psnr);
      const auto pb = pool(j, &MetricSummary::psnr);
      const auto sa = pool(i, &MetricSummary::ssim);
      const auto sb = pool(j, &MetricSummary::ssim);
      const auto na = pool(i, &MetricSummary::nmse);
      const auto nb = pool(j, &MetricSummary::nmse);
      t.mean_diff_psnr = mean_diff(pa, pb);
      t.mean_diff_ssim = mean_diff(sa, sb);
      t.mean_diff_nmse = mean_diff(na, nb);
      t.psnr_test = paired_t_test(pa, pb);
      t.ssim_test = paired_t_test(sa, sb);
      t.nmse_test = paired_t_test(na, nb);
      rep.pairs.push_back(std::move(t));
    }
  }
  return rep;
}

AblationMatrix parse_ablation_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::string base;
  std::vector<std::pair<std::string, std::string>> cell_text;  // name -> lines
  AblationMatrix out;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key.empty()) continue;
    if (value.empty())
      throw std::invalid_argument("ablation matrix: missing value in: " + line);
    if (key == "seeds") {
      size_t start = 0;
      while (start <= value.size()) {
        const size_t comma = value.find(',', start);
        out.seeds.push_back(std::stoull(
            value.substr(start, comma == std::string::npos ? comma : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    } else if (key.rfind("base.", 0) == 0) {
      base += key.substr(5) + "=" + value + "\n";
    } else if (key.rfind("cell.", 0) == 0) {
      const size_t dot = key.find('.', 5);
      if (dot == std::string::npos)
        throw std::invalid_argument("ablation matrix: expected cell.<name>.<key>: " + line);
      const std::string name = key.substr(5, dot - 5);
      const std::string ckey = key.substr(dot + 1);
      auto it = std::find_if(cell_text.begin(), cell_text.end(),
                             [&](const auto& p) { return p.first == name; });
      if (it == cell_text.end()) {
        cell_text.emplace_back(name, ckey + "=" + value + "\n");
      } else {
        it->second += ckey + "=" + value + "\n";
      }
    } else {
      throw std::invalid_argument("ablation matrix: unknown directive " + key);
    }
  }
  if (out.seeds.empty())
    throw std::invalid_argument("ablation matrix: no seeds line");
  if (cell_text.empty())
    throw std::invalid_argument("ablation matrix: no cells");
  for (const auto& [name, overrides] : cell_text) {
    AblationCell cell;
    cell.name = name;
    cell.config = parse_train_config(base + overrides);
    out.cells.push_back(std::move(cell));
  }
  return out;
}

namespace {

nlohmann::ordered_json ttest_json(const TTestResult& t) {
  nlohmann::ordered_json j;
  j["t"] = t.t;
  j["p"] = t.p;
  j["n"] = t.n;
  j["degenerate"] = t.degenerate;
  return j;
}

}  // namespace

std::string ablation_report_log(const AblationReport& r) {
  std::ostringstream out;
  out << "mtrans-ablation-report v1\n";
  out << "seeds";
  for (uint64_t s : r.seeds) out << " " << s;
  out << "\n";
  for (size_t c = 0; c < r.cell_names.size(); ++c) {
    for (size_t k = 0; k < r.reports[c].size(); ++k) {
      const TrainReport& tr = r.reports[c][k];
      out << "cell " << r.cell_names[c] << " seed " << r.seeds[k] << " psnr "
          << format_double(tr.eval.psnr.mean) << " ssim "
          << format_double(tr.eval.ssim.mean) << " nmse "
          << format_double(tr.eval.nmse.mean) << " final_loss "
          << format_double(tr.final_loss) << "\n";
    }
  }
  for (const auto& p : r.pairs) {
    out << "pair " << p.cell_a << " vs " << p.cell_b << " psnr_diff "
        << format_double(p.mean_diff_psnr) << " p " << format_double(p.psnr_test.p)
        << " ssim_diff " << format_double(p.mean_diff_ssim) << " p "
        << format_double(p.ssim_test.p) << " nmse_diff "
        << format_double(p.mean_diff_nmse) << " p " << format_double(p.nmse_test.p)
        << "\n";
  }
  return std::move(out).str();
}

std::string ablation_report_json(const AblationReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "mtrans-ablation-report";
  j["version"] = 1;
  j["seeds"] = r.seeds;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (size_t c = 0; c < r.cell_names.size(); ++c) {
    nlohmann::ordered_json cell;
    cell["name"] = r.cell_names[c];
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& tr : r.reports[c]) runs.push_back(report_json_obj(tr));
    cell["runs"] = runs;
    cells.push_back(cell);
  }
  j["cells"] = cells;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs) {
    nlohmann::ordered_json pj;
    pj["a"] = p.cell_a;
    pj["b"] = p.cell_b;
    pj["psnr_mean_diff"] = p.mean_diff_psnr;
    pj["psnr_test"] = ttest_json(p.psnr_test);
    pj["ssim_mean_diff"] = p.mean_diff_ssim;
    pj["ssim_test"] = ttest_json(p.ssim_test);
    pj["nmse_mean_diff"] = p.mean_diff_nmse;
    pj["nmse_test"] = ttest_json(p.nmse_test);
    pairs.push_back(pj);
  }
  j["pairs"] = pairs;
  return j.dump(2) + "\n";
}

}  // namespace mtrans
