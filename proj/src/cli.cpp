#include "mtrans/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtrans/gradcheck.hpp"
#include "mtrans/harness.hpp"
#include "mtrans/io.hpp"
#include "mtrans/rng.hpp"

namespace mtrans {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

bool same_model(const MTransConfig& a, const MTransConfig& b) {
  return a.H == b.H && a.W == b.W && a.C == b.C && a.P == b.P &&
         a.N_enc == b.N_enc && a.heads == b.heads && a.ffn_mult == b.ffn_mult &&
         a.task == b.task && a.s == b.s && a.alpha == b.alpha &&
         a.eps_ln == b.eps_ln && a.variant == b.variant && a.dtype == b.dtype;
}

nlohmann::ordered_json stat_json(const MetricStat& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["excluded"] = s.excluded;
  j["values"] = s.values;
  return j;
}

std::string eval_report_log(const TrainConfig& tc, const MetricSummary& ms) {
  std::ostringstream out;
  out << "mtrans-eval-report v1\n";
  std::istringstream cfg(serialize_train_config(tc));
  std::string line;
  while (std::getline(cfg, line)) out << "config " << line << "\n";
  auto stat = [&](const char* name, const MetricStat& s) {
    out << "eval " << name << " mean " << format_double(s.mean) << " stddev "
        << format_double(s.stddev) << " excluded " << s.excluded << "\n";
  };
  stat("psnr", ms.psnr);
  stat("ssim", ms.ssim);
  stat("nmse", ms.nmse);
  for (size_t i = 0; i < ms.psnr.values.size(); ++i) {
    out << "sample " << i << " psnr " << format_double(ms.psnr.values[i])
        << " ssim " << format_double(ms.ssim.values[i]) << " nmse "
        << format_double(ms.nmse.values[i]) << "\n";
  }
  return std::move(out).str();
}

std::string eval_report_json(const TrainConfig& tc, const MetricSummary& ms) {
  nlohmann::ordered_json j;
  j["format"] = "mtrans-eval-report";
  j["version"] = 1;
  j["config"] = train_config_json(tc);
  nlohmann::ordered_json ev;
  ev["psnr"] = stat_json(ms.psnr);
  ev["ssim"] = stat_json(ms.ssim);
  ev["nmse"] = stat_json(ms.nmse);
  j["eval"] = ev;
  return j.dump(2) + "\n";
}

struct MaskArgs {
  std::string kind;
  unsigned accel = 4;
  size_t width = 0;
  uint64_t seed = 0;
  std::string out_path;
};

int run_mask(const MaskArgs& a, std::ostream& out, std::ostream& err) {
  SamplingMask m;
  try {
    m = make_mask(mask_kind_from_name(a.kind), a.accel, 0.08, a.width, a.seed);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  write_mask_mtt(a.out_path, m);
  out << "wrote " << a.out_path << " (" << m.num_sampled() << " of " << m.W
      << " columns sampled)\n";
  return 0;
}

struct DegradeArgs {
  std::string task;
  std::string in_path;
  std::string mask_path;
  size_t scale = 0;
  std::string out_path;
};

int run_degrade(const DegradeArgs& a, std::ostream& out, std::ostream& err) {
  const bool sr = a.task == "sr";
  if (!sr && a.mask_path.empty()) {
    err << "error: --task recon requires --mask\n";
    return 1;
  }
  if (sr && a.scale == 0) {
    err << "error: --task sr requires --scale\n";
    return 1;
  }

  const Tensor img = read_mtt(a.in_path);
  if (img.rank() != 2)
    throw std::runtime_error(a.in_path + ": expected a rank-2 image, got shape " +
                             img.shape_str());
  const ComplexGrid y = fft2(ComplexGrid::from_real(img));

  Tensor result;
  if (sr) {
    result = degrade_lr(y, a.scale);
  } else {
    const SamplingMask m = read_mask_mtt(a.mask_path);
    if (m.W != img.dim(1))
      throw std::runtime_error(a.mask_path + ": mask width " + std::to_string(m.W) +
                               " does not match image width " +
                               std::to_string(img.dim(1)));
    result = zero_fill(undersample(y, m));
  }
  write_mtt(a.out_path, result);
  out << "wrote " << a.out_path << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  const TrainConfig tc = load_train_config(a.config_path);
  std::filesystem::create_directories(a.out_dir);
  const TrainResult res = train(tc, join_path(a.out_dir, "checkpoint.txt"));
  atomic_write_file(join_path(a.out_dir, "report.log"),
                    train_report_log(res.report));
  atomic_write_file(join_path(a.out_dir, "report.json"),
                    train_report_json(res.report));
  out << "trained " << tc.steps << " steps: initial_loss "
      << format_double(res.report.initial_loss) << " final_loss "
      << format_double(res.report.final_loss) << " held-out psnr mean "
      << format_double(res.report.eval.psnr.mean) << "\n";
  out << "wrote " << join_path(a.out_dir, "report.log") << ", "
      << join_path(a.out_dir, "report.json") << ", "
      << join_path(a.out_dir, "checkpoint.txt") << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt_path;
  std::string config_path;
  std::string out_dir;
  size_t jobs = 1;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt_path);
  const TrainConfig tc = load_train_config(a.config_path);
  if (!same_model(ck.config, tc.model))
    throw std::runtime_error(a.ckpt_path + ": checkpoint model differs from " +
                             a.config_path + "; eval needs the training config");
  const auto dataset = build_eval_dataset(tc);
  const MetricSummary ms = evaluate(ck.params.store, ck.config, dataset, a.jobs);
  std::filesystem::create_directories(a.out_dir);
  atomic_write_file(join_path(a.out_dir, "eval.log"), eval_report_log(tc, ms));
  atomic_write_file(join_path(a.out_dir, "eval.json"), eval_report_json(tc, ms));
  out << "evaluated " << dataset.size() << " samples: psnr mean "
      << format_double(ms.psnr.mean) << " ssim mean " << format_double(ms.ssim.mean)
      << " nmse mean " << format_double(ms.nmse.mean) << "\n";
  out << "wrote " << join_path(a.out_dir, "eval.log") << ", "
      << join_path(a.out_dir, "eval.json") << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string config_path;
};

int run_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig tc = load_train_config(a.config_path);
  if (tc.model.dtype != DType::f64)
    throw std::runtime_error(a.config_path + ": gradient checking needs dtype=f64");
  tc.train_samples = 1;
  tc.batch = 1;
  const auto dataset = build_train_dataset(tc);
  const DegradedSample& s = dataset[0];

  const MTransParams params =
      init_mtrans_params(tc.model, derive_seed(tc.seed, seed_init));
  const MTransConfig& mc = tc.model;
  LossFn fn = [&](const ParamStore& ps, Tape&) {
    const ForwardResult r = mtrans_forward(s.target_input, s.aux_image, ps, mc);
    if (mc.single_branch())
      return mtrans_loss(r.x_tar, s.target_gt, Tensor(), Tensor(), 1.0);
    return mtrans_loss(r.x_tar, s.target_gt, r.x_aux, s.aux_image, mc.alpha);
  };

  const GradCheckReport rep = grad_check(fn, params.store, 1e-6, tc.seed, 8);
  for (const GradCheckParam& p : rep.params)
    out << "param " << p.name << " coords " << p.coords_checked << " max_rel_err "
        << format_double(p.max_rel_err) << " kinks " << p.kinks_excluded << "\n";
  out << "gradcheck max_rel_err " << format_double(rep.max_rel_err) << " eps "
      << format_double(rep.eps) << " kinks_excluded " << rep.kinks_excluded
      << "\n";
  if (rep.max_rel_err >= 1e-4) {
    err << "error: gradient check failed: max_rel_err "
        << format_double(rep.max_rel_err) << " >= 1e-4 (" << a.config_path << ")\n";
    return 2;
  }
  out << "gradcheck passed\n";
  return 0;
}

struct AblateArgs {
  std::string matrix_path;
  std::string out_dir;
};

int run_ablate(const AblateArgs& a, std::ostream& out) {
  const AblationMatrix m = parse_ablation_matrix(slurp(a.matrix_path));
  const AblationReport rep = run_ablation(m.cells, m.seeds);
  std::filesystem::create_directories(a.out_dir);
  atomic_write_file(join_path(a.out_dir, "ablation.log"), ablation_report_log(rep));
  atomic_write_file(join_path(a.out_dir, "ablation.json"),
                    ablation_report_json(rep));
  for (size_t c = 0; c < rep.cell_names.size(); ++c) {
    double mean = 0.0;
    for (const TrainReport& r : rep.reports[c]) mean += r.eval.psnr.mean;
    mean /= static_cast<double>(rep.reports[c].size());
    out << "cell " << rep.cell_names[c] << " mean held-out psnr "
        << format_double(mean) << " over " << rep.seeds.size() << " seeds\n";
  }
  for (const AblationPairTest& p : rep.pairs)
    out << "pair " << p.cell_a << " vs " << p.cell_b << " psnr_diff "
        << format_double(p.mean_diff_psnr) << " p " << format_double(p.psnr_test.p)
        << "\n";
  out << "wrote " << join_path(a.out_dir, "ablation.log") << ", "
      << join_path(a.out_dir, "ablation.json") << "\n";
  return 0;
}

struct AttnArgs {
  std::string ckpt_path;
  size_t sample = 0;
  size_t stage = 0;
  size_t head = 0;
  uint64_t seed = 0;
  std::string out_path;
};

int run_attn(const AttnArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt_path);
  if (a.stage >= ck.config.N_enc) {
    err << "error: --stage " << a.stage << " out of range; checkpoint has "
        << ck.config.N_enc << " stages\n";
    return 1;
  }
  if (a.head >= ck.config.heads) {
    err << "error: --head " << a.head << " out of range; checkpoint has "
        << ck.config.heads << " heads\n";
    return 1;
  }
  if (ck.config.single_branch())
    throw std::runtime_error(a.ckpt_path +
                             ": attention export needs a dual-branch checkpoint");

  TrainConfig tc;
  tc.model = ck.config;
  tc.eval_samples = a.sample + 1;
  tc.seed = a.seed;
  const auto dataset = build_eval_dataset(tc);
  const DegradedSample& s = dataset[a.sample];

  AttentionRecords records;
  mtrans_forward(s.target_input, s.aux_image, ck.params.store, ck.config, &records);
  const Tensor map = attention_map(records, a.stage, a.head, Branch::target,
                                   ck.config.H, ck.config.W);
  write_pgm(a.out_path, map);
  out << "wrote " << a.out_path << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"k-space degradation, dual-branch transformer training, and "
               "attention export for paired-modality MR images"};
  app.name("mtrans");
  app.require_subcommand(1);

  MaskArgs mask_args;
  CLI::App* mask_cmd = app.add_subcommand("mask", "write a sampling mask");
  mask_cmd->add_option("--kind", mask_args.kind, "random|equispaced")
      ->required()
      ->check(CLI::IsMember({"random", "equispaced"}));
  mask_cmd->add_option("--accel", mask_args.accel, "acceleration factor")
      ->check(CLI::IsMember({4, 6, 8}));
  mask_cmd->add_option("--width", mask_args.width, "k-space width in columns")
      ->required()
      ->check(CLI::Range(size_t{1}, size_t{1} << 20));
  mask_cmd->add_option("--seed", mask_args.seed, "mask placement seed");
  mask_cmd->add_option("--out", mask_args.out_path, "output .mtt path")->required();

  DegradeArgs degrade_args;
  CLI::App* degrade_cmd =
      app.add_subcommand("degrade", "degrade a fully sampled image");
  degrade_cmd->add_option("--task", degrade_args.task, "recon|sr")
      ->required()
      ->check(CLI::IsMember({"recon", "sr"}));
  degrade_cmd->add_option("--in", degrade_args.in_path, "input image .mtt")
      ->required();
  CLI::Option* mask_opt =
      degrade_cmd->add_option("--mask", degrade_args.mask_path, "mask .mtt (recon)");
  degrade_cmd->add_option("--scale", degrade_args.scale, "downscale factor (sr)")
      ->check(CLI::Range(size_t{1}, size_t{64}))
      ->excludes(mask_opt);
  degrade_cmd->add_option("--out", degrade_args.out_path, "output .mtt path")
      ->required();

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train from a config file");
  train_cmd->add_option("--config", train_args.config_path, "key=value config file")
      ->required();
  train_cmd->add_option("--out", train_args.out_dir, "output directory")
      ->required();

  EvalArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on held-out samples");
  eval_cmd->add_option("--ckpt", eval_args.ckpt_path, "checkpoint manifest")
      ->required();
  eval_cmd->add_option("--config", eval_args.config_path, "key=value config file")
      ->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval_cmd->add_option("--jobs", eval_args.jobs, "evaluation threads")
      ->check(CLI::Range(size_t{1}, size_t{64}));

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "compare analytic gradients against finite differences");
  gradcheck_cmd
      ->add_option("--config", gradcheck_args.config_path, "key=value config file")
      ->required();

  AblateArgs ablate_args;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train a cell matrix and compare cells");
  ablate_cmd->add_option("--matrix", ablate_args.matrix_path, "matrix file")
      ->required();
  ablate_cmd->add_option("--out", ablate_args.out_dir, "output directory")
      ->required();

  AttnArgs attn_args;
  CLI::App* attn_cmd = app.add_subcommand(
      "attn", "export a target-branch attention map over the auxiliary image");
  attn_cmd->add_option("--ckpt", attn_args.ckpt_path, "checkpoint manifest")
      ->required();
  attn_cmd->add_option("--sample", attn_args.sample, "held-out sample index");
  attn_cmd->add_option("--stage", attn_args.stage, "fusion stage index");
  attn_cmd->add_option("--head", attn_args.head, "attention head index");
  attn_cmd->add_option("--seed", attn_args.seed, "sample generation seed");
  attn_cmd->add_option("--out", attn_args.out_path, "output .pgm path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mask_cmd->parsed()) return run_mask(mask_args, out, err);
    if (degrade_cmd->parsed()) return run_degrade(degrade_args, out, err);
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (eval_cmd->parsed()) return run_eval(eval_args, out);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck_args, out, err);
    if (ablate_cmd->parsed()) return run_ablate(ablate_args, out);
    if (attn_cmd->parsed()) return run_attn(attn_args, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace mtrans
