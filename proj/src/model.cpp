#include "mtrans/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "mtrans/image_ops.hpp"
#include "mtrans/rng.hpp"

namespace mtrans {

void MTransConfig::validate() const {
  if (H == 0 || W == 0) throw std::invalid_argument("config: H and W must be positive");
  if (C == 0) throw std::invalid_argument("config: C must be positive");
  if (P == 0) throw std::invalid_argument("config: P must be positive");
  if (heads == 0) throw std::invalid_argument("config: heads must be positive");
  if (ffn_mult == 0) throw std::invalid_argument("config: ffn_mult must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("config: alpha must lie in [0, 1]");
  if (!(eps_ln > 0.0)) throw std::invalid_argument("config: eps_ln must be positive");
  if (s == 0) throw std::invalid_argument("config: s must be positive");
  if (task == Task::reconstruction && s != 1)
    throw std::invalid_argument("config: reconstruction runs at scale s = 1");
  if (task == Task::super_resolution && s < 2)
    throw std::invalid_argument("config: super-resolution needs s >= 2");
  if (H % s != 0 || W % s != 0)
    throw std::invalid_argument("config: s must divide H and W");
  if ((variant == Variant::mtrans || variant == Variant::single_scale_small) && P % 2 != 0)
    throw std::invalid_argument("config: this variant halves P, so P must be even");
  if (Ht() % p_tar() != 0 || Wt() % p_tar() != 0)
    throw std::invalid_argument("config: the target patch side must tile the target feature map");
  if (d_tar() % heads != 0)
    throw std::invalid_argument("config: heads must divide the target token dim");
  if (!single_branch()) {
    if (H % p_aux() != 0 || W % p_aux() != 0)
      throw std::invalid_argument("config: the auxiliary patch side must tile the full image");
    if (d_aux() % heads != 0)
      throw std::invalid_argument("config: heads must divide the auxiliary token dim");
  }
}

size_t MTransConfig::p_tar() const {
  return (variant == Variant::mtrans || variant == Variant::single_scale_small) ? P / 2 : P;
}

namespace {

struct ParamSpec {
  enum class Init : uint8_t { glorot, zeros, ones, position };
  std::string name;
  std::vector<size_t> shape;
  Init init = Init::zeros;
  size_t fan_in = 0, fan_out = 0;
};

struct ParamBuilder {
  std::vector<ParamSpec>& specs;

  void lin(const std::string& name, size_t din, size_t dout) {
    specs.push_back({name + ".w", {din, dout}, ParamSpec::Init::glorot, din, dout});
    specs.push_back({name + ".b", {dout}, ParamSpec::Init::zeros, 0, 0});
  }
  void conv(const std::string& name, size_t cout, size_t cin, size_t k) {
    specs.push_back({name + ".w", {cout, cin, k, k}, ParamSpec::Init::glorot,
                     cin * k * k, cout * k * k});
    specs.push_back({name + ".b", {cout}, ParamSpec::Init::zeros, 0, 0});
  }
  void lnorm(const std::string& name, size_t d) {
    specs.push_back({name + ".g", {d}, ParamSpec::Init::ones, 0, 0});
    specs.push_back({name + ".b", {d}, ParamSpec::Init::zeros, 0, 0});
  }
  void pos(const std::string& name, size_t n, size_t d) {
    specs.push_back({name, {n, d}, ParamSpec::Init::position, 0, 0});
  }
};

Tensor ffn_block(const Tensor& z, const ParamStore& p, const std::string& prefix, double eps) {
  const Tensor n = layer_norm(z, p.get(prefix + ".ln.g"), p.get(prefix + ".ln.b"), eps);
  const Tensor h = relu(linear(n, p.get(prefix + ".fc1.w"), p.get(prefix + ".fc1.b")));
  return linear(h, p.get(prefix + ".fc2.w"), p.get(prefix + ".fc2.b"));
}

std::vector<ParamSpec> layout_params(const MTransConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  ParamBuilder b{specs};
  const size_t cin = cfg.single_branch() ? 2 : 1;
  b.conv("head_tar.conv1", cfg.C, cin, 3);
  b.conv("head_tar.conv2", cfg.C, cfg.C, 3);
  b.conv("head_tar.conv3", cfg.C, cfg.C, 3);
  if (!cfg.single_branch()) {
    b.conv("head_aux.conv1", cfg.C, 1, 3);
    b.conv("head_aux.conv2", cfg.C, cfg.C, 3);
    b.conv("head_aux.conv3", cfg.C, cfg.C, 3);
  }
  b.pos("pos_tar", cfg.n_tar(), cfg.d_tar());
  if (!cfg.single_branch()) b.pos("pos_aux", cfg.n_aux(), cfg.d_aux());
  for (size_t i = 0; i < cfg.N_enc; ++i) {
    const std::string pre = "enc" + std::to_string(i);
    if (cfg.single_branch()) {
      const size_t d = cfg.d_tar();
      b.lnorm(pre + ".ca_tar.ln_q", d);
      b.lin(pre + ".ca_tar.out", d, d);
      b.lnorm(pre + ".ffn_tar.ln", d);
      b.lin(pre + ".ffn_tar.fc1", d, cfg.ffn_mult * d);
      b.lin(pre + ".ffn_tar.fc2", cfg.ffn_mult * d, d);
      b.lin(pre + ".exit_tar", d, d);
    } else {
      const size_t dtar = cfg.d_tar();
      const size_t daux = cfg.d_aux();
      b.lin(pre + ".align_tar", dtar, daux);
      b.lin(pre + ".align_aux", daux, dtar);
      b.lnorm(pre + ".ca_tar.ln_q", daux);
      b.lnorm(pre + ".ca_tar.ln_kv", daux);
      b.lin(pre + ".ca_tar.out", daux, daux);
      b.lnorm(pre + ".ca_aux.ln_q", dtar);
      b.lnorm(pre + ".ca_aux.ln_kv", dtar);
      b.lin(pre + ".ca_aux.out", dtar, dtar);
      b.lnorm(pre + ".ffn_tar.ln", daux);
      b.lin(pre + ".ffn_tar.fc1", daux, cfg.ffn_mult * daux);
      b.lin(pre + ".ffn_tar.fc2", cfg.ffn_mult * daux, daux);
      b.lin(pre + ".exit_tar", daux, dtar);
      b.lnorm(pre + ".ffn_aux.ln", dtar);
      b.lin(pre + ".ffn_aux.fc1", dtar, cfg.ffn_mult * dtar);
      b.lin(pre + ".ffn_aux.fc2", cfg.ffn_mult * dtar, dtar);
      b.lin(pre + ".exit_aux", dtar, daux);
    }
  }
  const bool upscale_tar = cfg.task == Task::super_resolution && !cfg.single_branch();
  b.conv("tail_tar.conv1", cfg.C, cfg.C, 3);
  b.conv("tail_tar.conv2", cfg.C, cfg.C, 3);
  b.conv("tail_tar.conv3", upscale_tar ? cfg.s * cfg.s : 1, cfg.C, 1);
  if (!cfg.single_branch()) {
    b.conv("tail_aux.conv1", cfg.C, cfg.C, 3);
    b.conv("tail_aux.conv2", cfg.C, cfg.C, 3);
    b.conv("tail_aux.conv3", 1, cfg.C, 1);
  }
  return specs;
}

}  // namespace

MTransParams init_mtrans_params(const MTransConfig& cfg, uint64_t seed) {
  MTransParams mp;
  Rng rng(seed);
  for (const ParamSpec& sp : layout_params(cfg)) {
    switch (sp.init) {
      case ParamSpec::Init::glorot:
        mp.store.add(sp.name, Tensor::glorot_uniform(sp.shape, sp.fan_in,
                                                     sp.fan_out, rng, cfg.dtype));
        break;
      case ParamSpec::Init::zeros:
        mp.store.add(sp.name, Tensor::zeros(sp.shape, cfg.dtype));
        break;
      case ParamSpec::Init::ones:
        mp.store.add(sp.name, Tensor::full(sp.shape, 1.0, cfg.dtype));
        break;
      case ParamSpec::Init::position:
        mp.store.add(sp.name, Tensor::normal(sp.shape, 0.0, 0.02, rng, cfg.dtype));
        break;
    }
  }
  return mp;
}

std::vector<std::pair<std::string, std::vector<size_t>>> mtrans_param_shapes(
    const MTransConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<size_t>>> out;
  for (const ParamSpec& sp : layout_params(cfg)) out.emplace_back(sp.name, sp.shape);
  return out;
}

Tensor head_forward(const Tensor& img, const ParamStore& p, const std::string& prefix) {
  Tensor x = img;
  if (x.rank() == 2) x = reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3)
    throw std::invalid_argument("head_forward expects [H x W] or [c x H x W], got " +
                                img.shape_str());
  Tensor y = relu(conv2d(x, p.get(prefix + ".conv1.w"), p.get(prefix + ".conv1.b")));
  y = relu(conv2d(y, p.get(prefix + ".conv2.w"), p.get(prefix + ".conv2.b")));
  return conv2d(y, p.get(prefix + ".conv3.w"), p.get(prefix + ".conv3.b"));
}

Tensor patchify(const Tensor& f, size_t p) {
  if (f.rank() != 3)
    throw std::invalid_argument("patchify expects [C x H x W], got " + f.shape_str());
  if (p == 0) throw std::invalid_argument("patchify: patch side must be positive");
  const size_t C = f.dim(0), Hf = f.dim(1), Wf = f.dim(2);
  if (Hf % p != 0 || Wf % p != 0)
    throw std::invalid_argument("patchify: side " + std::to_string(p) + " does not tile " +
                                f.shape_str());
  const size_t gh = Hf / p, gw = Wf / p;
  const size_t T = gh * gw, d = p * p * C;
  auto idx = std::make_shared<std::vector<size_t>>(T * d);
  for (size_t ty = 0; ty < gh; ++ty)
    for (size_t tx = 0; tx < gw; ++tx) {
      const size_t t = ty * gw + tx;
      for (size_t c = 0; c < C; ++c)
        for (size_t py = 0; py < p; ++py)
          for (size_t px = 0; px < p; ++px)
            (*idx)[t * d + c * p * p + py * p + px] = (c * Hf + ty * p + py) * Wf + tx * p + px;
    }
  return permute_elements(f, idx, {T, d});
}

Tensor unpatchify(const Tensor& seq, size_t p, size_t C, size_t Hf, size_t Wf) {
  if (seq.rank() != 2)
    throw std::invalid_argument("unpatchify expects [T x d], got " + seq.shape_str());
  if (p == 0 || Hf % p != 0 || Wf % p != 0)
    throw std::invalid_argument("unpatchify: side " + std::to_string(p) + " does not tile " +
                                std::to_string(Hf) + "x" + std::to_string(Wf));
  const size_t gh = Hf / p, gw = Wf / p;
  const size_t T = gh * gw, d = p * p * C;
  if (seq.dim(0) != T || seq.dim(1) != d)
    throw std::invalid_argument("unpatchify: sequence " + seq.shape_str() + " does not match " +
                                std::to_string(T) + "x" + std::to_string(d));
  auto idx = std::make_shared<std::vector<size_t>>(C * Hf * Wf);
  for (size_t c = 0; c < C; ++c)
    for (size_t y = 0; y < Hf; ++y)
      for (size_t x = 0; x < Wf; ++x) {
        const size_t t = (y / p) * gw + x / p;
        const size_t j = c * p * p + (y % p) * p + x % p;
        (*idx)[(c * Hf + y) * Wf + x] = t * d + j;
      }
  return permute_elements(seq, idx, {C, Hf, Wf});
}

Tensor add_position(const Tensor& seq, const Tensor& pos) {
  if (seq.shape() != pos.shape())
    throw std::invalid_argument("add_position: shape mismatch " + seq.shape_str() + " vs " +
                                pos.shape_str());
  return add(seq, pos);
}

Tensor cross_attention(const Tensor& q_src, const Tensor& kv_other, const ParamStore& p,
                       const std::string& prefix, const MTransConfig& cfg, size_t stage,
                       Branch branch, size_t kv_grid_h, size_t kv_grid_w,
                       AttentionRecords* capture) {
  if (q_src.rank() != 2)
    throw std::invalid_argument("cross_attention: q_src must be [T x D], got " + q_src.shape_str());
  const size_t D = q_src.dim(1);
  if (D % cfg.heads != 0)
    throw std::invalid_argument("cross_attention: heads must divide the token dim");
  const bool has_kv = kv_other.defined() && kv_other.dim(0) > 0;
  if (has_kv && kv_other.dim(1) != D)
    throw std::invalid_argument("cross_attention: token dims differ after alignment: " +
                                q_src.shape_str() + " vs " + kv_other.shape_str());
  const Tensor q_n =
      layer_norm(q_src, p.get(prefix + ".ln_q.g"), p.get(prefix + ".ln_q.b"), cfg.eps_ln);
  Tensor kv = q_n;
  if (has_kv) {
    const Tensor kv_n =
        layer_norm(kv_other, p.get(prefix + ".ln_kv.g"), p.get(prefix + ".ln_kv.b"), cfg.eps_ln);
    kv = concat_rows(q_n, kv_n);
  }
  const size_t hd = D / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(cfg.heads);
  for (size_t h = 0; h < cfg.heads; ++h) {
    const Tensor qi = slice_cols(q_n, h * hd, (h + 1) * hd);
    const Tensor ki = slice_cols(kv, h * hd, (h + 1) * hd);
    const Tensor attn = softmax_rows(scale(matmul(qi, transpose(ki)), inv_sqrt));
    if (capture) {
      AttentionRecord rec;
      rec.stage = stage;
      rec.branch = branch;
      rec.head = h;
      if (branch == Branch::target) {
        rec.q_grid_h = cfg.Ht() / cfg.p_tar();
        rec.q_grid_w = cfg.Wt() / cfg.p_tar();
      } else {
        rec.q_grid_h = cfg.H / cfg.p_aux();
        rec.q_grid_w = cfg.W / cfg.p_aux();
      }
      rec.kv_offset = has_kv ? q_src.dim(0) : 0;
      rec.kv_grid_h = kv_grid_h;
      rec.kv_grid_w = kv_grid_w;
      rec.matrix = attn.detach();
      capture->push_back(std::move(rec));
    }
    outs.push_back(matmul(attn, ki));
  }
  const Tensor z_sa = concat_cols(outs);
  return linear(add(z_sa, q_n), p.get(prefix + ".out.w"), p.get(prefix + ".out.b"));
}

void encoder_forward(Tensor& z_tar, Tensor& z_aux, const ParamStore& p, const MTransConfig& cfg,
                     size_t stage, AttentionRecords* capture) {
  const std::string pre = "enc" + std::to_string(stage);
  if (cfg.single_branch()) {
    const Tensor ca = cross_attention(z_tar, Tensor(), p, pre + ".ca_tar", cfg, stage,
                                      Branch::target, cfg.Ht() / cfg.p_tar(),
                                      cfg.Wt() / cfg.p_tar(), capture);
    const Tensor z_ca = add(ca, z_tar);
    const Tensor f = ffn_block(z_ca, p, pre + ".ffn_tar", cfg.eps_ln);
    z_tar = linear(add(f, z_ca), p.get(pre + ".exit_tar.w"), p.get(pre + ".exit_tar.b"));
    return;
  }
  const Tensor zlp_tar = linear(z_tar, p.get(pre + ".align_tar.w"), p.get(pre + ".align_tar.b"));
  const Tensor zlp_aux = linear(z_aux, p.get(pre + ".align_aux.w"), p.get(pre + ".align_aux.b"));
  const Tensor ca_tar =
      cross_attention(zlp_tar, z_aux, p, pre + ".ca_tar", cfg, stage, Branch::target,
                      cfg.H / cfg.p_aux(), cfg.W / cfg.p_aux(), capture);
  const Tensor ca_aux =
      cross_attention(zlp_aux, z_tar, p, pre + ".ca_aux", cfg, stage, Branch::auxiliary,
                      cfg.Ht() / cfg.p_tar(), cfg.Wt() / cfg.p_tar(), capture);
  const Tensor zca_tar = add(ca_tar, zlp_tar);
  const Tensor zca_aux = add(ca_aux, zlp_aux);
  const Tensor f_tar = ffn_block(zca_tar, p, pre + ".ffn_tar", cfg.eps_ln);
  const Tensor f_aux = ffn_block(zca_aux, p, pre + ".ffn_aux", cfg.eps_ln);
  z_tar = linear(add(f_tar, zca_tar), p.get(pre + ".exit_tar.w"), p.get(pre + ".exit_tar.b"));
  z_aux = linear(add(f_aux, zca_aux), p.get(pre + ".exit_aux.w"), p.get(pre + ".exit_aux.b"));
}

void transformer_forward(Tensor& z_tar, Tensor& z_aux, const ParamStore& p,
                         const MTransConfig& cfg, AttentionRecords* capture) {
  for (size_t i = 0; i < cfg.N_enc; ++i) encoder_forward(z_tar, z_aux, p, cfg, i, capture);
}

Tensor tail_forward(const Tensor& seq, const ParamStore& p, const std::string& prefix,
                    const MTransConfig& cfg, Branch branch) {
  const bool tar = branch == Branch::target;
  const size_t pside = tar ? cfg.p_tar() : cfg.p_aux();
  const size_t Hf = tar ? cfg.Ht() : cfg.H;
  const size_t Wf = tar ? cfg.Wt() : cfg.W;
  Tensor y = unpatchify(seq, pside, cfg.C, Hf, Wf);
  y = relu(conv2d(y, p.get(prefix + ".conv1.w"), p.get(prefix + ".conv1.b")));
  y = relu(conv2d(y, p.get(prefix + ".conv2.w"), p.get(prefix + ".conv2.b")));
  y = conv2d(y, p.get(prefix + ".conv3.w"), p.get(prefix + ".conv3.b"));
  if (tar && cfg.task == Task::super_resolution && !cfg.single_branch())
    y = pixel_shuffle(y, cfg.s);
  return reshape(y, {y.dim(1), y.dim(2)});
}

ForwardResult mtrans_forward(const Tensor& target_input, const Tensor& aux_image,
                             const ParamStore& p, const MTransConfig& cfg,
                             AttentionRecords* capture) {
  cfg.validate();
  const size_t in_h = cfg.task == Task::super_resolution ? cfg.H / cfg.s : cfg.H;
  const size_t in_w = cfg.task == Task::super_resolution ? cfg.W / cfg.s : cfg.W;
  if (target_input.rank() != 2 || target_input.dim(0) != in_h || target_input.dim(1) != in_w)
    throw std::invalid_argument("target input must be " + std::to_string(in_h) + "x" +
                                std::to_string(in_w) + ", got " + target_input.shape_str());
  if (aux_image.rank() != 2 || aux_image.dim(0) != cfg.H || aux_image.dim(1) != cfg.W)
    throw std::invalid_argument("auxiliary image must be " + std::to_string(cfg.H) + "x" +
                                std::to_string(cfg.W) + ", got " + aux_image.shape_str());
  ForwardResult res;
  if (cfg.single_branch()) {
    Tensor tin = convert_dtype(target_input, cfg.dtype);
    if (cfg.task == Task::super_resolution)
      tin = convert_dtype(bilinear_upsample(tin, cfg.H, cfg.W), cfg.dtype);
    const Tensor aux = convert_dtype(aux_image, cfg.dtype);
    std::vector<double> st;
    st.reserve(2 * cfg.H * cfg.W);
    st.insert(st.end(), tin.values().begin(), tin.values().end());
    st.insert(st.end(), aux.values().begin(), aux.values().end());
    const Tensor stacked = Tensor::from_data({2, cfg.H, cfg.W}, std::move(st), cfg.dtype);
    const Tensor feat = head_forward(stacked, p, "head_tar");
    Tensor z = add_position(patchify(feat, cfg.p_tar()), p.get("pos_tar"));
    Tensor z_unused;
    transformer_forward(z, z_unused, p, cfg, capture);
    res.x_tar = tail_forward(z, p, "tail_tar", cfg, Branch::target);
    return res;
  }
  const Tensor tin = convert_dtype(target_input, cfg.dtype);
  const Tensor aux = convert_dtype(aux_image, cfg.dtype);
  const Tensor f_tar = head_forward(tin, p, "head_tar");
  const Tensor f_aux = head_forward(aux, p, "head_aux");
  Tensor z_tar = add_position(patchify(f_tar, cfg.p_tar()), p.get("pos_tar"));
  Tensor z_aux = add_position(patchify(f_aux, cfg.p_aux()), p.get("pos_aux"));
  transformer_forward(z_tar, z_aux, p, cfg, capture);
  res.x_tar = tail_forward(z_tar, p, "tail_tar", cfg, Branch::target);
  res.x_aux = tail_forward(z_aux, p, "tail_aux", cfg, Branch::auxiliary);
  return res;
}

Tensor mtrans_loss(const Tensor& pred_tar, const Tensor& gt_tar, const Tensor& pred_aux,
                   const Tensor& gt_aux, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("mtrans_loss: alpha must lie in [0, 1]");
  if (alpha == 1.0) return mean_abs_diff(pred_tar, gt_tar);
  if (!pred_aux.defined() || !gt_aux.defined())
    throw std::invalid_argument("mtrans_loss: the auxiliary term needs both auxiliary images");
  if (alpha == 0.0) return mean_abs_diff(pred_aux, gt_aux);
  return add(scale(mean_abs_diff(pred_tar, gt_tar), alpha),
             scale(mean_abs_diff(pred_aux, gt_aux), 1.0 - alpha));
}

Tensor attention_map(const AttentionRecords& records, size_t stage, size_t head, Branch branch,
                     size_t out_h, size_t out_w) {
  const AttentionRecord* rec = nullptr;
  for (const auto& r : records)
    if (r.stage == stage && r.head == head && r.branch == branch) {
      rec = &r;
      break;
    }
  if (!rec)
    throw std::invalid_argument("attention_map: no captured matrix for stage " +
                                std::to_string(stage) + ", head " + std::to_string(head));
  const size_t q = (rec->q_grid_h / 2) * rec->q_grid_w + rec->q_grid_w / 2;
  const size_t n_kv = rec->kv_grid_h * rec->kv_grid_w;
  if (q >= rec->matrix.dim(0) || rec->kv_offset + n_kv > rec->matrix.dim(1))
    throw std::runtime_error("attention_map: record grid does not match its matrix");
  std::vector<double> row(n_kv);
  for (size_t i = 0; i < n_kv; ++i) row[i] = rec->matrix.at2(q, rec->kv_offset + i);
  const Tensor grid = Tensor::from_data({rec->kv_grid_h, rec->kv_grid_w}, std::move(row));
  const Tensor up = bilinear_upsample(grid, out_h, out_w);
  double mx = 0.0;
  for (size_t i = 0; i < up.size(); ++i) mx = std::max(mx, up.at(i));
  if (!(mx > 0.0)) throw std::runtime_error("attention_map: degenerate all-zero map");
  std::vector<double> vals(up.size());
  for (size_t i = 0; i < up.size(); ++i) vals[i] = up.at(i) / mx;
  return Tensor::from_data({out_h, out_w}, std::move(vals));
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::mtrans: return "mtrans";
    case Variant::early_fusion: return "early_fusion";
    case Variant::single_scale_large: return "single_scale_large";
    case Variant::single_scale_small: return "single_scale_small";
  }
  throw std::logic_error("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "mtrans") return Variant::mtrans;
  if (name == "early_fusion") return Variant::early_fusion;
  if (name == "single_scale_large") return Variant::single_scale_large;
  if (name == "single_scale_small") return Variant::single_scale_small;
  throw std::invalid_argument("unknown variant: " + name);
}

std::string task_name(Task t) {
  return t == Task::reconstruction ? "reconstruction" : "super_resolution";
}

Task task_from_name(const std::string& name) {
  if (name == "reconstruction") return Task::reconstruction;
  if (name == "super_resolution") return Task::super_resolution;
  throw std::invalid_argument("unknown task: " + name);
}

}  // namespace mtrans
