#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtrans/kspace.hpp"
#include "mtrans/tensor.hpp"

namespace mtrans {

enum class Branch : uint8_t { target = 0, auxiliary = 1 };

/// Fusion topology. The dual-branch default tiles the target features with
/// side P/2 and the auxiliary features with side P. The single-scale
/// variants give both branches the same side (P or P/2). early_fusion stacks
/// both images as a 2-channel input to one branch with self-attention.
enum class Variant : uint8_t {
  mtrans = 0,
  early_fusion = 1,
  single_scale_large = 2,
  single_scale_small = 3,
};

struct MTransConfig {
  size_t H = 32, W = 32;   // full-resolution output size
  size_t C = 16;           // head feature channels
  size_t P = 16;           // auxiliary patch side; target side is P/2
  size_t N_enc = 4;        // fusion stages
  size_t heads = 4;        // attention heads
  size_t ffn_mult = 2;     // FFN hidden width / token dim
  Task task = Task::reconstruction;
  size_t s = 1;            // super-resolution scale (1 for reconstruction)
  double alpha = 0.9;      // loss trade-off, target vs auxiliary
  double eps_ln = 1e-5;
  Variant variant = Variant::mtrans;
  DType dtype = DType::f64;

  /// throws invalid_argument when any structural invariant fails
  void validate() const;

  bool single_branch() const { return variant == Variant::early_fusion; }
  /// target-branch feature map size (the head preserves its input size;
  /// early fusion runs at full resolution on the upsampled input)
  size_t Ht() const { return single_branch() ? H : H / s; }
  size_t Wt() const { return single_branch() ? W : W / s; }
  size_t p_tar() const;
  size_t p_aux() const { return variant == Variant::single_scale_small ? P / 2 : P; }
  size_t d_tar() const { return p_tar() * p_tar() * C; }
  size_t d_aux() const { return p_aux() * p_aux() * C; }
  size_t n_tar() const { return (Ht() / p_tar()) * (Wt() / p_tar()); }
  size_t n_aux() const { return (H / p_aux()) * (W / p_aux()); }
};

/// Attention matrix captured during an evaluation-mode forward pass.
struct AttentionRecord {
  size_t stage = 0;
  Branch branch = Branch::target;
  size_t head = 0;
  size_t q_grid_h = 0;    // query branch's tile grid (for picking a token)
  size_t q_grid_w = 0;
  size_t kv_offset = 0;   // column where the other branch's keys start
  size_t kv_grid_h = 0;   // other branch's tile grid, for map reshaping
  size_t kv_grid_w = 0;
  Tensor matrix;          // [queries x keys], rows sum to 1
};
using AttentionRecords = std::vector<AttentionRecord>;

/// The model's learnable state is a flat named registry; helpers below name
/// tensors by dotted paths ("enc0.ca_tar.out.w"). Checkpoints serialize the
/// registry in registration order.
struct MTransParams {
  ParamStore store;
};

/// Fresh parameters: Glorot-uniform weights, zero biases, unit layer-norm
/// gains, positions drawn from N(0, 0.02^2). Deterministic in `seed`.
MTransParams init_mtrans_params(const MTransConfig& cfg, uint64_t seed);

/// The registry layout a config implies: (name, shape) in registration
/// order. Checkpoint loading validates stored parameters against this.
std::vector<std::pair<std::string, std::vector<size_t>>> mtrans_param_shapes(
    const MTransConfig& cfg);

/// Three 3x3 convolutions (first maps the input channels to C) with ReLU
/// between them, spatial size preserved. `img` is [H x W] or [cin x H x W].
Tensor head_forward(const Tensor& img, const ParamStore& p,
                    const std::string& prefix);

/// [C x H' x W'] -> [T x p^2*C]: non-overlapping p x p tiles in row-major
/// tile order, each flattened channel-major then row-major within the tile.
Tensor patchify(const Tensor& f, size_t p);
/// exact inverse of patchify
Tensor unpatchify(const Tensor& seq, size_t p, size_t C, size_t Hf, size_t Wf);

/// elementwise sum with the learnable position table
Tensor add_position(const Tensor& seq, const Tensor& pos);

/// One cross-attention block: Q = LN(q_src); K = V = rows of LN(q_src)
/// followed by LN'(kv_other); per-head scaled dot-product softmax; heads
/// re-concatenated; output LP(z + LN(q_src)). When kv_other has zero rows
/// the block degenerates to self-attention over q_src alone (and the kv
/// layer norm is unused). Parameter paths: <prefix>.ln_q.{g,b},
/// <prefix>.ln_kv.{g,b}, <prefix>.out.{w,b}.
Tensor cross_attention(const Tensor& q_src, const Tensor& kv_other,
                       const ParamStore& p, const std::string& prefix,
                       const MTransConfig& cfg, size_t stage, Branch branch,
                       size_t kv_grid_h, size_t kv_grid_w,
                       AttentionRecords* capture = nullptr);

/// One fusion stage. Dual branch: align each sequence to the other branch's
/// token dim, run symmetric cross attention with residuals, then
/// LP(FFN(LN(z)) + z) with the exit projection restoring the branch's native
/// dim so stages compose.
void encoder_forward(Tensor& z_tar, Tensor& z_aux, const ParamStore& p,
                     const MTransConfig& cfg, size_t stage,
                     AttentionRecords* capture = nullptr);

/// N_enc sequential stages (identity when N_enc = 0)
void transformer_forward(Tensor& z_tar, Tensor& z_aux, const ParamStore& p,
                         const MTransConfig& cfg,
                         AttentionRecords* capture = nullptr);

/// unpatchify, then 3x3 conv, ReLU, 3x3 conv, ReLU, 1x1 conv. The SR target
/// tail emits s^2 channels and pixel-shuffles them up to H x W; every other
/// tail emits one channel at its branch's feature size.
Tensor tail_forward(const Tensor& seq, const ParamStore& p,
                    const std::string& prefix, const MTransConfig& cfg,
                    Branch branch);

struct ForwardResult {
  Tensor x_tar;  // H x W
  Tensor x_aux;  // H x W; undefined() for the single-branch variant
};

/// Full pipeline: heads -> patchify -> positions -> fusion stages -> tails.
/// Inputs are expected normalized to [0,1]. Deterministic given params.
ForwardResult mtrans_forward(const Tensor& target_input, const Tensor& aux_image,
                             const ParamStore& p, const MTransConfig& cfg,
                             AttentionRecords* capture = nullptr);

/// alpha * mean|x'_tar - x_tar| + (1 - alpha) * mean|x'_aux - x_aux|
Tensor mtrans_loss(const Tensor& pred_tar, const Tensor& gt_tar,
                   const Tensor& pred_aux, const Tensor& gt_aux, double alpha);

/// Heat map for one captured attention matrix: the center query token's
/// attention row over the other branch's kv tokens, reshaped to that
/// branch's tile grid, bilinearly upsampled to out_h x out_w, and scaled so
/// the maximum is exactly 1.
Tensor attention_map(const AttentionRecords& records, size_t stage, size_t head,
                     Branch branch, size_t out_h, size_t out_w);

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::string task_name(Task t);
Task task_from_name(const std::string& name);

}  // namespace mtrans
