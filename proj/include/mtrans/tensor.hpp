#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace mtrans {

class Tape;
class Rng;

enum class DType : uint8_t { f32 = 0, f64 = 1 };

/// Dense row-major n-dimensional real tensor. Storage is immutable after
/// construction; handles are cheap to copy and safe to share across threads.
/// A tensor may carry a node id on one tape, which is how it participates in
/// reverse-mode differentiation. Values are held as doubles; an f32 tensor
/// keeps every element exactly representable in single precision.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, DType dt = DType::f64);
  static Tensor full(std::vector<size_t> shape, double v, DType dt = DType::f64);
  static Tensor from_data(std::vector<size_t> shape, std::vector<double> vals,
                          DType dt = DType::f64);
  static Tensor scalar(double v, DType dt = DType::f64);
  /// uniform(-a, a) init, a = sqrt(6 / (fan_in + fan_out))
  static Tensor glorot_uniform(std::vector<size_t> shape, size_t fan_in,
                               size_t fan_out, Rng& rng, DType dt = DType::f64);
  static Tensor normal(std::vector<size_t> shape, double mean, double stddev,
                       Rng& rng, DType dt = DType::f64);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }
  size_t size() const;
  bool defined() const { return static_cast<bool>(data_); }
  DType dtype() const { return dtype_; }

  const double* data() const { return data_->data(); }
  const std::vector<double>& values() const { return *data_; }
  double at(size_t flat) const { return (*data_)[flat]; }
  double at2(size_t r, size_t c) const { return (*data_)[r * shape_[1] + c]; }
  /// value of a scalar (single-element) tensor
  double value() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor with_requires_grad(bool rg) const;

  int node() const { return node_; }
  Tape* tape() const { return tape_; }
  /// detached copy: same storage, no tape association
  Tensor detach() const;

  bool all_finite() const;
  std::string shape_str() const;

 private:
  friend class Tape;
  std::vector<size_t> shape_;
  std::shared_ptr<const std::vector<double>> data_;
  DType dtype_ = DType::f64;
  bool requires_grad_ = false;
  int node_ = -1;
  Tape* tape_ = nullptr;
};

/// Ordered registry of named parameter tensors. Each learnable tensor of a
/// model is added exactly once; order is stable, so gradient vectors and
/// checkpoints align by index.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  const Tensor& get(size_t i) const { return tensors_[i]; }
  const std::string& name(size_t i) const { return names_[i]; }
  bool contains(const std::string& name) const;
  void set(size_t i, Tensor t);
  size_t size() const { return tensors_.size(); }
  size_t total_elements() const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  /// Registers every tensor on the tape; returned store holds the watched
  /// handles, in the same order.
  ParamStore watched(Tape& tape) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

/// Reverse-mode tape. Ops append records in execution order (inputs always
/// precede their consumers), and backward() replays them exactly once in
/// reverse. A tape is confined to one logical thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Register a parameter. The returned handle carries this tape's node id.
  Tensor watch(const Tensor& t, const std::string& name);

  /// Reverse sweep from a scalar loss. Returns one gradient tensor per
  /// registered parameter, in registration order; parameters the loss does
  /// not reach get zero gradients. Rejects non-scalar losses.
  std::vector<Tensor> backward(const Tensor& loss);

  size_t num_params() const { return params_.size(); }
  const std::vector<std::pair<std::string, int>>& params() const { return params_; }
  size_t num_nodes() const { return node_sizes_.size(); }

  /// Pull closure: receives the output node's accumulated gradient and adds
  /// each input's share into its buffer via grad_buf().
  using Pull = std::function<void(Tape&, const std::vector<double>&)>;

  // -- used by op implementations --
  int add_result_node(Tensor& out);
  void record(std::vector<int> inputs, int output, Pull pull);
  bool has_grad(int node) const { return !grads_[node].empty(); }
  std::vector<double>& grad_buf(int node);
  DType dtype() const { return dtype_; }

 private:
  struct Record {
    std::vector<int> inputs;
    int output;
    Pull pull;
  };
  void bind_dtype(DType dt);

  std::vector<Record> records_;
  std::vector<size_t> node_sizes_;
  std::vector<std::vector<double>> grads_;
  std::vector<std::pair<std::string, int>> params_;
  std::vector<std::vector<size_t>> param_shapes_;
  bool dtype_bound_ = false;
  DType dtype_ = DType::f64;
};

// ---- differentiable operations ----------------------------------------

/// C[m x n] = A[m x k] * B[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// X[t x d_in] * W[d_in x d_out] + b broadcast over rows
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// row-wise softmax with max subtraction; rows sum to 1
Tensor softmax_rows(const Tensor& x);
/// per-row standardization (biased variance) then affine gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
Tensor relu(const Tensor& x);
/// cross-correlation, odd kernel, symmetric zero padding (k-1)/2, spatial
/// size preserved. input [c_in x H x W], kernels [c_out x c_in x k x k].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
/// depth-to-space: [c*r^2 x H x W] -> [c x rH x rW]
Tensor pixel_shuffle(const Tensor& x, size_t r);
/// stack rows: A[t1 x d], B[t2 x d] -> [(t1+t2) x d]; A may have t1 = 0
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Y = X[:, c0:c1]
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);
/// mean over elements of |a - b|; subgradient at 0 is 0
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);
/// as mean_abs_diff but restricted to elements where mask != 0; mask is a
/// plain tensor and does not participate in gradients
Tensor mean_abs_diff_masked(const Tensor& a, const Tensor& b,
                            const Tensor& mask);
Tensor reshape(const Tensor& x, std::vector<size_t> new_shape);
/// bijective element gather: out[i] = x[src_index[i]]. src_index must be a
/// permutation of 0..size-1; backward scatters along the inverse map.
Tensor permute_elements(const Tensor& x,
                        std::shared_ptr<const std::vector<size_t>> src_index,
                        std::vector<size_t> out_shape);

// plain helpers (no tape participation)
size_t shape_numel(const std::vector<size_t>& shape);
std::string shape_to_string(const std::vector<size_t>& shape);
/// value copy at the requested precision; the result is never tape-bound
Tensor convert_dtype(const Tensor& t, DType dt);

}  // namespace mtrans
