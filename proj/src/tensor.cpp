#include "mtrans/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mtrans/rng.hpp"

namespace mtrans {

namespace {

double quantize(double v, DType dt) {
  return dt == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void quantize_all(std::vector<double>& vals, DType dt) {
  if (dt != DType::f32) return;
  for (auto& v : vals) v = static_cast<double>(static_cast<float>(v));
}

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

/// Validates that the inputs agree on tape and dtype; returns the tape the
/// result should be recorded on (nullptr when no input is tape-bound).
Tape* result_tape(std::initializer_list<const Tensor*> ins) {
  Tape* tape = nullptr;
  for (const Tensor* t : ins) {
    if (!t->defined()) fail("operation on undefined tensor");
    if (t->tape() == nullptr) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      fail("operands belong to different tapes");
    }
  }
  DType dt = (*ins.begin())->dtype();
  for (const Tensor* t : ins) {
    if (t->dtype() != dt) fail("operands mix f32 and f64");
  }
  return tape;
}

Tensor make(std::vector<size_t> shape, std::vector<double> vals, DType dt) {
  return Tensor::from_data(std::move(shape), std::move(vals), dt);
}

/// Finishes an op: attaches the result to the tape (if any) and records the
/// pull closure that routes the output gradient to the inputs.
void finish(Tensor& out, Tape* tape, std::vector<int> input_nodes,
            Tape::Pull pull) {
  if (tape == nullptr) return;
  tape->add_result_node(out);
  tape->record(std::move(input_nodes), out.node(), std::move(pull));
}

}  // namespace

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor convert_dtype(const Tensor& t, DType dt) {
  if (!t.defined()) throw std::invalid_argument("convert_dtype: undefined tensor");
  if (t.dtype() == dt && t.tape() == nullptr) return t;
  return Tensor::from_data(t.shape(), t.values(), dt);
}

// ---- Rng::normal (declared in rng.hpp) ---------------------------------

double Rng::normal(double mean, double stddev) {
  // Box-Muller, fresh pair each call
  double u1 = uniform();
  while (u1 == 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

// ---- Tensor -------------------------------------------------------------

size_t Tensor::size() const { return data_ ? data_->size() : 0; }

double Tensor::value() const {
  if (size() != 1) fail("value() needs a single-element tensor, got " + shape_str());
  return (*data_)[0];
}

Tensor Tensor::zeros(std::vector<size_t> shape, DType dt) {
  return full(std::move(shape), 0.0, dt);
}

Tensor Tensor::full(std::vector<size_t> shape, double v, DType dt) {
  std::vector<double> vals(shape_numel(shape), quantize(v, dt));
  return from_data(std::move(shape), std::move(vals), dt);
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> vals,
                         DType dt) {
  if (shape_numel(shape) != vals.size()) {
    fail("data length " + std::to_string(vals.size()) + " does not match shape " +
         shape_to_string(shape));
  }
  quantize_all(vals, dt);
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<double>>(std::move(vals));
  t.dtype_ = dt;
  return t;
}

Tensor Tensor::scalar(double v, DType dt) { return from_data({1}, {v}, dt); }

Tensor Tensor::glorot_uniform(std::vector<size_t> shape, size_t fan_in,
                              size_t fan_out, Rng& rng, DType dt) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = rng.uniform(-a, a);
  return from_data(std::move(shape), std::move(vals), dt);
}

Tensor Tensor::normal(std::vector<size_t> shape, double mean, double stddev,
                      Rng& rng, DType dt) {
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = rng.normal(mean, stddev);
  return from_data(std::move(shape), std::move(vals), dt);
}

Tensor Tensor::with_requires_grad(bool rg) const {
  Tensor t = *this;
  t.requires_grad_ = rg;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.node_ = -1;
  t.tape_ = nullptr;
  t.requires_grad_ = false;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

// ---- ParamStore ---------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) fail("duplicate parameter name: " + name);
  if (!t.defined()) fail("undefined tensor for parameter: " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(t.with_requires_grad(true));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail("unknown parameter: " + name);
  return tensors_[it->second];
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParamStore::set(size_t i, Tensor t) {
  if (i >= tensors_.size()) fail("parameter index out of range");
  if (t.shape() != tensors_[i].shape()) {
    fail("parameter " + names_[i] + " shape mismatch: " +
         shape_to_string(tensors_[i].shape()) + " vs " + t.shape_str());
  }
  tensors_[i] = t.with_requires_grad(true);
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamStore ParamStore::watched(Tape& tape) const {
  ParamStore out;
  for (size_t i = 0; i < tensors_.size(); ++i) {
    out.add(names_[i], tape.watch(tensors_[i], names_[i]));
  }
  return out;
}

// ---- Tape ---------------------------------------------------------------

void Tape::bind_dtype(DType dt) {
  if (!dtype_bound_) {
    dtype_ = dt;
    dtype_bound_ = true;
  } else if (dtype_ != dt) {
    fail("tape already carries a different dtype");
  }
}

Tensor Tape::watch(const Tensor& t, const std::string& name) {
  if (!t.defined()) fail("cannot watch undefined tensor: " + name);
  if (t.tape() == this) fail("tensor already watched on this tape: " + name);
  if (t.tape() != nullptr) fail("tensor is bound to another tape: " + name);
  bind_dtype(t.dtype());
  Tensor w = t.with_requires_grad(true);
  w.node_ = static_cast<int>(node_sizes_.size());
  w.tape_ = this;
  node_sizes_.push_back(t.size());
  grads_.emplace_back();
  params_.emplace_back(name, w.node_);
  param_shapes_.push_back(t.shape());
  return w;
}

int Tape::add_result_node(Tensor& out) {
  bind_dtype(out.dtype());
  out.node_ = static_cast<int>(node_sizes_.size());
  out.tape_ = this;
  out.requires_grad_ = true;
  node_sizes_.push_back(out.size());
  grads_.emplace_back();
  return out.node_;
}

void Tape::record(std::vector<int> inputs, int output, Pull pull) {
  records_.push_back(Record{std::move(inputs), output, std::move(pull)});
}

std::vector<double>& Tape::grad_buf(int node) {
  auto& g = grads_[node];
  if (g.empty()) g.assign(node_sizes_[node], 0.0);
  return g;
}

std::vector<Tensor> Tape::backward(const Tensor& loss) {
  if (loss.tape() != this || loss.node() < 0) {
    fail("loss tensor is not a node of this tape");
  }
  if (loss.size() != 1) {
    fail("backward needs a scalar loss, got " + loss.shape_str());
  }
  for (auto& g : grads_) g.clear();
  grad_buf(loss.node())[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!has_grad(it->output)) continue;  // loss never reached this record
    it->pull(*this, grads_[it->output]);
  }
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const int node = params_[i].second;
    std::vector<double> g = has_grad(node) ? grads_[node]
                                           : std::vector<double>(node_sizes_[node], 0.0);
    out.push_back(Tensor::from_data(param_shapes_[i], std::move(g), dtype_));
  }
  return out;
}

// ---- op kernels ----------------------------------------------------------

namespace {

/// C[m x n] += A[m x k] * B[k x n]; ikj order keeps the inner loop streaming.
void matmul_acc(const double* a, const double* b, double* c, size_t m, size_t k,
                size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x n] += A[k x m]^T * B[k x n]
void matmul_at_acc(const double* a, const double* b, double* c, size_t m,
                   size_t k, size_t n) {
  for (size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x n] += A[m x k] * B[n x k]^T
void matmul_bt_acc(const double* a, const double* b, double* c, size_t m,
                   size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

void require_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) {
    fail(std::string(who) + " needs a rank-2 tensor, got " + t.shape_str());
  }
}

void quantize_buf(std::vector<double>& vals, DType dt) {
  if (dt != DType::f32) return;
  for (auto& v : vals) v = static_cast<double>(static_cast<float>(v));
}

/// Accumulate src into the grad buffer of `node` (skips untaped inputs).
void add_into_grad(Tape& tp, int node, const std::vector<double>& src) {
  if (node < 0) return;
  auto& g = tp.grad_buf(node);
  for (size_t i = 0; i < src.size(); ++i) g[i] += src[i];
  quantize_buf(g, tp.dtype());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    fail("matmul inner dimensions disagree: " + a.shape_str() + " * " + b.shape_str());
  }
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tape* tape = result_tape({&a, &b});
  std::vector<double> vals(m * n, 0.0);
  matmul_acc(a.data(), b.data(), vals.data(), m, k, n);
  Tensor out = make({m, n}, std::move(vals), a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, out, m, k, n](Tape& tp, const std::vector<double>& dout) {
        if (a.node() >= 0) {
      std::vector<double> da(m * k, 0.0);
      matmul_bt_acc(dout.data(), b.data(), da.data(), m, n, k);
      add_into_grad(tp, a.node(), da);
    }
    if (b.node() >= 0) {
      std::vector<double> db(k * n, 0.0);
      matmul_at_acc(a.data(), dout.data(), db.data(), k, m, n);
      add_into_grad(tp, b.node(), db);
    }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const size_t r = x.dim(0), c = x.dim(1);
  Tape* tape = result_tape({&x});
  std::vector<double> vals(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) vals[j * r + i] = x.at(i * c + j);
  Tensor out = make({c, r}, std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out, r, c](Tape& tp, const std::vector<double>& dout) {
        std::vector<double> dx(r * c);
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) dx[i * c + j] = dout[j * r + i];
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(x, "linear input");
  require_rank2(w, "linear weight");
  if (b.rank() != 1) fail("linear bias needs rank 1, got " + b.shape_str());
  if (x.dim(1) != w.dim(0)) {
    fail("linear input/weight disagree: " + x.shape_str() + " * " + w.shape_str());
  }
  if (b.dim(0) != w.dim(1)) {
    fail("linear bias length " + b.shape_str() + " vs weight " + w.shape_str());
  }
  const size_t t = x.dim(0), din = x.dim(1), dout_n = w.dim(1);
  Tape* tape = result_tape({&x, &w, &b});
  std::vector<double> vals(t * dout_n, 0.0);
  matmul_acc(x.data(), w.data(), vals.data(), t, din, dout_n);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < dout_n; ++j) vals[i * dout_n + j] += b.at(j);
  Tensor out = make({t, dout_n}, std::move(vals), x.dtype());
  finish(out, tape, {x.node(), w.node(), b.node()},
         [x, w, b, out, t, din, dout_n](Tape& tp, const std::vector<double>& dout) {
           const auto& dy = dout;
           if (x.node() >= 0) {
             std::vector<double> dx(t * din, 0.0);
             matmul_bt_acc(dy.data(), w.data(), dx.data(), t, dout_n, din);
             add_into_grad(tp, x.node(), dx);
           }
           if (w.node() >= 0) {
             std::vector<double> dw(din * dout_n, 0.0);
             matmul_at_acc(x.data(), dy.data(), dw.data(), din, t, dout_n);
             add_into_grad(tp, w.node(), dw);
           }
           if (b.node() >= 0) {
             std::vector<double> db(dout_n, 0.0);
             for (size_t i = 0; i < t; ++i)
               for (size_t j = 0; j < dout_n; ++j) db[j] += dy[i * dout_n + j];
             add_into_grad(tp, b.node(), db);
           }
         });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const size_t r = x.dim(0), c = x.dim(1);
  if (c == 0) fail("softmax_rows with zero columns");
  Tape* tape = result_tape({&x});
  std::vector<double> vals(r * c);
  for (size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      vals[i * c + j] = e;
      denom += e;
    }
    for (size_t j = 0; j < c; ++j) vals[i * c + j] /= denom;
  }
  Tensor out = make({r, c}, std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out, r, c](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    std::vector<double> dx(r * c);
    for (size_t i = 0; i < r; ++i) {
      const double* yrow = out.data() + i * c;
      const double* grow = dy.data() + i * c;
      double dot = 0.0;
      for (size_t j = 0; j < c; ++j) dot += yrow[j] * grow[j];
      for (size_t j = 0; j < c; ++j) dx[i * c + j] = yrow[j] * (grow[j] - dot);
    }
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank2(x, "layer_norm");
  if (gain.rank() != 1 || bias.rank() != 1) {
    fail("layer_norm gain/bias need rank 1, got " + gain.shape_str() + " and " +
         bias.shape_str());
  }
  const size_t t = x.dim(0), d = x.dim(1);
  if (gain.dim(0) != d || bias.dim(0) != d) {
    fail("layer_norm gain/bias length must match feature dim " + std::to_string(d));
  }
  if (eps <= 0.0) fail("layer_norm eps must be positive");
  Tape* tape = result_tape({&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(t * d);
  auto inv_std = std::make_shared<std::vector<double>>(t);
  std::vector<double> vals(t * d);
  for (size_t i = 0; i < t; ++i) {
    const double* row = x.data() + i * d;
    double mean = 0.0;
    for (size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double dv = row[j] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[i * d + j] = h;
      vals[i * d + j] = gain.at(j) * h + bias.at(j);
    }
  }
  Tensor out = make({t, d}, std::move(vals), x.dtype());
  finish(out, tape, {x.node(), gain.node(), bias.node()},
         [x, gain, bias, out, xhat, inv_std, t, d](Tape& tp, const std::vector<double>& dout) {
           const auto& dy = dout;
           if (gain.node() >= 0) {
             std::vector<double> dg(d, 0.0);
             for (size_t i = 0; i < t; ++i)
               for (size_t j = 0; j < d; ++j)
                 dg[j] += dy[i * d + j] * (*xhat)[i * d + j];
             add_into_grad(tp, gain.node(), dg);
           }
           if (bias.node() >= 0) {
             std::vector<double> db(d, 0.0);
             for (size_t i = 0; i < t; ++i)
               for (size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
             add_into_grad(tp, bias.node(), db);
           }
           if (x.node() >= 0) {
             std::vector<double> dx(t * d);
             for (size_t i = 0; i < t; ++i) {
               double m1 = 0.0, m2 = 0.0;  // means of g*dy and g*dy*xhat
               for (size_t j = 0; j < d; ++j) {
                 const double gd = gain.at(j) * dy[i * d + j];
                 m1 += gd;
                 m2 += gd * (*xhat)[i * d + j];
               }
               m1 /= static_cast<double>(d);
               m2 /= static_cast<double>(d);
               for (size_t j = 0; j < d; ++j) {
                 const double gd = gain.at(j) * dy[i * d + j];
                 dx[i * d + j] =
                     (*inv_std)[i] * (gd - m1 - (*xhat)[i * d + j] * m2);
               }
             }
             add_into_grad(tp, x.node(), dx);
           }
         });
  return out;
}

Tensor relu(const Tensor& x) {
  Tape* tape = result_tape({&x});
  std::vector<double> vals(x.size());
  for (size_t i = 0; i < x.size(); ++i) vals[i] = std::max(0.0, x.at(i));
  Tensor out = make(x.shape(), std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    std::vector<double> dx(x.size());
    for (size_t i = 0; i < x.size(); ++i) dx[i] = x.at(i) > 0.0 ? dy[i] : 0.0;
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.rank() != 3) fail("conv2d input needs rank 3, got " + input.shape_str());
  if (kernels.rank() != 4) {
    fail("conv2d kernels need rank 4, got " + kernels.shape_str());
  }
  if (bias.rank() != 1) fail("conv2d bias needs rank 1, got " + bias.shape_str());
  const size_t cin = input.dim(0), H = input.dim(1), W = input.dim(2);
  const size_t cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != cin) {
    fail("conv2d kernel channels " + kernels.shape_str() + " vs input " +
         input.shape_str());
  }
  if (kernels.dim(3) != k) fail("conv2d kernels must be square, got " + kernels.shape_str());
  if (k % 2 == 0) fail("conv2d needs an odd kernel size, got " + std::to_string(k));
  if (bias.dim(0) != cout) {
    fail("conv2d bias length " + bias.shape_str() + " vs kernels " + kernels.shape_str());
  }
  const size_t pad = (k - 1) / 2;
  Tape* tape = result_tape({&input, &kernels, &bias});
  std::vector<double> vals(cout * H * W);
  for (size_t oc = 0; oc < cout; ++oc) {
    for (size_t y = 0; y < H; ++y) {
      for (size_t x = 0; x < W; ++x) {
        double acc = bias.at(oc);
        for (size_t ic = 0; ic < cin; ++ic) {
          for (size_t dy = 0; dy < k; ++dy) {
            const size_t sy = y + dy;
            if (sy < pad || sy >= H + pad) continue;
            for (size_t dx = 0; dx < k; ++dx) {
              const size_t sx = x + dx;
              if (sx < pad || sx >= W + pad) continue;
              acc += input.at((ic * H + sy - pad) * W + sx - pad) *
                     kernels.at(((oc * cin + ic) * k + dy) * k + dx);
            }
          }
        }
        vals[(oc * H + y) * W + x] = acc;
      }
    }
  }
  Tensor out = make({cout, H, W}, std::move(vals), input.dtype());
  finish(out, tape, {input.node(), kernels.node(), bias.node()},
         [input, kernels, bias, out, cin, cout, H, W, k, pad](Tape& tp, const std::vector<double>& dout) {
           const auto& dy = dout;
           if (bias.node() >= 0) {
             std::vector<double> db(cout, 0.0);
             for (size_t oc = 0; oc < cout; ++oc)
               for (size_t i = 0; i < H * W; ++i) db[oc] += dy[oc * H * W + i];
             add_into_grad(tp, bias.node(), db);
           }
           if (kernels.node() >= 0) {
             std::vector<double> dk(cout * cin * k * k, 0.0);
             for (size_t oc = 0; oc < cout; ++oc)
               for (size_t y = 0; y < H; ++y)
                 for (size_t x = 0; x < W; ++x) {
                   const double g = dy[(oc * H + y) * W + x];
                   if (g == 0.0) continue;
                   for (size_t ic = 0; ic < cin; ++ic)
                     for (size_t ddy = 0; ddy < k; ++ddy) {
                       const size_t sy = y + ddy;
                       if (sy < pad || sy >= H + pad) continue;
                       for (size_t ddx = 0; ddx < k; ++ddx) {
                         const size_t sx = x + ddx;
                         if (sx < pad || sx >= W + pad) continue;
                         dk[((oc * cin + ic) * k + ddy) * k + ddx] +=
                             g * input.at((ic * H + sy - pad) * W + sx - pad);
                       }
                     }
                 }
             add_into_grad(tp, kernels.node(), dk);
           }
           if (input.node() >= 0) {
             std::vector<double> dx(cin * H * W, 0.0);
             for (size_t oc = 0; oc < cout; ++oc)
               for (size_t y = 0; y < H; ++y)
                 for (size_t x = 0; x < W; ++x) {
                   const double g = dy[(oc * H + y) * W + x];
                   if (g == 0.0) continue;
                   for (size_t ic = 0; ic < cin; ++ic)
                     for (size_t ddy = 0; ddy < k; ++ddy) {
                       const size_t sy = y + ddy;
                       if (sy < pad || sy >= H + pad) continue;
                       for (size_t ddx = 0; ddx < k; ++ddx) {
                         const size_t sx = x + ddx;
                         if (sx < pad || sx >= W + pad) continue;
                         dx[(ic * H + sy - pad) * W + sx - pad] +=
                             g * kernels.at(((oc * cin + ic) * k + ddy) * k + ddx);
                       }
                     }
                 }
             add_into_grad(tp, input.node(), dx);
           }
         });
  return out;
}

Tensor pixel_shuffle(const Tensor& x, size_t r) {
  if (x.rank() != 3) fail("pixel_shuffle input needs rank 3, got " + x.shape_str());
  if (r == 0) fail("pixel_shuffle factor must be positive");
  const size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (C % (r * r) != 0) {
    fail("pixel_shuffle channels " + std::to_string(C) +
         " not divisible by r^2 = " + std::to_string(r * r));
  }
  const size_t c = C / (r * r);
  auto src = std::make_shared<std::vector<size_t>>(C * H * W);
  // out[ch][y*r+dy][x*r+dx] = in[ch*r*r + dy*r + dx][y][x]
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < H; ++y)
      for (size_t dy = 0; dy < r; ++dy)
        for (size_t x = 0; x < W; ++x)
          for (size_t dx = 0; dx < r; ++dx) {
            const size_t oy = y * r + dy, ox = x * r + dx;
            (*src)[(ch * H * r + oy) * W * r + ox] =
                ((ch * r * r + dy * r + dx) * H + y) * W + x;
          }
  return permute_elements(x, src, {c, H * r, W * r});
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_rows lhs");
  require_rank2(b, "concat_rows rhs");
  if (a.dim(1) != b.dim(1)) {
    fail("concat_rows column mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  const size_t t1 = a.dim(0), t2 = b.dim(0), d = a.dim(1);
  Tape* tape = result_tape({&a, &b});
  std::vector<double> vals;
  vals.reserve((t1 + t2) * d);
  vals.insert(vals.end(), a.data(), a.data() + t1 * d);
  vals.insert(vals.end(), b.data(), b.data() + t2 * d);
  Tensor out = make({t1 + t2, d}, std::move(vals), a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, out, t1, t2, d](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    if (a.node() >= 0) {
      std::vector<double> da(dy.begin(), dy.begin() + static_cast<long>(t1 * d));
      add_into_grad(tp, a.node(), da);
    }
    if (b.node() >= 0) {
      std::vector<double> db(dy.begin() + static_cast<long>(t1 * d), dy.end());
      add_into_grad(tp, b.node(), db);
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
  require_rank2(x, "slice_cols");
  const size_t t = x.dim(0), d = x.dim(1);
  if (c0 >= c1 || c1 > d) {
    fail("slice_cols range [" + std::to_string(c0) + ", " + std::to_string(c1) +
         ") invalid for " + x.shape_str());
  }
  const size_t w = c1 - c0;
  Tape* tape = result_tape({&x});
  std::vector<double> vals(t * w);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < w; ++j) vals[i * w + j] = x.at(i * d + c0 + j);
  Tensor out = make({t, w}, std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out, t, d, c0, w](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    std::vector<double> dx(t * d, 0.0);
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < w; ++j) dx[i * d + c0 + j] = dy[i * w + j];
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols of zero tensors");
  const size_t t = parts[0].dim(0);
  size_t d = 0;
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols part");
    if (p.dim(0) != t) {
      fail("concat_cols row mismatch: " + parts[0].shape_str() + " vs " + p.shape_str());
    }
    d += p.dim(1);
    ptrs.push_back(&p);
  }
  Tape* tape = nullptr;
  {
    // variadic form of result_tape
    for (const Tensor* p : ptrs) {
      if (p->tape() == nullptr) continue;
      if (tape == nullptr) tape = p->tape();
      else if (tape != p->tape()) fail("operands belong to different tapes");
    }
    for (const Tensor* p : ptrs)
      if (p->dtype() != parts[0].dtype()) fail("operands mix f32 and f64");
  }
  std::vector<double> vals(t * d);
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t w = p.dim(1);
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < w; ++j) vals[i * d + off + j] = p.at(i * w + j);
    off += w;
  }
  Tensor out = make({t, d}, std::move(vals), parts[0].dtype());
  std::vector<int> in_nodes;
  for (const auto& p : parts) in_nodes.push_back(p.node());
  std::vector<Tensor> held = parts;
  finish(out, tape, in_nodes, [held, out, t, d](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    size_t off = 0;
    for (const auto& p : held) {
      const size_t w = p.dim(1);
      if (p.node() >= 0) {
        std::vector<double> dp(t * w);
        for (size_t i = 0; i < t; ++i)
          for (size_t j = 0; j < w; ++j) dp[i * w + j] = dy[i * d + off + j];
        add_into_grad(tp, p.node(), dp);
      }
      off += w;
    }
  });
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    fail(std::string(who) + " shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tape* tape = result_tape({&a, &b});
  std::vector<double> vals(a.size());
  for (size_t i = 0; i < a.size(); ++i) vals[i] = a.at(i) + b.at(i);
  Tensor out = make(a.shape(), std::move(vals), a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, out](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    add_into_grad(tp, a.node(), dy);
    add_into_grad(tp, b.node(), dy);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tape* tape = result_tape({&a, &b});
  std::vector<double> vals(a.size());
  for (size_t i = 0; i < a.size(); ++i) vals[i] = a.at(i) - b.at(i);
  Tensor out = make(a.shape(), std::move(vals), a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, out](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    add_into_grad(tp, a.node(), dy);
    if (b.node() >= 0) {
      std::vector<double> db(dy.size());
      for (size_t i = 0; i < dy.size(); ++i) db[i] = -dy[i];
      add_into_grad(tp, b.node(), db);
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tape* tape = result_tape({&x});
  std::vector<double> vals(x.size());
  for (size_t i = 0; i < x.size(); ++i) vals[i] = c * x.at(i);
  Tensor out = make(x.shape(), std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out, c](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    std::vector<double> dx(dy.size());
    for (size_t i = 0; i < dy.size(); ++i) dx[i] = c * dy[i];
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tape* tape = result_tape({&x});
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) acc += x.at(i);
  Tensor out = make({1}, {acc}, x.dtype());
  finish(out, tape, {x.node()}, [x, out](Tape& tp, const std::vector<double>& dout) {
    const double g = dout[0];
    std::vector<double> dx(x.size(), g);
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor sum_squares(const Tensor& x) {
  Tape* tape = result_tape({&x});
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) acc += x.at(i) * x.at(i);
  Tensor out = make({1}, {acc}, x.dtype());
  finish(out, tape, {x.node()}, [x, out](Tape& tp, const std::vector<double>& dout) {
    const double g = dout[0];
    std::vector<double> dx(x.size());
    for (size_t i = 0; i < x.size(); ++i) dx[i] = 2.0 * g * x.at(i);
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.size() == 0) fail("mean_abs_diff of empty tensors");
  Tape* tape = result_tape({&a, &b});
  const double n = static_cast<double>(a.size());
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a.at(i) - b.at(i));
  Tensor out = make({1}, {acc / n}, a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, out, n](Tape& tp, const std::vector<double>& dout) {
    const double g = dout[0] / n;
    std::vector<double> sgn(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
      const double d = a.at(i) - b.at(i);
      sgn[i] = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
    }
    add_into_grad(tp, a.node(), sgn);
    if (b.node() >= 0) {
      for (auto& v : sgn) v = -v;
      add_into_grad(tp, b.node(), sgn);
    }
  });
  return out;
}

Tensor mean_abs_diff_masked(const Tensor& a, const Tensor& b,
                            const Tensor& mask) {
  require_same_shape(a, b, "mean_abs_diff_masked");
  require_same_shape(a, mask, "mean_abs_diff_masked mask");
  if (mask.tape() != nullptr) fail("mask must not be tape-bound");
  Tape* tape = result_tape({&a, &b});
  double count = 0.0, acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (mask.at(i) == 0.0) continue;
    count += 1.0;
    acc += std::abs(a.at(i) - b.at(i));
  }
  if (count == 0.0) fail("mean_abs_diff_masked with all-zero mask");
  Tensor out = make({1}, {acc / count}, a.dtype());
  finish(out, tape, {a.node(), b.node()}, [a, b, mask, out, count](Tape& tp, const std::vector<double>& dout) {
    const double g = dout[0] / count;
    std::vector<double> sgn(a.size(), 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
      if (mask.at(i) == 0.0) continue;
      const double d = a.at(i) - b.at(i);
      sgn[i] = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
    }
    add_into_grad(tp, a.node(), sgn);
    if (b.node() >= 0) {
      for (auto& v : sgn) v = -v;
      add_into_grad(tp, b.node(), sgn);
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<size_t> new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    fail("reshape " + x.shape_str() + " -> " + shape_to_string(new_shape) +
         " changes element count");
  }
  Tape* tape = result_tape({&x});
  std::vector<double> vals(x.data(), x.data() + x.size());
  Tensor out = make(std::move(new_shape), std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out](Tape& tp, const std::vector<double>& dout) {
    add_into_grad(tp, x.node(), dout);
  });
  return out;
}

Tensor permute_elements(const Tensor& x,
                        std::shared_ptr<const std::vector<size_t>> src_index,
                        std::vector<size_t> out_shape) {
  if (src_index->size() != x.size() || shape_numel(out_shape) != x.size()) {
    fail("permute_elements index/shape size mismatch for " + x.shape_str());
  }
  Tape* tape = result_tape({&x});
  std::vector<double> vals(x.size());
  for (size_t i = 0; i < x.size(); ++i) vals[i] = x.at((*src_index)[i]);
  Tensor out = make(std::move(out_shape), std::move(vals), x.dtype());
  finish(out, tape, {x.node()}, [x, out, src_index](Tape& tp, const std::vector<double>& dout) {
    const auto& dy = dout;
    std::vector<double> dx(x.size(), 0.0);
    for (size_t i = 0; i < dy.size(); ++i) dx[(*src_index)[i]] += dy[i];
    add_into_grad(tp, x.node(), dx);
  });
  return out;
}

}  // namespace mtrans
