#include "dcat/autodiff.hpp"

#include <cmath>
#include <limits>

#include "dcat/errors.hpp"

namespace dcat::ad {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::create(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw UsageError("duplicate parameter name: " + name);
  if (!init.all_finite()) throw NumericError("non-finite init for parameter " + name);
  Entry e;
  e.name = name;
  e.grad = Tensor::zeros_like(init);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  const int idx = static_cast<int>(entries_.size()) - 1;
  by_name_[name] = idx;
  return idx;
}

bool ParamStore::has(const std::string& name) const { return by_name_.count(name) > 0; }

int ParamStore::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) {
    for (auto& g : e.grad.raw()) g = 0.0;
  }
}

double ParamStore::global_grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    for (double g : e.grad.raw()) s += g * g;
  }
  return std::sqrt(s);
}

void ParamStore::scale_grads(double s) {
  for (auto& e : entries_) {
    for (auto& g : e.grad.raw()) g *= s;
  }
}

int64_t ParamStore::total_entries() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kParam: return "param";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kClamp: return "clamp";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kTanh: return "tanh";
    case Op::kGelu: return "gelu";
    case Op::kExp: return "exp";
    case Op::kMinEw: return "min";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kMaxOverRows: return "max_over_rows";
    case Op::kMeanOverRows: return "mean_over_rows";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kReshape: return "reshape";
    case Op::kConv1dCausal: return "conv1d_causal";
  }
  return "?";
}

int Tape::push(Node n) {
  check_finite(n.value, n.op);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Tape::val(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    throw UsageError("invalid tape variable");
  }
  return nodes_[v.id].value;
}

void Tape::check_finite(const Tensor& t, Op op) const {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite output of op ") + op_name(op));
  }
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) throw UsageError("gradient not computed for this variable");
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return {push(std::move(n))};
}

Var Tape::leaf(double scalar) { return leaf(Tensor::scalar(scalar)); }

Var Tape::param(ParamStore& store, const std::string& name) {
  Node n;
  n.op = Op::kParam;
  n.param_idx = store.index(name);
  n.store = &store;
  n.value = store.value(n.param_idx);
  return {push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) {
    throw UsageError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a.id, b.id};
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += tb[i];
  return {push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) {
    throw UsageError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Node n;
  n.op = Op::kSub;
  n.inputs = {a.id, b.id};
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= tb[i];
  return {push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) {
    throw UsageError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Node n;
  n.op = Op::kMul;
  n.inputs = {a.id, b.id};
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= tb[i];
  return {push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::kScale;
  n.inputs = {a.id};
  n.a0 = s;
  n.value = val(a);
  for (auto& v : n.value.raw()) v *= s;
  return {push(std::move(n))};
}

Var Tape::add_scalar(Var a, double c) {
  Node n;
  n.op = Op::kAddScalar;
  n.inputs = {a.id};
  n.a0 = c;
  n.value = val(a);
  for (auto& v : n.value.raw()) v += c;
  return {push(std::move(n))};
}

Var Tape::clamp(Var a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.inputs = {a.id};
  n.a0 = lo;
  n.a1 = hi;
  n.value = val(a);
  for (auto& v : n.value.raw()) v = std::min(std::max(v, lo), hi);
  return {push(std::move(n))};
}

Var Tape::add_rowvec(Var a, Var bias) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(bias);
  if (tb.numel() != ta.cols()) {
    throw UsageError("add_rowvec: bias length " + tb.shape_str() +
                     " does not match columns of " + ta.shape_str());
  }
  Node n;
  n.op = Op::kAddRowVec;
  n.inputs = {a.id, bias.id};
  n.value = ta;
  const int rows = ta.rows(), cols = ta.cols();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) n.value.at(r, c) += tb[c];
  }
  return {push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0]) {
    throw UsageError("matmul: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
  }
  const int m = ta.shape()[0], k = ta.shape()[1], p = tb.shape()[1];
  Node n;
  n.op = Op::kMatmul;
  n.inputs = {a.id, b.id};
  n.value = Tensor({m, p});
  const double* A = ta.data();
  const double* B = tb.data();
  double* C = n.value.data();
  for (int i = 0; i < m; ++i) {
    double* crow = C + static_cast<size_t>(i) * p;
    const double* arow = A + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = B + static_cast<size_t>(kk) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return {push(std::move(n))};
}

Var Tape::transpose(Var a) {
  const Tensor& ta = val(a);
  if (ta.rank() != 2) throw UsageError("transpose: rank-2 tensor required");
  const int r = ta.shape()[0], c = ta.shape()[1];
  Node n;
  n.op = Op::kTranspose;
  n.inputs = {a.id};
  n.value = Tensor({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) n.value.at(j, i) = ta.at(i, j);
  }
  return {push(std::move(n))};
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::kTanh;
  n.inputs = {a.id};
  n.value = val(a);
  for (auto& v : n.value.raw()) v = std::tanh(v);
  return {push(std::move(n))};
}

Var Tape::gelu(Var a) {
  Node n;
  n.op = Op::kGelu;
  n.inputs = {a.id};
  n.value = val(a);
  for (auto& v : n.value.raw()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return {push(std::move(n))};
}

Var Tape::exp(Var a) {
  Node n;
  n.op = Op::kExp;
  n.inputs = {a.id};
  n.value = val(a);
  for (auto& v : n.value.raw()) v = std::exp(v);
  return {push(std::move(n))};
}

Var Tape::min(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw UsageError("min: shape mismatch");
  Node n;
  n.op = Op::kMinEw;
  n.inputs = {a.id, b.id};
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::min(ta[i], tb[i]);
  return {push(std::move(n))};
}

Var Tape::softmax_rows(Var logits, const Tensor* mask) {
  const Tensor& tl = val(logits);
  const int rows = tl.rows(), cols = tl.cols();
  if (mask && (mask->rows() != rows || mask->cols() != cols)) {
    throw UsageError("softmax_rows: mask shape mismatch");
  }
  Node n;
  n.op = Op::kSoftmaxRows;
  n.inputs = {logits.id};
  n.value = Tensor(tl.shape());
  for (int r = 0; r < rows; ++r) {
    double m = -kInf;
    for (int c = 0; c < cols; ++c) {
      const double l = tl.at(r, c) + (mask ? mask->at(r, c) : 0.0);
      m = std::max(m, l);
    }
    if (!std::isfinite(m)) {
      throw NumericError("softmax_rows: fully masked row " + std::to_string(r));
    }
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double l = tl.at(r, c) + (mask ? mask->at(r, c) : 0.0);
      const double e = std::exp(l - m);  // exp(-inf) == 0 exactly
      n.value.at(r, c) = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (int c = 0; c < cols; ++c) n.value.at(r, c) *= inv;
  }
  return {push(std::move(n))};
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  const int rows = tx.rows(), cols = tx.cols();
  if (cols < 1) throw UsageError("layer_norm: empty last axis");
  if (tg.numel() != cols || tb.numel() != cols) {
    throw UsageError("layer_norm: gain/bias length must equal last axis");
  }
  Node n;
  n.op = Op::kLayerNorm;
  n.inputs = {x.id, gain.id, bias.id};
  n.a0 = eps;
  n.value = Tensor(tx.shape());
  n.aux0 = Tensor({rows, cols});  // normalized x-hat
  n.aux1 = Tensor({rows});        // 1/std per row
  for (int r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += tx.at(r, c);
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = tx.at(r, c) - mu;
      var += d * d;
    }
    var /= cols;
    const double rstd = 1.0 / std::sqrt(var + eps);
    n.aux1[r] = rstd;
    for (int c = 0; c < cols; ++c) {
      const double xh = (tx.at(r, c) - mu) * rstd;
      n.aux0.at(r, c) = xh;
      n.value.at(r, c) = tg[c] * xh + tb[c];
    }
  }
  return {push(std::move(n))};
}

Var Tape::slice_cols(Var a, int start, int len) {
  const Tensor& ta = val(a);
  const int rows = ta.rows(), cols = ta.cols();
  if (start < 0 || len <= 0 || start + len > cols) throw UsageError("slice_cols: out of range");
  Node n;
  n.op = Op::kSliceCols;
  n.inputs = {a.id};
  n.i0 = start;
  n.value = Tensor({rows, len});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < len; ++c) n.value.at(r, c) = ta.at(r, start + c);
  }
  return {push(std::move(n))};
}

Var Tape::slice_rows(Var a, int start, int len) {
  const Tensor& ta = val(a);
  const int rows = ta.rows(), cols = ta.cols();
  if (start < 0 || len <= 0 || start + len > rows) throw UsageError("slice_rows: out of range");
  Node n;
  n.op = Op::kSliceRows;
  n.inputs = {a.id};
  n.i0 = start;
  n.value = Tensor({len, cols});
  for (int r = 0; r < len; ++r) {
    for (int c = 0; c < cols; ++c) n.value.at(r, c) = ta.at(start + r, c);
  }
  return {push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const int rows = val(parts[0]).rows();
  int cols = 0;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw UsageError("concat_cols: row mismatch");
    cols += val(p).cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.value = Tensor({rows, cols});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = val(p);
    n.inputs.push_back(p.id);
    n.split.push_back(t.cols());
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < t.cols(); ++c) n.value.at(r, off + c) = t.at(r, c);
    }
    off += t.cols();
  }
  return {push(std::move(n))};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const int cols = val(parts[0]).cols();
  int rows = 0;
  for (Var p : parts) {
    if (val(p).cols() != cols) throw UsageError("concat_rows: column mismatch");
    rows += val(p).rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  n.value = Tensor({rows, cols});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = val(p);
    n.inputs.push_back(p.id);
    n.split.push_back(t.rows());
    for (int r = 0; r < t.rows(); ++r) {
      for (int c = 0; c < cols; ++c) n.value.at(off + r, c) = t.at(r, c);
    }
    off += t.rows();
  }
  return {push(std::move(n))};
}

Var Tape::max_over_rows(Var a) {
  const Tensor& ta = val(a);
  const int rows = ta.rows(), cols = ta.cols();
  Node n;
  n.op = Op::kMaxOverRows;
  n.inputs = {a.id};
  n.value = Tensor({1, cols});
  n.split.assign(cols, 0);  // argmax row per column, first-wins on ties
  for (int c = 0; c < cols; ++c) {
    double best = ta.at(0, c);
    int arg = 0;
    for (int r = 1; r < rows; ++r) {
      if (ta.at(r, c) > best) {
        best = ta.at(r, c);
        arg = r;
      }
    }
    n.value.at(0, c) = best;
    n.split[c] = arg;
  }
  return {push(std::move(n))};
}

Var Tape::mean_over_rows(Var a) {
  const Tensor& ta = val(a);
  const int rows = ta.rows(), cols = ta.cols();
  Node n;
  n.op = Op::kMeanOverRows;
  n.inputs = {a.id};
  n.value = Tensor({1, cols});
  for (int c = 0; c < cols; ++c) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) s += ta.at(r, c);
    n.value.at(0, c) = s / rows;
  }
  return {push(std::move(n))};
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::kSum;
  n.inputs = {a.id};
  double s = 0.0;
  for (double v : val(a).raw()) s += v;
  n.value = Tensor::scalar(s);
  return {push(std::move(n))};
}

Var Tape::mean(Var a) {
  Node n;
  n.op = Op::kMean;
  n.inputs = {a.id};
  double s = 0.0;
  for (double v : val(a).raw()) s += v;
  n.value = Tensor::scalar(s / val(a).numel());
  return {push(std::move(n))};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  Node n;
  n.op = Op::kReshape;
  n.inputs = {a.id};
  n.value = val(a).reshaped(std::move(shape));
  return {push(std::move(n))};
}

Var Tape::conv1d_causal(Var x, Var w, Var b) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  if (tx.rank() != 2 || tw.rank() != 3) throw UsageError("conv1d_causal: x rank-2, w rank-3 required");
  const int T = tx.shape()[0], cin = tx.shape()[1];
  const int K = tw.shape()[0], wcin = tw.shape()[1], cout = tw.shape()[2];
  if (wcin != cin || tb.numel() != cout) throw UsageError("conv1d_causal: channel mismatch");
  Node n;
  n.op = Op::kConv1dCausal;
  n.inputs = {x.id, w.id, b.id};
  n.i0 = K;
  n.value = Tensor({T, cout});
  for (int t = 0; t < T; ++t) {
    for (int o = 0; o < cout; ++o) n.value.at(t, o) = tb[o];
    for (int k = 0; k < K; ++k) {
      const int s = t - (K - 1) + k;  // zero padding on the left
      if (s < 0) continue;
      for (int ci = 0; ci < cin; ++ci) {
        const double xv = tx.at(s, ci);
        const double* wrow = tw.data() + (static_cast<size_t>(k) * cin + ci) * cout;
        double* orow = n.value.data() + static_cast<size_t>(t) * cout;
        for (int o = 0; o < cout; ++o) orow[o] += xv * wrow[o];
      }
    }
  }
  return {push(std::move(n))};
}

void Tape::set_backward_fault(Op op, double factor) {
  has_fault_ = true;
  fault_op_ = op;
  fault_factor_ = factor;
}

void Tape::backward(Var loss) {
  if (!loss.valid()) throw UsageError("backward: invalid loss variable");
  Node& ln = nodes_[loss.id];
  if (ln.value.numel() != 1) throw UsageError("backward: loss must be scalar");
  if (!ln.value.all_finite()) throw NumericError("backward: non-finite loss");
  grad_buf(loss.id)[0] += 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (has_fault_ && n.op == fault_op_) {
      for (auto& g : n.grad.raw()) g *= fault_factor_;
    }
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kParam: {
        Tensor& pg = n.store->grad(n.param_idx);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        break;
      }
      case Op::kAdd: {
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.a0;
        break;
      }
      case Op::kAddScalar: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        break;
      }
      case Op::kClamp: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          if (a[i] >= n.a0 && a[i] <= n.a1) ga[i] += g[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        const int rows = n.value.rows(), cols = n.value.cols();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) {
            ga.at(r, c) += g.at(r, c);
            gb[c] += g.at(r, c);
          }
        }
        break;
      }
      case Op::kMatmul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        const int m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
        // dA = dC * B^T
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* grow = g.data() + static_cast<size_t>(i) * p;
            const double* brow = b.data() + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) s += grow[j] * brow[j];
            ga.at(i, kk) += s;
          }
        }
        // dB = A^T * dC
        for (int kk = 0; kk < k; ++kk) {
          double* gbrow = gb.data() + static_cast<size_t>(kk) * p;
          for (int i = 0; i < m; ++i) {
            const double av = a.at(i, kk);
            const double* grow = g.data() + static_cast<size_t>(i) * p;
            for (int j = 0; j < p; ++j) gbrow[j] += av * grow[j];
          }
        }
        break;
      }
      case Op::kTranspose: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int r = n.value.shape()[0], c = n.value.shape()[1];
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) ga.at(j, i) += g.at(i, j);
        }
        break;
      }
      case Op::kTanh: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          const double y = n.value[i];
          ga[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kGelu: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          const double x = a[i];
          const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          ga[i] += g[i] * (cdf + x * pdf);
        }
        break;
      }
      case Op::kExp: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.value[i];
        break;
      }
      case Op::kMinEw: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_buf(n.inputs[0]);
        Tensor& gb = grad_buf(n.inputs[1]);
        for (int64_t i = 0; i < g.numel(); ++i) {
          if (a[i] <= b[i]) {
            ga[i] += g[i];
          } else {
            gb[i] += g[i];
          }
        }
        break;
      }
      case Op::kSoftmaxRows: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int rows = n.value.rows(), cols = n.value.cols();
        for (int r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += g.at(r, c) * n.value.at(r, c);
          for (int c = 0; c < cols; ++c) {
            ga.at(r, c) += n.value.at(r, c) * (g.at(r, c) - dot);
          }
        }
        break;
      }
      case Op::kLayerNorm: {
        const Tensor& tg = nodes_[n.inputs[1]].value;
        Tensor& gx = grad_buf(n.inputs[0]);
        Tensor& gg = grad_buf(n.inputs[1]);
        Tensor& gb = grad_buf(n.inputs[2]);
        const int rows = n.value.rows(), cols = n.value.cols();
        for (int r = 0; r < rows; ++r) {
          const double rstd = n.aux1[r];
          double s1 = 0.0, s2 = 0.0;
          for (int c = 0; c < cols; ++c) {
            const double dy = g.at(r, c);
            const double xh = n.aux0.at(r, c);
            gg[c] += dy * xh;
            gb[c] += dy;
            const double dxh = dy * tg[c];
            s1 += dxh;
            s2 += dxh * xh;
          }
          for (int c = 0; c < cols; ++c) {
            const double dxh = g.at(r, c) * tg[c];
            const double xh = n.aux0.at(r, c);
            gx.at(r, c) += rstd * (dxh - (s1 + xh * s2) / cols);
          }
        }
        break;
      }
      case Op::kSliceCols: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int rows = n.value.rows(), len = n.value.cols();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < len; ++c) ga.at(r, n.i0 + c) += g.at(r, c);
        }
        break;
      }
      case Op::kSliceRows: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int len = n.value.rows(), cols = n.value.cols();
        for (int r = 0; r < len; ++r) {
          for (int c = 0; c < cols; ++c) ga.at(n.i0 + r, c) += g.at(r, c);
        }
        break;
      }
      case Op::kConcatCols: {
        const int rows = n.value.rows();
        int off = 0;
        for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
          Tensor& gp = grad_buf(n.inputs[pi]);
          const int w = n.split[pi];
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < w; ++c) gp.at(r, c) += g.at(r, off + c);
          }
          off += w;
        }
        break;
      }
      case Op::kConcatRows: {
        const int cols = n.value.cols();
        int off = 0;
        for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
          Tensor& gp = grad_buf(n.inputs[pi]);
          const int h = n.split[pi];
          for (int r = 0; r < h; ++r) {
            for (int c = 0; c < cols; ++c) gp.at(r, c) += g.at(off + r, c);
          }
          off += h;
        }
        break;
      }
      case Op::kMaxOverRows: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int cols = n.value.cols();
        for (int c = 0; c < cols; ++c) ga.at(n.split[c], c) += g.at(0, c);
        break;
      }
      case Op::kMeanOverRows: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const int rows = ga.rows(), cols = ga.cols();
        for (int c = 0; c < cols; ++c) {
          const double gv = g.at(0, c) / rows;
          for (int r = 0; r < rows; ++r) ga.at(r, c) += gv;
        }
        break;
      }
      case Op::kSum: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
        break;
      }
      case Op::kMean: {
        Tensor& ga = grad_buf(n.inputs[0]);
        const double gv = g[0] / ga.numel();
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
        break;
      }
      case Op::kReshape: {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        break;
      }
      case Op::kConv1dCausal: {
        const Tensor& tx = nodes_[n.inputs[0]].value;
        const Tensor& tw = nodes_[n.inputs[1]].value;
        Tensor& gx = grad_buf(n.inputs[0]);
        Tensor& gw = grad_buf(n.inputs[1]);
        Tensor& gb = grad_buf(n.inputs[2]);
        const int T = tx.shape()[0], cin = tx.shape()[1];
        const int K = n.i0, cout = n.value.cols();
        for (int t = 0; t < T; ++t) {
          const double* grow = g.data() + static_cast<size_t>(t) * cout;
          for (int o = 0; o < cout; ++o) gb[o] += grow[o];
          for (int k = 0; k < K; ++k) {
            const int s = t - (K - 1) + k;
            if (s < 0) continue;
            for (int ci = 0; ci < cin; ++ci) {
              const size_t widx = (static_cast<size_t>(k) * cin + ci) * cout;
              const double xv = tx.at(s, ci);
              double dxs = 0.0;
              for (int o = 0; o < cout; ++o) {
                gw[static_cast<int64_t>(widx) + o] += xv * grow[o];
                dxs += tw[static_cast<int64_t>(widx) + o] * grow[o];
              }
              gx.at(s, ci) += dxs;
            }
          }
        }
        break;
      }
    }
  }

  for (const Node& n : nodes_) {
    if (!n.grad.empty() && !n.grad.all_finite()) {
      throw NumericError(std::string("non-finite gradient at op ") + op_name(n.op));
    }
  }
}

// ---------------------------------------------------------------------------
// Constant tables
// ---------------------------------------------------------------------------

Tensor sinusoidal_pe(int length, int dim) {
  if (dim % 2 != 0) throw UsageError("sinusoidal_pe: dim must be even");
  if (length < 1 || dim < 2) throw UsageError("sinusoidal_pe: bad size");
  Tensor pe({length, dim});
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dim);
      pe.at(pos, 2 * i) = std::sin(pos * freq);
      pe.at(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

Tensor causal_mask(int length) {
  if (length < 1) throw UsageError("causal_mask: length must be >= 1");
  Tensor m({length, length});
  for (int r = 0; r < length; ++r) {
    for (int c = r + 1; c < length; ++c) m.at(r, c) = -kInf;
  }
  return m;
}

}  // namespace dcat::ad
