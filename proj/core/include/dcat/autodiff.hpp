#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcat/tensor.hpp"

namespace dcat::ad {

// Named learnable tensors with gradient accumulators. Insertion order is the
// canonical iteration order everywhere (checkpointing, optimizers, checks).
class ParamStore {
 public:
  int create(const std::string& name, Tensor init);
  bool has(const std::string& name) const;
  int index(const std::string& name) const;

  int size() const { return static_cast<int>(entries_.size()); }
  const std::string& name(int idx) const { return entries_[idx].name; }
  Tensor& value(int idx) { return entries_[idx].value; }
  const Tensor& value(int idx) const { return entries_[idx].value; }
  Tensor& grad(int idx) { return entries_[idx].grad; }
  const Tensor& grad(int idx) const { return entries_[idx].grad; }
  Tensor& value(const std::string& name) { return value(index(name)); }
  const Tensor& value(const std::string& name) const { return entries_[index(name)].value; }
  Tensor& grad(const std::string& name) { return grad(index(name)); }

  void zero_grad();
  double global_grad_norm() const;
  void scale_grads(double s);
  int64_t total_entries() const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> by_name_;
};

enum class Op : uint8_t {
  kLeaf,
  kParam,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kClamp,
  kAddRowVec,
  kMatmul,
  kTranspose,
  kTanh,
  kGelu,
  kExp,
  kMinEw,
  kSoftmaxRows,
  kLayerNorm,
  kSliceCols,
  kSliceRows,
  kConcatCols,
  kConcatRows,
  kMaxOverRows,
  kMeanOverRows,
  kSum,
  kMean,
  kReshape,
  kConv1dCausal,
};

const char* op_name(Op op);

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape over fp64 tensors. The graph is rebuilt per
// forward call; backward walks nodes in reverse construction order, which is
// a valid topological order. Every op output is checked for NaN/Inf.
class Tape {
 public:
  Tape() = default;

  Var leaf(Tensor value);
  Var leaf(double scalar);
  Var param(ParamStore& store, const std::string& name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double c);
  Var clamp(Var a, double lo, double hi);
  Var add_rowvec(Var a, Var bias);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var tanh(Var a);
  Var gelu(Var a);
  Var exp(Var a);
  Var min(Var a, Var b);
  // Softmax over the last axis. `mask` (if given) is added to the logits
  // first; use -inf entries to forbid positions.
  Var softmax_rows(Var logits, const Tensor* mask = nullptr);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var slice_cols(Var a, int start, int len);
  Var slice_rows(Var a, int start, int len);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var max_over_rows(Var a);
  Var mean_over_rows(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var reshape(Var a, std::vector<int> shape);
  Var conv1d_causal(Var x, Var w, Var b);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const;

  // Reverse pass from a scalar loss. Accumulates parameter gradients into the
  // bound ParamStore slots. Deterministic: fixed reverse order, no threads.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

  // Test hook: scales the upstream adjoint of every node with the given op
  // before it propagates, simulating a wrong backward rule.
  void set_backward_fault(Op op, double factor);

 private:
  struct Node {
    Op op = Op::kLeaf;
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    double a0 = 0.0, a1 = 0.0;
    int i0 = 0;
    Tensor aux0, aux1;
    std::vector<int> split;
    ParamStore* store = nullptr;
    int param_idx = -1;
  };

  int push(Node n);
  const Tensor& val(Var v) const;
  void check_finite(const Tensor& t, Op op) const;
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  bool has_fault_ = false;
  Op fault_op_ = Op::kLeaf;
  double fault_factor_ = 1.0;
};

// Deterministic sinusoidal positional encoding table, shape {length, dim}.
Tensor sinusoidal_pe(int length, int dim);

// Lower-triangular additive attention mask: 0 where attending is allowed
// (key <= query), -inf elsewhere. Shape {length, length}.
Tensor causal_mask(int length);

}  // namespace dcat::ad
