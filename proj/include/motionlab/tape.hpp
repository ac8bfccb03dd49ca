// tape.hpp — reverse-mode autodiff on a Wengert list.
//
// Ops append nodes to a TapeT in execution order, which is therefore a valid
// topological order; backward() walks it once in reverse. Parameters are
// long-lived tensors owned by a ParamStore; registering one on a tape is
// memoized so shared weights accumulate correctly. Tapes are single-threaded
// and never shared; parallelism lives inside the kernels.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "motionlab/tensor.hpp"

namespace mlab {

template <typename S>
struct ParamT {
  std::string name;
  TensorT<S> value;  // value.grad accumulates across backward() calls

  ParamT() = default;
  ParamT(std::string n, TensorT<S> v) : name(std::move(n)), value(std::move(v)) {
    value.requires_grad = true;
  }
};

template <typename S>
class TapeT;

template <typename S>
struct VarT {
  TapeT<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const TensorT<S>& val() const;
  const Shape& shape() const { return val().shape; }
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
};

template <typename S>
class TapeT {
 public:
  using BackwardFn = std::function<void(TapeT&, int)>;

  struct Node {
    TensorT<S> value;
    std::vector<S> grad;  // allocated lazily during backward
    std::vector<int> inputs;
    BackwardFn backward;
    ParamT<S>* bound = nullptr;  // leaf tied to a parameter
    bool needs_grad = false;
  };

  void reserve(size_t n) { nodes_.reserve(n); }
  size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  void reset() {
    nodes_.clear();
    param_ids_.clear();
  }

  VarT<S> constant(TensorT<S> value) {
    return make_leaf(std::move(value), false, nullptr);
  }

  VarT<S> input(TensorT<S> value, bool requires_grad = true) {
    return make_leaf(std::move(value), requires_grad, nullptr);
  }

  // Same parameter registered twice returns the same node.
  VarT<S> use(ParamT<S>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return {this, it->second};
    VarT<S> v = make_leaf(p.value, true, &p);
    param_ids_[&p] = v.id;
    return v;
  }

  VarT<S> emplace(TensorT<S> value, std::vector<int> inputs, BackwardFn bw) {
    bool needs = false;
    for (int i : inputs) needs = needs || nodes_[size_t(i)].needs_grad;
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.needs_grad = needs;
    if (needs) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[size_t(id)]; }
  const TensorT<S>& val(int id) const { return nodes_[size_t(id)].value; }

  // Gradient buffer of node `id`, allocated on first touch.
  std::vector<S>& grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), S(0));
    return n.grad;
  }

  bool has_grad(int id) const { return !nodes_[size_t(id)].grad.empty(); }

  // Reverse sweep from a scalar loss. Each call contributes exactly one
  // d(loss)/d(leaf) into leaf node grads and bound parameter grads, so
  // repeated calls without zeroing accumulate. Interior node grads are
  // transient per call.
  void backward(VarT<S> loss) {
    if (empty()) throw ShapeError("backward: empty tape");
    if (!loss.valid() || loss.tape != this) throw ShapeError("backward: loss not on this tape");
    if (loss.val().numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.val().shape));
    for (auto& n : nodes_)
      if (n.backward) n.grad.clear();  // interior nodes start fresh; leaves persist
    grad_buf(loss.id)[0] += S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (auto& [p, id] : param_ids_) {
      Node& n = nodes_[size_t(id)];
      if (n.grad.empty()) continue;
      p->value.ensure_grad();
      auto& g = *p->value.grad;
      for (size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      n.grad.clear();  // flushed; a later call must not re-add this pass
    }
  }

 private:
  VarT<S> make_leaf(TensorT<S> value, bool requires_grad, ParamT<S>* bound) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    n.bound = bound;
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<ParamT<S>*, int> param_ids_;
};

template <typename S>
const TensorT<S>& VarT<S>::val() const {
  return tape->val(id);
}

using Param = ParamT<float>;
using Tape = TapeT<float>;
using Var = VarT<float>;

}  // namespace mlab
