// nn.hpp — parameter store and network building blocks on top of ops.
#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "motionlab/ops.hpp"

namespace mlab {

// Owns parameters with stable addresses; iteration follows creation order so
// optimizer sweeps are deterministic.
template <typename S>
class ParamStoreT {
 public:
  ParamT<S>& create(const std::string& name, TensorT<S> init) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<ParamT<S>>(name, std::move(init)));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }

  ParamT<S>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
    return *it->second;
  }

  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

  std::vector<ParamT<S>*> all() {
    std::vector<ParamT<S>*> v;
    v.reserve(params_.size());
    for (auto& p : params_) v.push_back(p.get());
    return v;
  }

  size_t count() const { return params_.size(); }

  size_t numel() const {
    size_t n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->value.zero_grad();
  }

  // Hash of all parameter values, in creation order. Identifies a model state.
  uint64_t state_hash() const {
    uint64_t h = kFnvOffset;
    for (auto& p : params_) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->value.data.data(), p->value.data.size() * sizeof(S), h);
    }
    return h;
  }

 private:
  std::vector<std::unique_ptr<ParamT<S>>> params_;
  std::unordered_map<std::string, ParamT<S>*> by_name_;
};

using ParamStore = ParamStoreT<float>;

namespace nn {

template <typename S>
TensorT<S> xavier_init(Shape shape, RngStream& rng) {
  size_t fan_in = shape.size() >= 2 ? shape_numel(shape) / size_t(shape.back()) : shape_numel(shape);
  size_t fan_out = size_t(shape.back());
  double lim = std::sqrt(6.0 / double(fan_in + fan_out));
  return TensorT<S>::uniform(std::move(shape), rng, -lim, lim);
}

template <typename S>
struct LinearT {
  ParamT<S>* w = nullptr;
  ParamT<S>* b = nullptr;

  LinearT() = default;
  LinearT(ParamStoreT<S>& ps, const std::string& name, int in, int out, RngStream& rng,
          bool bias = true) {
    w = &ps.create(name + ".w", xavier_init<S>({in, out}, rng));
    if (bias) b = &ps.create(name + ".b", TensorT<S>::zeros({out}));
  }

  VarT<S> operator()(TapeT<S>& t, VarT<S> x) const {
    VarT<S> y = ops::matmul(x, t.use(*w));
    if (b) y = ops::add(y, t.use(*b));
    return y;
  }
};

template <typename S>
struct LayerNormT {
  ParamT<S>* gain = nullptr;
  ParamT<S>* bias = nullptr;
  double eps = 1e-5;

  LayerNormT() = default;
  LayerNormT(ParamStoreT<S>& ps, const std::string& name, int dim) {
    gain = &ps.create(name + ".g", TensorT<S>::full({dim}, S(1)));
    bias = &ps.create(name + ".b", TensorT<S>::zeros({dim}));
  }

  VarT<S> operator()(TapeT<S>& t, VarT<S> x) const {
    return ops::add(ops::mul(ops::layer_norm(x, eps), t.use(*gain)), t.use(*bias));
  }
};

template <typename S>
struct EmbeddingT {
  ParamT<S>* table = nullptr;

  EmbeddingT() = default;
  EmbeddingT(ParamStoreT<S>& ps, const std::string& name, int vocab, int dim, RngStream& rng,
             double stddev = 0.02) {
    table = &ps.create(name, TensorT<S>::randn({vocab, dim}, rng, stddev));
  }

  VarT<S> operator()(TapeT<S>& t, const std::vector<int>& ids) const {
    return ops::embedding(t.use(*table), ids);
  }
};

// Additive attention mask: 0 on allowed pairs, large negative on masked.
template <typename S>
TensorT<S> causal_mask(int T, double neg = -1e30) {
  TensorT<S> m({T, T});
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) m.data[size_t(i) * T + j] = S(neg);
  return m;
}

// Multi-head attention over explicit query/key/value sequences. Self vs
// cross attention is just a choice of inputs. An additive mask (Tq, Tk) is
// optional.
template <typename S>
struct MultiHeadAttentionT {
  LinearT<S> wq, wk, wv, wo;
  int heads = 1;
  int dim = 0;

  MultiHeadAttentionT() = default;
  MultiHeadAttentionT(ParamStoreT<S>& ps, const std::string& name, int d_model, int n_heads,
                      RngStream& rng)
      : wq(ps, name + ".q", d_model, d_model, rng),
        wk(ps, name + ".k", d_model, d_model, rng),
        wv(ps, name + ".v", d_model, d_model, rng),
        wo(ps, name + ".o", d_model, d_model, rng),
        heads(n_heads),
        dim(d_model) {
    if (d_model % n_heads != 0) throw ConfigError("attention dim not divisible by heads");
  }

  VarT<S> operator()(TapeT<S>& t, VarT<S> q_in, VarT<S> kv_in,
                     const TensorT<S>* add_mask = nullptr) const {
    const int Tq = q_in.rows(), Tk = kv_in.rows();
    const int hd = dim / heads;
    auto split = [&](VarT<S> x, int T) {
      // (T, d) -> (H, T, hd)
      return ops::permute102(ops::reshape(x, {T, heads, hd}));
    };
    VarT<S> q = split(wq(t, q_in), Tq);
    VarT<S> k = split(wk(t, kv_in), Tk);
    VarT<S> v = split(wv(t, kv_in), Tk);
    VarT<S> scores = ops::scale(ops::bmm(q, ops::transpose_last2(k)), 1.0 / std::sqrt(double(hd)));
    if (add_mask) {
      VarT<S> m = t.constant(*add_mask);
      scores = ops::add(scores, m);
    }
    VarT<S> probs = ops::softmax(scores);
    VarT<S> ctx = ops::bmm(probs, v);  // (H, Tq, hd)
    VarT<S> merged = ops::reshape(ops::permute102(ctx), {Tq, dim});
    return wo(t, merged);
  }
};

// Pre-norm transformer block: x + attn(ln1 x), then x + mlp(ln2 x).
template <typename S>
struct TransformerBlockT {
  LayerNormT<S> ln1, ln2;
  MultiHeadAttentionT<S> attn;
  LinearT<S> fc1, fc2;

  TransformerBlockT() = default;
  TransformerBlockT(ParamStoreT<S>& ps, const std::string& name, int d_model, int n_heads, int d_ff,
                    RngStream& rng)
      : ln1(ps, name + ".ln1", d_model),
        ln2(ps, name + ".ln2", d_model),
        attn(ps, name + ".attn", d_model, n_heads, rng),
        fc1(ps, name + ".fc1", d_model, d_ff, rng),
        fc2(ps, name + ".fc2", d_ff, d_model, rng) {}

  VarT<S> operator()(TapeT<S>& t, VarT<S> x, const TensorT<S>* add_mask = nullptr,
                     RngStream* drop_rng = nullptr, double dropout = 0.0) const {
    VarT<S> n1 = ln1(t, x);
    VarT<S> h = ops::add(x, attn(t, n1, n1, add_mask));
    VarT<S> m = fc2(t, ops::gelu(fc1(t, ln2(t, h))));
    if (drop_rng) m = ops::dropout(m, dropout, *drop_rng, true);
    return ops::add(h, m);
  }
};

// Cross-attention decoder block: self-attention over queries, then attention
// into a memory sequence, then MLP. Used by the masked-text decoder.
template <typename S>
struct CrossBlockT {
  LayerNormT<S> ln1, ln2, ln3;
  MultiHeadAttentionT<S> self_attn, cross_attn;
  LinearT<S> fc1, fc2;

  CrossBlockT() = default;
  CrossBlockT(ParamStoreT<S>& ps, const std::string& name, int d_model, int n_heads, int d_ff,
              RngStream& rng)
      : ln1(ps, name + ".ln1", d_model),
        ln2(ps, name + ".ln2", d_model),
        ln3(ps, name + ".ln3", d_model),
        self_attn(ps, name + ".self", d_model, n_heads, rng),
        cross_attn(ps, name + ".cross", d_model, n_heads, rng),
        fc1(ps, name + ".fc1", d_model, d_ff, rng),
        fc2(ps, name + ".fc2", d_ff, d_model, rng) {}

  VarT<S> operator()(TapeT<S>& t, VarT<S> x, VarT<S> memory, RngStream* drop_rng = nullptr,
                     double dropout = 0.0) const {
    VarT<S> n1 = ln1(t, x);
    VarT<S> h = ops::add(x, self_attn(t, n1, n1, nullptr));
    h = ops::add(h, cross_attn(t, ln2(t, h), memory, nullptr));
    VarT<S> m = fc2(t, ops::gelu(fc1(t, ln3(t, h))));
    if (drop_rng) m = ops::dropout(m, dropout, *drop_rng, true);
    return ops::add(h, m);
  }
};

template <typename S>
struct Conv1dT {
  ParamT<S>* w = nullptr;
  ParamT<S>* b = nullptr;
  int stride = 1;
  bool causal = false;

  Conv1dT() = default;
  Conv1dT(ParamStoreT<S>& ps, const std::string& name, int in, int out, int kernel, RngStream& rng,
          int stride_ = 1, bool causal_ = false)
      : stride(stride_), causal(causal_) {
    w = &ps.create(name + ".w", xavier_init<S>({kernel, in, out}, rng));
    b = &ps.create(name + ".b", TensorT<S>::zeros({out}));
  }

  VarT<S> operator()(TapeT<S>& t, VarT<S> x) const {
    const int K = w->value.dim(0);
    int pl, pr;
    if (causal) {
      pl = K - 1;
      pr = 0;
    } else if (stride == 1) {
      pl = (K - 1) / 2;
      pr = K - 1 - pl;
    } else {
      // exact stride-k length division: kernel == stride, no padding
      pl = pr = 0;
    }
    return ops::conv1d(x, t.use(*w), t.use(*b), stride, pl, pr);
  }
};

}  // namespace nn
}  // namespace mlab
