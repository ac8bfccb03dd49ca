#include "motionlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mlab {

namespace op = ops;
using Clock = std::chrono::steady_clock;

DiffusionSchedule::DiffusionSchedule(int steps, double beta_min, double beta_max) : L(steps) {
  if (steps < 1) throw ConfigError("diffusion schedule: steps must be >= 1");
  beta.resize(size_t(L));
  alpha.resize(size_t(L));
  alpha_bar.resize(size_t(L));
  double ab = 1.0;
  for (int l = 0; l < L; ++l) {
    beta[size_t(l)] = L > 1 ? beta_min + (beta_max - beta_min) * double(l) / double(L - 1)
                            : beta_min;
    if (!(beta[size_t(l)] > 0.0 && beta[size_t(l)] < 1.0))
      throw ConfigError("diffusion schedule: beta out of (0,1)");
    alpha[size_t(l)] = 1.0 - beta[size_t(l)];
    ab *= alpha[size_t(l)];
    alpha_bar[size_t(l)] = ab;
  }
}

KVCache::KVCache(int n_layers, int dim, int cap) : layers(n_layers), hidden(dim), max_len(cap) {
  k.assign(size_t(layers), std::vector<float>(size_t(max_len) * dim, 0.0f));
  v.assign(size_t(layers), std::vector<float>(size_t(max_len) * dim, 0.0f));
}

LmrGenerator::LmrGenerator(const GeneratorConfig& cfg, const TokenizerConfig& tok_cfg,
                           uint64_t init_seed)
    : cfg_(cfg), tok_cfg_(tok_cfg) {
  RngStream rng(mix_seed(init_seed, 0x6e47ULL));
  text_dim_ = tok_cfg.text.embed_dim;
  res_vocab_ = tok_cfg.codebook_res;
  exec_vocab_ = tok_cfg.codebook_exec;
  const int H = cfg_.hidden;

  prefix_proj_ = nn::LinearT<float>(store_, "prefix", text_dim_, H, rng);
  null_cond_ = &store_.create("null_cond", Tensor::randn({1, H}, rng, 0.02));
  bos_ = &store_.create("bos", Tensor::randn({1, H}, rng, 0.02));
  sep_ = &store_.create("sep", Tensor::randn({1, H}, rng, 0.02));
  type_emb_ = nn::EmbeddingT<float>(store_, "type", 4, H, rng);
  pos_emb_ = nn::EmbeddingT<float>(store_, "pos", cfg_.max_len, H, rng);
  if (cfg_.scenario == Scenario::kDiscrete) {
    res_emb_ = nn::EmbeddingT<float>(store_, "res_emb", res_vocab_, H, rng);
    exec_emb_ = nn::EmbeddingT<float>(store_, "exec_emb", exec_vocab_, H, rng);
  }
  for (int i = 0; i < cfg_.layers; ++i)
    blocks_.emplace_back(store_, "blk" + std::to_string(i), H, cfg_.heads, cfg_.ff, rng);
  final_ln_ = nn::LayerNormT<float>(store_, "ln_f", H);
  if (cfg_.scenario == Scenario::kDiscrete) {
    head_res_ = nn::LinearT<float>(store_, "head_res", H, res_vocab_ + 1, rng);
    head_exec_ = nn::LinearT<float>(store_, "head_exec", H, exec_vocab_ + 1, rng);
  } else {
    const int dr = tok_cfg_.latent_dim_res, de = tok_cfg_.feature_dim;
    in_res_ = nn::LinearT<float>(store_, "in_res", dr, H, rng);
    in_exec_ = nn::LinearT<float>(store_, "in_exec", de, H, rng);
    const int M = cfg_.mlp_hidden;
    z_res_ = nn::LinearT<float>(store_, "z_res", dr, M, rng);
    z_exec_ = nn::LinearT<float>(store_, "z_exec", de, M, rng);
    h_proj_ = nn::LinearT<float>(store_, "h_proj", H, M, rng);
    l_emb_ = nn::EmbeddingT<float>(store_, "l_emb", cfg_.diffusion_steps + 1, M, rng);
    for (int i = 0; i < cfg_.mlp_layers; ++i)
      mlp_.emplace_back(store_, "mlp" + std::to_string(i), M, M, rng);
    out_res_ = nn::LinearT<float>(store_, "out_res", M, dr, rng);
    out_exec_ = nn::LinearT<float>(store_, "out_exec", M, de, rng);
    skip_res_ = nn::LinearT<float>(store_, "skip_res", dr, dr, rng);
    skip_exec_ = nn::LinearT<float>(store_, "skip_exec", de, de, rng);
    // the noisy-input pathways start at zero so the clean-latent prediction
    // has no noise leak at init; sensitivity grows only where training asks
    for (auto* p : {z_res_.w, z_exec_.w, skip_res_.w, skip_exec_.w})
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
    sched_ = DiffusionSchedule(cfg_.diffusion_steps, cfg_.beta_min, cfg_.beta_max);
  }
}

Var LmrGenerator::assemble(Tape& t, const std::vector<Var>& rows, const std::vector<int>& types) {
  Var x = op::concat_rows(rows);
  const int S = x.rows();
  if (S > cfg_.max_len)
    throw ShapeError(format("generator: sequence %d exceeds max_len %d", S, cfg_.max_len));
  x = op::add(x, type_emb_(t, types));
  std::vector<int> pos;
  for (int i = 0; i < S; ++i) pos.push_back(i);
  x = op::add(x, pos_emb_(t, pos));
  Tensor mask = nn::causal_mask<float>(S);
  for (const auto& blk : blocks_) x = blk(t, x, &mask);
  return final_ln_(t, x);
}

LmrGenerator::DiscreteLosses LmrGenerator::ar_forward_discrete(Tape& t,
                                                               const DiscreteBatchItem& item) {
  if (cfg_.scenario != Scenario::kDiscrete)
    throw ConfigError("ar_forward_discrete: generator is continuous");
  for (int id : item.ids_res)
    if (id < 0 || id >= res_vocab_)
      throw ShapeError(format("ar_forward_discrete: reasoning id %d out of vocab", id));
  for (int id : item.ids_exec)
    if (id < 0 || id >= exec_vocab_)
      throw ShapeError(format("ar_forward_discrete: execution id %d out of vocab", id));
  const bool reason = cfg_.use_reasoning;
  if (reason && int(item.ids_res.size()) * tok_cfg_.reason_stride != int(item.ids_exec.size()))
    throw ShapeError("ar_forward_discrete: reasoning/execution length ratio violated");

  std::vector<Var> rows;
  std::vector<int> types;
  int P;
  if (item.drop_condition) {
    rows.push_back(t.use(*null_cond_));
    types.push_back(kTypeText);
    P = 1;
  } else {
    Var pf = prefix_proj_(t, t.constant(item.prefix_feats));
    rows.push_back(pf);
    P = item.prefix_feats.dim(0);
    for (int i = 0; i < P; ++i) types.push_back(kTypeText);
  }
  rows.push_back(t.use(*bos_));
  types.push_back(kTypeReason);
  const int R = reason ? int(item.ids_res.size()) : 0;
  if (reason && R > 0) {
    rows.push_back(res_emb_(t, item.ids_res));
    for (int i = 0; i < R; ++i) types.push_back(kTypeReason);
  }
  rows.push_back(t.use(*sep_));
  types.push_back(kTypeSep);
  const int T = int(item.ids_exec.size());
  // the baseline predicts END after the last execution token, so it feeds
  // every id; the dual layout stops its inputs one short
  const int n_exec_in = reason ? T - 1 : T;
  if (n_exec_in > 0) {
    std::vector<int> exec_in(item.ids_exec.begin(), item.ids_exec.begin() + n_exec_in);
    rows.push_back(exec_emb_(t, exec_in));
    for (int i = 0; i < n_exec_in; ++i) types.push_back(kTypeExec);
  }
  Var h = assemble(t, rows, types);

  DiscreteLosses out;
  std::vector<Var> terms;
  if (reason) {
    // positions P..P+R predict [r_1..r_R, END]
    Var h_res = op::slice_rows(h, P, P + R + 1);
    std::vector<int> targets = item.ids_res;
    targets.push_back(res_vocab_);  // END
    Var logits = head_res_(t, h_res);
    out.res_logits = logits.val();
    Var ce_res = op::cross_entropy(logits, targets);
    out.reasoning_ce = double(ce_res.val().data[0]);
    terms.push_back(ce_res);
  }
  {
    // positions P+R+1 .. P+R+T predict [e_1..e_T] (baseline adds END)
    const int sep_pos = P + (reason ? R : 0) + 1;
    std::vector<int> targets = item.ids_exec;
    int span = T;
    if (!reason) {
      targets.push_back(exec_vocab_);  // END for the single-sequence baseline
      span = T + 1;
    }
    Var h_exec = op::slice_rows(h, sep_pos, sep_pos + span);
    Var logits = head_exec_(t, h_exec);
    out.exec_logits = logits.val();
    Var ce_exec = op::cross_entropy(logits, targets);
    out.execution_ce = double(ce_exec.val().data[0]);
    terms.push_back(ce_exec);
  }
  out.total = terms.size() == 2 ? op::add(terms[0], terms[1]) : terms[0];
  return out;
}

// The network predicts the clean latent (with a linear skip from the noisy
// input, so the near-identity small-noise regime is representable from the
// start); the noise estimate is derived analytically, keeping the head output
// well-scaled at every diffusion step.
Var LmrGenerator::denoise_eps(Tape& t, Var noisy, int l, Var h_row, bool reasoning) {
  if (l < 1 || l > sched_.L) throw ConfigError(format("denoise_eps: step %d out of schedule", l));
  Var z = reasoning ? z_res_(t, noisy) : z_exec_(t, noisy);
  Var cond = op::add(op::add(z, l_emb_(t, {l})), h_proj_(t, h_row));
  Var x = op::gelu(cond);
  for (const auto& layer : mlp_) x = op::gelu(layer(t, x));
  Var x0_hat = reasoning ? out_res_(t, x) : out_exec_(t, x);
  x0_hat = op::add(x0_hat, (reasoning ? skip_res_ : skip_exec_)(t, noisy));
  const double sa = sched_.sqrt_ab(l), sb = sched_.sqrt_1mab(l);
  // eps_hat = (noisy - sqrt(ab) * x0_hat) / sqrt(1 - ab)
  return op::scale(op::add(noisy, op::scale(x0_hat, -sa)), 1.0 / sb);
}

Var LmrGenerator::ar_forward_continuous(Tape& t, const ContinuousBatchItem& item,
                                        RngStream& noise, double* loss_out) {
  if (cfg_.scenario != Scenario::kContinuous)
    throw ConfigError("ar_forward_continuous: generator is discrete");
  check_finite(item.u_res, "reasoning latents");
  check_finite(item.u_exec, "execution latents");
  const int R = cfg_.use_reasoning ? item.u_res.dim(0) : 0;
  const int T = item.u_exec.dim(0);
  if (cfg_.use_reasoning && R * tok_cfg_.reason_stride != T)
    throw ShapeError("ar_forward_continuous: latent length ratio violated");
  if (item.u_exec.dim(1) != tok_cfg_.feature_dim)
    throw ShapeError("ar_forward_continuous: execution latent dim mismatch");

  std::vector<Var> rows;
  std::vector<int> types;
  int P;
  if (item.drop_condition) {
    rows.push_back(t.use(*null_cond_));
    types.push_back(kTypeText);
    P = 1;
  } else {
    rows.push_back(prefix_proj_(t, t.constant(item.prefix_feats)));
    P = item.prefix_feats.dim(0);
    for (int i = 0; i < P; ++i) types.push_back(kTypeText);
  }
  rows.push_back(t.use(*bos_));
  types.push_back(kTypeReason);
  if (R > 0) {
    rows.push_back(in_res_(t, t.constant(item.u_res)));
    for (int i = 0; i < R; ++i) types.push_back(kTypeReason);
  }
  rows.push_back(t.use(*sep_));
  types.push_back(kTypeSep);
  if (T > 1) {
    Tensor exec_in({T - 1, item.u_exec.dim(1)});
    std::copy(item.u_exec.data.begin(), item.u_exec.data.end() - item.u_exec.dim(1),
              exec_in.data.begin());
    rows.push_back(in_exec_(t, t.constant(exec_in)));
    for (int i = 0; i < T - 1; ++i) types.push_back(kTypeExec);
  }
  Var h = assemble(t, rows, types);

  // one (l, eps) draw per target position
  std::vector<Var> terms;
  auto add_target = [&](int h_pos, const Tensor& clean_row, bool reasoning) {
    const int l = 1 + int(noise.uniform_int(uint64_t(sched_.L)));
    Tensor eps(clean_row.shape);
    for (auto& e : eps.data) e = float(noise.gauss());
    Tensor noisy(clean_row.shape);
    const double sa = sched_.sqrt_ab(l), sb = sched_.sqrt_1mab(l);
    for (size_t i = 0; i < noisy.numel(); ++i)
      noisy.data[i] = float(sa * double(clean_row.data[i]) + sb * double(eps.data[i]));
    Var h_row = op::slice_rows(h, h_pos, h_pos + 1);
    Var eps_hat = denoise_eps(t, t.constant(noisy), l, h_row, reasoning);
    terms.push_back(op::mse(eps_hat, t.constant(eps)));
  };
  auto row_of = [](const Tensor& m, int i) {
    Tensor r({1, m.cols()});
    std::copy(m.data.begin() + long(i) * m.cols(), m.data.begin() + long(i + 1) * m.cols(),
              r.data.begin());
    return r;
  };
  for (int i = 0; i < R; ++i) add_target(P + i, row_of(item.u_res, i), true);
  const int sep_pos = P + R + 1;
  for (int j = 0; j < T; ++j) add_target(sep_pos + j, row_of(item.u_exec, j), false);

  Var total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = op::add(total, terms[i]);
  total = op::scale(total, 1.0 / double(terms.size()));
  if (loss_out) *loss_out = double(total.val().data[0]);
  return total;
}

// ---------------- raw inference path ----------------

// Row-wise forward that reproduces the tape math float-for-float. Both the
// cached and the full-recompute sampling paths run through this runner; the
// only difference is whether key/value history is reused or rebuilt.
struct GenRunner {
  const LmrGenerator& g;
  const GeneratorConfig& cfg;

  explicit GenRunner(const LmrGenerator& gen) : g(gen), cfg(gen.cfg_) {}

  static void linear_row(const float* x, const ParamT<float>* W, const ParamT<float>* b, int in,
                         int out, float* y) {
    for (int j = 0; j < out; ++j) y[j] = 0.0f;
    const float* w = W->value.data.data();
    for (int k = 0; k < in; ++k) {
      const float xk = x[k];
      const float* wr = w + size_t(k) * out;
      for (int j = 0; j < out; ++j) y[j] += xk * wr[j];
    }
    if (b) {
      const float* bb = b->value.data.data();
      for (int j = 0; j < out; ++j) y[j] += bb[j];
    }
  }

  static void ln_row(const float* x, const ParamT<float>* gain, const ParamT<float>* bias, int C,
                     float* y) {
    float mean = 0.0f;
    for (int j = 0; j < C; ++j) mean += x[j];
    mean /= float(C);
    float var = 0.0f;
    for (int j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= float(C);
    const float inv = 1.0f / float(std::sqrt(double(var) + 1e-5));
    const float* gg = gain->value.data.data();
    const float* bb = bias->value.data.data();
    for (int j = 0; j < C; ++j) y[j] = (x[j] - mean) * inv * gg[j] + bb[j];
  }

  // One position through all blocks; appends k/v to the cache.
  std::vector<float> step(KVCache& cache, std::vector<float> x) const {
    const int H = cfg.hidden;
    const int heads = cfg.heads;
    const int hd = H / heads;
    if (cache.valid >= cache.max_len) throw ShapeError("kv cache overflow");
    std::vector<float> n1(H), q(H), k(H), v(H), ctx(H), tmp(H), ff1(cfg.ff);
    for (int li = 0; li < cfg.layers; ++li) {
      const auto& blk = g.blocks_[size_t(li)];
      ln_row(x.data(), blk.ln1.gain, blk.ln1.bias, H, n1.data());
      linear_row(n1.data(), blk.attn.wq.w, blk.attn.wq.b, H, H, q.data());
      linear_row(n1.data(), blk.attn.wk.w, blk.attn.wk.b, H, H, k.data());
      linear_row(n1.data(), blk.attn.wv.w, blk.attn.wv.b, H, H, v.data());
      float* kc = cache.k[size_t(li)].data() + size_t(cache.valid) * H;
      float* vc = cache.v[size_t(li)].data() + size_t(cache.valid) * H;
      std::copy(k.begin(), k.end(), kc);
      std::copy(v.begin(), v.end(), vc);
      const int n = cache.valid + 1;
      const float scale = float(1.0 / std::sqrt(double(hd)));
      for (int hh = 0; hh < heads; ++hh) {
        // scores over history, softmax, weighted value sum
        std::vector<float> sc(size_t(n), 0.0f);
        const float* qh = q.data() + hh * hd;
        for (int j = 0; j < n; ++j) {
          const float* kj = cache.k[size_t(li)].data() + size_t(j) * H + hh * hd;
          float dot = 0.0f;
          for (int d = 0; d < hd; ++d) dot += qh[d] * kj[d];
          sc[size_t(j)] = dot * scale;
        }
        float m = sc[0];
        for (int j = 1; j < n; ++j) m = std::max(m, sc[size_t(j)]);
        float sum = 0.0f;
        for (int j = 0; j < n; ++j) {
          sc[size_t(j)] = std::exp(sc[size_t(j)] - m);
          sum += sc[size_t(j)];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < n; ++j) sc[size_t(j)] *= inv;
        float* ch = ctx.data() + hh * hd;
        for (int d = 0; d < hd; ++d) ch[d] = 0.0f;
        for (int j = 0; j < n; ++j) {
          const float* vj = cache.v[size_t(li)].data() + size_t(j) * H + hh * hd;
          const float pj = sc[size_t(j)];
          for (int d = 0; d < hd; ++d) ch[d] += pj * vj[d];
        }
      }
      linear_row(ctx.data(), blk.attn.wo.w, blk.attn.wo.b, H, H, tmp.data());
      for (int j = 0; j < H; ++j) x[size_t(j)] += tmp[size_t(j)];
      ln_row(x.data(), blk.ln2.gain, blk.ln2.bias, H, n1.data());
      linear_row(n1.data(), blk.fc1.w, blk.fc1.b, H, cfg.ff, ff1.data());
      for (int j = 0; j < cfg.ff; ++j) ff1[size_t(j)] = float(op::gelu_value(double(ff1[size_t(j)])));
      linear_row(ff1.data(), blk.fc2.w, blk.fc2.b, cfg.ff, H, tmp.data());
      for (int j = 0; j < H; ++j) x[size_t(j)] += tmp[size_t(j)];
    }
    ++cache.valid;
    std::vector<float> out(size_t(H), 0.0f);
    ln_row(x.data(), g.final_ln_.gain, g.final_ln_.bias, H, out.data());
    return out;
  }

  std::vector<float> embed_input(int type, int pos, const std::vector<float>& base) const {
    const int H = cfg.hidden;
    std::vector<float> row = base;
    const float* te = g.type_emb_.table->value.data.data() + size_t(type) * H;
    for (int j = 0; j < H; ++j) row[size_t(j)] += te[j];
    const float* pe = g.pos_emb_.table->value.data.data() + size_t(pos) * H;
    for (int j = 0; j < H; ++j) row[size_t(j)] += pe[j];
    return row;
  }

  std::vector<float> param_row(const ParamT<float>* p) const {
    return std::vector<float>(p->value.data.begin(), p->value.data.end());
  }

  std::vector<float> table_row(const nn::EmbeddingT<float>& e, int id) const {
    const int H = cfg.hidden;
    const float* r = e.table->value.data.data() + size_t(id) * H;
    return std::vector<float>(r, r + H);
  }

  std::vector<float> head_row(const float* h, bool reasoning) const {
    const auto& head = reasoning ? g.head_res_ : g.head_exec_;
    const int out = head.w->value.dim(1);
    std::vector<float> y(size_t(out), 0.0f);
    linear_row(h, head.w, head.b, cfg.hidden, out, y.data());
    return y;
  }

  std::vector<float> denoise_row(const std::vector<float>& noisy, int l,
                                 const std::vector<float>& h, bool reasoning) const {
    const int M = cfg.mlp_hidden;
    std::vector<float> z(size_t(M), 0.0f), hp(size_t(M), 0.0f), x(size_t(M), 0.0f);
    const auto& zin = reasoning ? g.z_res_ : g.z_exec_;
    linear_row(noisy.data(), zin.w, zin.b, int(noisy.size()), M, z.data());
    linear_row(h.data(), g.h_proj_.w, g.h_proj_.b, cfg.hidden, M, hp.data());
    const float* le = g.l_emb_.table->value.data.data() + size_t(l) * M;
    for (int j = 0; j < M; ++j) x[size_t(j)] = z[size_t(j)] + le[j] + hp[size_t(j)];
    for (int j = 0; j < M; ++j) x[size_t(j)] = float(op::gelu_value(double(x[size_t(j)])));
    std::vector<float> y(size_t(M), 0.0f);
    for (const auto& layer : g.mlp_) {
      linear_row(x.data(), layer.w, layer.b, M, M, y.data());
      for (int j = 0; j < M; ++j) x[size_t(j)] = float(op::gelu_value(double(y[size_t(j)])));
    }
    const auto& out_proj = reasoning ? g.out_res_ : g.out_exec_;
    const auto& skip = reasoning ? g.skip_res_ : g.skip_exec_;
    const int od = out_proj.w->value.dim(1);
    std::vector<float> x0(size_t(od), 0.0f), sk(size_t(od), 0.0f);
    linear_row(x.data(), out_proj.w, out_proj.b, M, od, x0.data());
    linear_row(noisy.data(), skip.w, skip.b, od, od, sk.data());
    for (int j = 0; j < od; ++j) x0[size_t(j)] += sk[size_t(j)];
    const float neg_sa = float(-g.sched_.sqrt_ab(l));
    const float inv_sb = float(1.0 / g.sched_.sqrt_1mab(l));
    std::vector<float> out(size_t(od), 0.0f);
    for (int j = 0; j < od; ++j)
      out[size_t(j)] = (noisy[size_t(j)] + x0[size_t(j)] * neg_sa) * inv_sb;
    return out;
  }
};

namespace {

// Deterministic top-k + temperature categorical draw.
int sample_from_logits(const std::vector<float>& logits, double temperature, int top_k,
                       RngStream& rng, int forbid = -1) {
  const int V = int(logits.size());
  std::vector<int> order(size_t(V), 0);
  for (int i = 0; i < V; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[size_t(a)] != logits[size_t(b)]) return logits[size_t(a)] > logits[size_t(b)];
    return a < b;
  });
  std::vector<int> kept;
  for (int i : order) {
    if (i == forbid) continue;
    kept.push_back(i);
    if (int(kept.size()) >= std::max(1, std::min(top_k, V))) break;
  }
  const double tau = temperature > 1e-6 ? temperature : 1e-6;
  double m = -1e300;
  for (int i : kept) m = std::max(m, double(logits[size_t(i)]) / tau);
  std::vector<double> p;
  double sum = 0.0;
  for (int i : kept) {
    const double e = std::exp(double(logits[size_t(i)]) / tau - m);
    p.push_back(e);
    sum += e;
  }
  double u = rng.uniform() * sum;
  for (size_t i = 0; i < kept.size(); ++i) {
    u -= p[i];
    if (u <= 0.0) return kept[i];
  }
  return kept.back();
}

std::vector<float> guided_combine(const std::vector<float>& cond, const std::vector<float>& uncond,
                                  double s) {
  std::vector<float> g(cond.size());
  for (size_t i = 0; i < cond.size(); ++i)
    g[i] = float(double(uncond[i]) + s * (double(cond[i]) - double(uncond[i])));
  return g;
}

}  // namespace

GenerationResult LmrGenerator::generate(DualTokenizer& tok, const SampleRequest& req) {
  return generate_traced(tok, req, nullptr);
}

GenerationResult LmrGenerator::generate_traced(DualTokenizer& tok, const SampleRequest& req,
                                               std::vector<Tensor>* logit_trace) {
  GenRunner run(*this);
  const int H = cfg_.hidden;
  RngStream rng(mix_seed(req.seed, 0x9e4eULL));

  // condition prefix features from the tokenizer's frozen text encoder
  std::vector<int> prompt = req.prompt_ids;
  if (int(prompt.size()) > cfg_.max_prefix) prompt.resize(size_t(cfg_.max_prefix));
  Tensor feats = tok.text_encoder().token_features(prompt);
  const int P = feats.dim(0);

  KVCache cache_c(cfg_.layers, H, cfg_.max_len), cache_u(cfg_.layers, H, cfg_.max_len);
  // Uncached mode replays the whole prefix through a fresh cache each step;
  // the math is identical, only reuse differs.
  std::vector<std::vector<float>> hist_c, hist_u;  // input embeddings fed so far

  auto feed = [&](KVCache& cache, std::vector<std::vector<float>>& hist,
                  const std::vector<float>& row) {
    hist.push_back(row);
    return run.step(cache, row);
  };
  auto refeed_all = [&](KVCache& cache, const std::vector<std::vector<float>>& hist) {
    cache.reset();
    std::vector<float> h;
    for (const auto& r : hist) h = run.step(cache, r);
    return h;
  };

  // prime both streams
  std::vector<float> h_c, h_u;
  {
    const float* pw = prefix_proj_.w->value.data.data();
    (void)pw;
    for (int i = 0; i < P; ++i) {
      std::vector<float> row(size_t(H), 0.0f);
      GenRunner::linear_row(feats.data.data() + size_t(i) * text_dim_, prefix_proj_.w,
                            prefix_proj_.b, text_dim_, H, row.data());
      h_c = feed(cache_c, hist_c, run.embed_input(kTypeText, i, row));
    }
    h_u = feed(cache_u, hist_u, run.embed_input(kTypeText, 0, run.param_row(null_cond_)));
    const int bos_pos_c = P, bos_pos_u = 1;
    h_c = feed(cache_c, hist_c, run.embed_input(kTypeReason, bos_pos_c, run.param_row(bos_)));
    h_u = feed(cache_u, hist_u, run.embed_input(kTypeReason, bos_pos_u, run.param_row(bos_)));
  }

  GenerationResult out;
  const auto t0 = Clock::now();
  const int max_exec = std::min(req.max_frames, kMaxFrames) / tok_cfg_.exec_stride;
  const int max_res = max_exec / tok_cfg_.reason_stride;

  auto step_both = [&](const std::vector<float>& base, int type) {
    const int pos_c = int(hist_c.size()), pos_u = int(hist_u.size());
    if (req.use_cache) {
      h_c = feed(cache_c, hist_c, run.embed_input(type, pos_c, base));
      h_u = feed(cache_u, hist_u, run.embed_input(type, pos_u, base));
    } else {
      hist_c.push_back(run.embed_input(type, pos_c, base));
      hist_u.push_back(run.embed_input(type, pos_u, base));
      h_c = refeed_all(cache_c, hist_c);
      h_u = refeed_all(cache_u, hist_u);
    }
  };

  if (cfg_.scenario == Scenario::kDiscrete) {
    // Phase I: reasoning tokens until END or budget
    if (cfg_.use_reasoning) {
      while (int(out.ids_res.size()) < max_res) {
        auto logits = guided_combine(run.head_row(h_c.data(), true),
                                     run.head_row(h_u.data(), true), req.guidance_scale);
        if (logit_trace) logit_trace->push_back(Tensor({int(logits.size())}, logits));
        const int id = sample_from_logits(logits, cfg_.temperature, cfg_.top_k, rng);
        if (id == res_vocab_) break;  // END of reasoning
        out.ids_res.push_back(id);
        if (int(out.ids_res.size()) >= max_res) {
          out.truncated = true;
          break;
        }
        step_both(run.table_row(res_emb_, id), kTypeReason);
      }
      if (out.ids_res.empty()) {
        // degenerate plan: fall back to one-step reasoning so layout holds
        out.ids_res.push_back(0);
        out.truncated = true;
        step_both(run.table_row(res_emb_, 0), kTypeReason);
      }
    }
    // SEP, then execution length pinned to stride x reasoning length
    step_both(run.param_row(sep_), kTypeSep);
    const int exec_target = cfg_.use_reasoning
                                ? int(out.ids_res.size()) * tok_cfg_.reason_stride
                                : max_exec;
    while (int(out.ids_exec.size()) < exec_target) {
      auto logits = guided_combine(run.head_row(h_c.data(), false),
                                   run.head_row(h_u.data(), false), req.guidance_scale);
      if (logit_trace) logit_trace->push_back(Tensor({int(logits.size())}, logits));
      // END is only a valid outcome for the single-sequence baseline
      const int id = cfg_.use_reasoning
                         ? sample_from_logits(logits, cfg_.temperature, cfg_.top_k, rng,
                                              exec_vocab_)
                         : sample_from_logits(logits, cfg_.temperature, cfg_.top_k, rng);
      if (!cfg_.use_reasoning && id == exec_vocab_) break;
      out.ids_exec.push_back(id);
      if (int(out.ids_exec.size()) >= exec_target) break;
      step_both(run.table_row(exec_emb_, id), kTypeExec);
    }
    if (!cfg_.use_reasoning && out.ids_exec.empty()) {
      out.ids_exec.push_back(0);
      out.truncated = true;
    }
    // baseline length must decode to whole frames
    while (!cfg_.use_reasoning && int(out.ids_exec.size()) % tok_cfg_.reason_stride != 0)
      out.ids_exec.pop_back();
    if (!cfg_.use_reasoning && out.ids_exec.empty()) out.ids_exec.assign(4, 0);
    out.frames = tok.decode_ids(out.ids_exec);
  } else {
    // continuous: fixed lengths from the frame budget
    const int R = cfg_.use_reasoning ? std::max(1, max_res) : 0;
    const int T = cfg_.use_reasoning ? R * tok_cfg_.reason_stride : max_exec;
    const int dr = tok_cfg_.latent_dim_res, de = tok_cfg_.feature_dim;
    out.u_res = Tensor({R, dr});
    out.u_exec = Tensor({T, de});
    const int stride = std::max(1, cfg_.diffusion_sample_stride);

    auto sample_latent = [&](bool reasoning, int dim) {
      std::vector<float> z(size_t(dim), 0.0f);
      for (auto& v : z) v = float(rng.gauss());
      int l = sched_.L;
      while (l >= 1) {
        const int l_next = std::max(l - stride, 0);
        auto ec = run.denoise_row(z, l, h_c, reasoning);
        auto eu = run.denoise_row(z, l, h_u, reasoning);
        auto eg = guided_combine(ec, eu, req.guidance_scale);
        const double ab_l = sched_.alpha_bar[size_t(l - 1)];
        const double ab_n = l_next >= 1 ? sched_.alpha_bar[size_t(l_next - 1)] : 1.0;
        const double a_eff = ab_l / ab_n;
        const double b_eff = 1.0 - a_eff;
        const double inv_sqrt_a = 1.0 / std::sqrt(a_eff);
        const double eps_coef = b_eff / std::sqrt(1.0 - ab_l);
        const double sigma =
            l_next >= 1 ? std::sqrt((1.0 - ab_n) / (1.0 - ab_l) * b_eff) : 0.0;
        for (int d = 0; d < dim; ++d) {
          double mean = inv_sqrt_a * (double(z[size_t(d)]) - eps_coef * double(eg[size_t(d)]));
          z[size_t(d)] = float(mean + sigma * (sigma > 0.0 ? rng.gauss() : 0.0));
        }
        l = l_next;
      }
      return z;
    };

    for (int i = 0; i < R; ++i) {
      auto z = sample_latent(true, dr);
      std::copy(z.begin(), z.end(), out.u_res.data.begin() + long(i) * dr);
      std::vector<float> row(size_t(H), 0.0f);
      GenRunner::linear_row(z.data(), in_res_.w, in_res_.b, dr, H, row.data());
      step_both(row, kTypeReason);
    }
    step_both(run.param_row(sep_), kTypeSep);
    for (int j = 0; j < T; ++j) {
      auto z = sample_latent(false, de);
      std::copy(z.begin(), z.end(), out.u_exec.data.begin() + long(j) * de);
      if (j + 1 < T) {
        std::vector<float> row(size_t(H), 0.0f);
        GenRunner::linear_row(z.data(), in_exec_.w, in_exec_.b, de, H, row.data());
        step_both(row, kTypeExec);
      }
    }
    out.frames = tok.decode_latents(out.u_exec);
  }

  const auto t1 = Clock::now();
  out.tokens = int(out.ids_res.size() + out.ids_exec.size());
  if (cfg_.scenario == Scenario::kContinuous)
    out.tokens = out.u_res.rows() + out.u_exec.rows();
  out.ms_per_token =
      std::chrono::duration<double, std::milli>(t1 - t0).count() / std::max(1, out.tokens);
  return out;
}

void LmrGenerator::save(const std::string& path) const {
  Checkpoint ck;
  ck.add_params(const_cast<ParamStore&>(store_), "gen/");
  ck.save(path);
  nlohmann::json j;
  j["scenario"] = scenario_name(cfg_.scenario);
  j["layers"] = cfg_.layers;
  j["heads"] = cfg_.heads;
  j["hidden"] = cfg_.hidden;
  j["ff"] = cfg_.ff;
  j["max_len"] = cfg_.max_len;
  j["max_prefix"] = cfg_.max_prefix;
  j["cond_dropout"] = cfg_.cond_dropout;
  j["use_reasoning"] = cfg_.use_reasoning;
  j["diffusion_steps"] = cfg_.diffusion_steps;
  j["beta_min"] = cfg_.beta_min;
  j["beta_max"] = cfg_.beta_max;
  j["mlp_layers"] = cfg_.mlp_layers;
  j["mlp_hidden"] = cfg_.mlp_hidden;
  j["temperature"] = cfg_.temperature;
  j["top_k"] = cfg_.top_k;
  j["diffusion_sample_stride"] = cfg_.diffusion_sample_stride;
  std::ofstream f(path + ".json");
  if (!f) throw IoError("generator: cannot write config sidecar");
  f << j.dump(2) << "\n";
}

LmrGenerator LmrGenerator::load(const std::string& path, const TokenizerConfig& tok_cfg) {
  std::ifstream f(path + ".json");
  if (!f) throw IoError("generator: missing config sidecar: " + path + ".json");
  nlohmann::json j = nlohmann::json::parse(f);
  GeneratorConfig c;
  c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.ff = j.at("ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.max_prefix = j.at("max_prefix").get<int>();
  c.cond_dropout = j.at("cond_dropout").get<double>();
  c.use_reasoning = j.at("use_reasoning").get<bool>();
  c.diffusion_steps = j.at("diffusion_steps").get<int>();
  c.beta_min = j.at("beta_min").get<double>();
  c.beta_max = j.at("beta_max").get<double>();
  c.mlp_layers = j.at("mlp_layers").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.top_k = j.at("top_k").get<int>();
  c.diffusion_sample_stride = j.at("diffusion_sample_stride").get<int>();
  LmrGenerator gen(c, tok_cfg, 0);
  Checkpoint ck = Checkpoint::load(path);
  ck.load_params(gen.store_, "gen/");
  return gen;
}

GeneratorTrainReport train_generator(LmrGenerator& gen, DualTokenizer& tok,
                                     const DatasetSplits& data) {
  const GeneratorConfig& cfg = gen.config();
  const TokenizerConfig& tcfg = tok.config();
  GeneratorTrainReport rep;
  std::ostringstream csv;
  csv << "step,res_ce,exec_ce,total\n";

  // pre-tokenize and pre-encode conditions once (both are frozen here)
  struct Item {
    Tensor feats;
    DualCodes codes;
  };
  std::vector<Item> items;
  items.reserve(data.train.records.size());
  for (const auto& rec : data.train.records) {
    Item it;
    std::vector<int> prompt = rec.prompt.ids;
    if (int(prompt.size()) > cfg.max_prefix) prompt.resize(size_t(cfg.max_prefix));
    it.feats = tok.text_encoder().token_features(prompt);
    it.codes = tok.tokenize(rec.motion.frames);
    items.push_back(std::move(it));
  }

  AdamW opt(gen.params().all());
  opt.schedule = {cfg.lr, cfg.warmup, cfg.steps, cfg.lr * 0.05};
  opt.weight_decay = cfg.weight_decay;
  RngStream rng(mix_seed(cfg.seed, 0x6e52ULL));
  RngStream noise(mix_seed(cfg.seed, 0x6e53ULL));

  const int n = int(items.size());
  for (int step = 0; step < cfg.steps; ++step) {
    Tape t;
    Var total;
    double res_ce = 0.0, exec_ce = 0.0;
    const int B = std::min(cfg.batch, n);
    std::vector<int> idx = rng.sample_indices(n, B);
    for (int i : idx) {
      const Item& it = items[size_t(i)];
      const bool drop = rng.uniform() < cfg.cond_dropout;
      Var loss;
      if (cfg.scenario == Scenario::kDiscrete) {
        LmrGenerator::DiscreteBatchItem bi{it.feats, it.codes.ids_res, it.codes.ids_exec, drop};
        auto l = gen.ar_forward_discrete(t, bi);
        loss = l.total;
        res_ce += l.reasoning_ce;
        exec_ce += l.execution_ce;
      } else {
        LmrGenerator::ContinuousBatchItem bi{it.feats, it.codes.u_res, it.codes.u_exec, drop};
        double lv = 0.0;
        loss = gen.ar_forward_continuous(t, bi, noise, &lv);
        exec_ce += lv;
      }
      total = total.valid() ? op::add(total, loss) : loss;
    }
    total = op::scale(total, 1.0 / B);
    const double lv = double(total.val().data[0]);
    if (!std::isfinite(lv)) throw NumericError("generator training: non-finite loss");
    opt.zero_grad();
    t.backward(total);
    opt.step();
    rep.final_loss = lv;
    rep.final_res_ce = res_ce / B;
    rep.final_exec_ce = exec_ce / B;
    if (step % 20 == 0 || step + 1 == cfg.steps)
      csv << step << "," << res_ce / B << "," << exec_ce / B << "," << lv << "\n";
  }
  rep.loss_csv = csv.str();
  return rep;
}

BenchRow bench_generation(LmrGenerator& gen, DualTokenizer& tok, int target_tokens,
                          uint64_t seed) {
  BenchRow row;
  // frame budget so that reasoning + execution tokens reach the target
  const int stride = tok.config().reason_stride;
  const int exec_tokens = target_tokens * stride / (stride + 1);
  const int frames = std::min(exec_tokens * tok.config().exec_stride, int(kMaxFrames));
  Sample s = generate_sample(seed, DifficultySpec::standard());

  LmrGenerator::SampleRequest req;
  req.prompt_ids = s.prompt.ids;
  req.seed = seed;
  req.max_frames = frames;
  req.use_cache = true;
  auto t0 = Clock::now();
  GenerationResult cached = gen.generate(tok, req);
  auto t1 = Clock::now();
  req.use_cache = false;
  GenerationResult uncached = gen.generate(tok, req);
  auto t2 = Clock::now();
  row.tokens = cached.tokens;
  row.cached_ms_per_token =
      std::chrono::duration<double, std::milli>(t1 - t0).count() / std::max(1, cached.tokens);
  row.uncached_ms_per_token =
      std::chrono::duration<double, std::milli>(t2 - t1).count() / std::max(1, uncached.tokens);
  // tokenizer side: encode+decode per frame
  auto t3 = Clock::now();
  Tensor recon = tok.reconstruct(s.motion.frames);
  auto t4 = Clock::now();
  row.tokenizer_ms_per_frame =
      std::chrono::duration<double, std::milli>(t4 - t3).count() / s.motion.length();
  (void)recon;
  return row;
}

}  // namespace mlab
