// generator.hpp — hierarchical autoregressive generator over the
// concatenated [text prefix | BOS | reasoning | SEP | execution] sequence.
//
// Discrete scenario: one causal transformer with two output projections; the
// head switches at the tagged reasoning/execution boundary, reasoning carries
// the END token, execution length is derived as stride x reasoning length.
// Continuous scenario: the same backbone drives a pointwise MLP denoiser; a
// full reverse-diffusion pass instantiates each latent before the model moves
// to the next position. Sampling supports classifier-free guidance; inference
// runs either incrementally on KV caches or by honest full recomputation.
#pragma once

#include <chrono>

#include "motionlab/tokenizer.hpp"

namespace mlab {

struct GeneratorConfig {
  Scenario scenario = Scenario::kDiscrete;
  int layers = 6;
  int heads = 8;
  int hidden = 256;
  int ff = 1024;
  int max_len = 320;        // position table size
  int max_prefix = 40;      // text tokens kept as condition prefix
  double cond_dropout = 0.1;
  bool use_reasoning = true;  // false = single-sequence baseline

  // diffusion head (continuous scenario)
  int diffusion_steps = 100;
  double beta_min = 1e-4, beta_max = 0.02;
  int mlp_layers = 4;
  int mlp_hidden = 256;

  // sampling defaults
  double temperature = 1.0;
  int top_k = 25;
  int diffusion_sample_stride = 1;  // >1 = strided reverse process

  // training
  int steps = 1200;
  int batch = 8;
  double lr = 3e-4;
  int warmup = 40;
  double weight_decay = 0.01;
  uint64_t seed = 1;
};

struct DiffusionSchedule {
  int L = 100;
  std::vector<double> beta, alpha, alpha_bar;

  DiffusionSchedule() = default;
  DiffusionSchedule(int steps, double beta_min, double beta_max);
  // q(x_l | x_0) coefficients
  double sqrt_ab(int l) const { return std::sqrt(alpha_bar[size_t(l - 1)]); }
  double sqrt_1mab(int l) const { return std::sqrt(1.0 - alpha_bar[size_t(l - 1)]); }
};

struct GenerationResult {
  std::vector<int> ids_res, ids_exec;  // discrete
  Tensor u_res, u_exec;                // continuous
  Tensor frames;                       // decoded motion
  bool truncated = false;              // no END within budget
  double ms_per_token = 0.0;
  int tokens = 0;
};

// Opaque per-layer key/value buffers for incremental decoding.
struct KVCache {
  int layers = 0, hidden = 0, max_len = 0;
  int valid = 0;
  std::vector<std::vector<float>> k, v;  // per layer, (max_len * hidden)

  KVCache() = default;
  KVCache(int n_layers, int dim, int cap);
  void reset() { valid = 0; }
};

class LmrGenerator {
 public:
  LmrGenerator(const GeneratorConfig& cfg, const TokenizerConfig& tok_cfg, uint64_t init_seed);

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }

  // ---- training graphs (teacher forcing) ----
  struct DiscreteBatchItem {
    Tensor prefix_feats;  // (P, text_embed_dim) frozen text features
    std::vector<int> ids_res, ids_exec;
    bool drop_condition = false;
  };
  struct DiscreteLosses {
    Var total;
    double reasoning_ce = 0.0, execution_ce = 0.0;
    Tensor res_logits, exec_logits;  // teacher-forced head outputs
  };
  DiscreteLosses ar_forward_discrete(Tape& t, const DiscreteBatchItem& item);

  struct ContinuousBatchItem {
    Tensor prefix_feats;
    Tensor u_res, u_exec;
    bool drop_condition = false;
  };
  Var ar_forward_continuous(Tape& t, const ContinuousBatchItem& item, RngStream& noise,
                            double* loss_out = nullptr);

  // ---- sampling ----
  struct SampleRequest {
    std::vector<int> prompt_ids;
    double guidance_scale = 2.0;
    uint64_t seed = 0;
    int max_frames = 196;     // motion length budget
    bool use_cache = true;    // false = full recompute per step (reference)
  };
  GenerationResult generate(DualTokenizer& tok, const SampleRequest& req);

  // Per-step logits streams for equivalence checks: returns the guided
  // logits emitted at every sampling step.
  GenerationResult generate_traced(DualTokenizer& tok, const SampleRequest& req,
                                   std::vector<Tensor>* logit_trace);

  const DiffusionSchedule& schedule() const { return sched_; }

  void save(const std::string& path) const;
  static LmrGenerator load(const std::string& path, const TokenizerConfig& tok_cfg);

  uint64_t state_hash() const { return const_cast<ParamStore&>(store_).state_hash(); }

 private:
  friend struct GenRunner;
  enum Type : int { kTypeText = 0, kTypeReason = 1, kTypeSep = 2, kTypeExec = 3 };

  GeneratorConfig cfg_;
  TokenizerConfig tok_cfg_;
  int text_dim_ = 0;
  int res_vocab_ = 0, exec_vocab_ = 0;  // without END
  ParamStore store_;

  nn::LinearT<float> prefix_proj_;
  ParamT<float>*null_cond_, *bos_, *sep_;
  nn::EmbeddingT<float> res_emb_, exec_emb_, type_emb_, pos_emb_;
  std::vector<nn::TransformerBlockT<float>> blocks_;
  nn::LayerNormT<float> final_ln_;
  nn::LinearT<float> head_res_, head_exec_;

  // continuous: latent adapters + denoiser MLP
  nn::LinearT<float> in_res_, in_exec_;
  nn::LinearT<float> z_res_, z_exec_, h_proj_;
  nn::EmbeddingT<float> l_emb_;
  std::vector<nn::LinearT<float>> mlp_;
  nn::LinearT<float> out_res_, out_exec_, skip_res_, skip_exec_;
  DiffusionSchedule sched_;

  // tape-side assembly shared by both training forwards
  Var assemble(Tape& t, const std::vector<Var>& rows, const std::vector<int>& types);

  Var denoise_eps(Tape& t, Var noisy, int l, Var h_row, bool reasoning);
};

struct GeneratorTrainReport {
  std::string loss_csv;
  double final_loss = 0.0;
  double final_res_ce = 0.0, final_exec_ce = 0.0;
};

GeneratorTrainReport train_generator(LmrGenerator& gen, DualTokenizer& tok,
                                     const DatasetSplits& data);

// ms/frame benchmark rows comparing cached and uncached decoding.
struct BenchRow {
  int tokens = 0;
  double cached_ms_per_token = 0.0;
  double uncached_ms_per_token = 0.0;
  double tokenizer_ms_per_frame = 0.0;
};
BenchRow bench_generation(LmrGenerator& gen, DualTokenizer& tok, int target_tokens,
                          uint64_t seed);

}  // namespace mlab
