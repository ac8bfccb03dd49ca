// tokenizer.hpp — dual-granularity motion tokenizer.
//
// A shared temporal encoder feeds two branches: the execution branch keeps
// full token resolution and alone drives reconstruction; the reasoning branch
// projects through a small causal transformer, downsamples by a fixed stride,
// and is trained against text (cosine alignment + masked-text prediction).
// Discrete scenario quantizes both branches with separate EMA codebooks;
// continuous scenario uses VAE heads (16-dim reasoning latent) instead.
#pragma once

#include <optional>

#include "motionlab/checkpoint.hpp"
#include "motionlab/quantize.hpp"
#include "motionlab/textmodel.hpp"

namespace mlab {

enum class Scenario { kDiscrete, kContinuous };
Scenario scenario_from_string(const std::string& s);
const char* scenario_name(Scenario s);

enum class TrainStrategy { kEndToEnd, kTwoStageFreeze, kTwoStageFinetune, kIndependent };
TrainStrategy strategy_from_string(const std::string& s);
const char* strategy_name(TrainStrategy s);

struct TokenizerConfig {
  Scenario scenario = Scenario::kDiscrete;
  int feature_dim = 64;   // d'
  int enc_channels = 64;
  int exec_stride = 1;    // execution tokens per motion frame: 1, 2 or 4
  int reason_stride = 4;  // reasoning downsample relative to execution tokens
  int codebook_exec = 512;
  int codebook_res = 512;
  int latent_dim_res = 16;
  int reason_layers = 2, reason_heads = 4, reason_hidden = 128, reason_ff = 256;
  bool variational_reasoning = true;  // continuous scenario: VAE vs plain AE head
  double kl_weight = 1e-4;
  double commitment_beta = 0.25;
  double ema_decay = 0.99;
  int revival_steps = 256;
  double rec_weight = 1.0;  // 0 disables the reconstruction objective entirely
  double lambda_align = 0.5;
  double lambda_mtp = 0.1;
  double mask_ratio = 0.4;
  TrainStrategy strategy = TrainStrategy::kTwoStageFreeze;

  int steps_stage1 = 900;
  int steps_stage2 = 700;
  int batch = 16;
  double lr = 2e-4;
  int warmup = 30;
  double weight_decay = 0.01;
  uint64_t seed = 1;

  int text_pretrain_steps = 500;
  TextEncoderConfig text;      // out_dim is overridden by align_dim()
  MtpDecoderConfig mtp;        // memory_dim is overridden by align_dim()

  int align_dim() const {
    return scenario == Scenario::kDiscrete ? feature_dim : latent_dim_res;
  }
};

// Token/latent pair for one motion clip.
struct DualCodes {
  std::vector<int> ids_res;   // discrete only
  std::vector<int> ids_exec;  // discrete only
  Tensor u_res;               // (T_res, align_dim) reasoning features/latents
  Tensor u_exec;              // (T, feature_dim) execution latents (continuous path)
};

struct TokenizerLosses {
  double rec = 0, vq_commit = 0, vq_codebook = 0, kl = 0, align = 0, mtp = 0, total = 0;
};

class DualTokenizer {
 public:
  DualTokenizer(const TokenizerConfig& cfg, uint64_t init_seed);

  const TokenizerConfig& config() const { return cfg_; }

  // ---- differentiable pieces (training path) ----
  Var encode_shared(Tape& t, const Tensor& frames, bool independent_branch = false);
  // reasoning features before quantization/VAE head, length T/reason_stride
  Var reason_project(Tape& t, Var f);
  Var decode(Tape& t, Var exec_latent);

  // ---- inference ----
  DualCodes tokenize(const Tensor& frames);
  Tensor decode_ids(const std::vector<int>& ids_exec);     // discrete
  Tensor decode_latents(const Tensor& u_exec);             // continuous
  Tensor reconstruct(const Tensor& frames);                // decode(tokenize(.))
  // pooled, unit-norm reasoning feature used for alignment/retrieval
  Tensor pooled_reasoning(const Tensor& frames);

  // parameter groups
  ParamStore& exec_params() { return exec_store_; }
  ParamStore& reason_params() { return reason_store_; }
  ParamStore& mtp_params() { return mtp_store_; }
  ParamStore& text_params() { return text_store_; }
  Codebook& exec_codebook() { return cb_exec_; }
  Codebook& reason_codebook() { return cb_res_; }
  TextEncoder& text_encoder() { return *text_enc_; }
  MtpDecoder& mtp_decoder() { return *mtp_dec_; }

  uint64_t exec_state_hash() const;

  void save(const std::string& path) const;
  static DualTokenizer load(const std::string& path);  // config sidecar <path>.json

  // expected token counts for a clip of T_m frames
  int exec_len(int frames) const { return frames / cfg_.exec_stride; }
  int reason_len(int frames) const { return exec_len(frames) / cfg_.reason_stride; }

 private:
  friend struct TokenizerTrainer;
  struct EncoderNet {
    nn::Conv1dT<float> in, r1a, r1b, r2a, r2b, out;
    std::vector<nn::Conv1dT<float>> down;  // stride-2 convs for exec_stride
  };
  struct DecoderNet {
    nn::Conv1dT<float> in, r1a, r1b, smooth, out;
  };
  struct ReasonNet {
    nn::LinearT<float> in;
    std::vector<nn::TransformerBlockT<float>> blocks;
    nn::Conv1dT<float> down;  // kernel == stride == reason_stride
    nn::LinearT<float> out_code;            // discrete: to feature_dim
    nn::LinearT<float> out_mu, out_logsig;  // continuous: to latent_dim_res
  };

  EncoderNet build_encoder(ParamStore& ps, const std::string& prefix, RngStream& rng, bool causal);
  Var run_encoder(Tape& t, const EncoderNet& net, const Tensor& frames);

  TokenizerConfig cfg_;
  ParamStore exec_store_, reason_store_, mtp_store_, text_store_;
  EncoderNet enc_;
  DecoderNet dec_;
  ReasonNet reason_;
  std::optional<EncoderNet> indep_enc_;  // strategy: independent networks
  // continuous execution VAE heads
  nn::LinearT<float> exec_mu_, exec_logsig_;
  Codebook cb_exec_, cb_res_;
  std::unique_ptr<TextEncoder> text_enc_;
  std::unique_ptr<MtpDecoder> mtp_dec_;
  bool causal_ = false;
};

struct TokenizerTrainReport {
  std::string loss_csv;          // step,stage,rec,vq,kl,align,mtp,total
  double val_mpjpe = 0.0;
  double perplexity_exec = 0.0;
  double perplexity_res = 0.0;
  double mtp_acc = 0.0;
  double reasoning_r1 = 0.0;
  uint64_t exec_hash_after_stage1 = 0;
  uint64_t exec_hash_after_stage2 = 0;
  long revivals = 0;
  double text_pretrain_loss = 0.0;
};

// Runs the configured strategy end to end (text pretrain, stage 1, stage 2).
TokenizerTrainReport train_tokenizer(DualTokenizer& tok, const DatasetSplits& data);

// ---- tokenizer evaluation helpers ----
double eval_mpjpe(DualTokenizer& tok, const DatasetFile& data, int limit = 0);
// MPJPE when execution ids are replaced with uniform random ids (ablation).
double eval_mpjpe_random_codes(DualTokenizer& tok, const DatasetFile& data, uint64_t seed,
                               int limit = 0);
double eval_mtp_accuracy(DualTokenizer& tok, const DatasetFile& data, uint64_t seed, int limit = 0);
// Retrieval of the true caption among `pool` candidates by cosine between
// pooled reasoning features and text embeddings (top-1 fraction).
double eval_reasoning_r1(DualTokenizer& tok, const DatasetFile& data, int pool, uint64_t seed,
                         int limit = 0);
// Codebook usage over a dataset pass.
struct CodebookHealth {
  double perplexity = 0.0;
  int dead_codes = 0;
  long revivals = 0;
};
CodebookHealth codebook_health(DualTokenizer& tok, const DatasetFile& data, bool reasoning);

}  // namespace mlab
