// textmodel.hpp — trainable text encoder (sentence embedding w), motion
// feature encoder, symmetric contrastive pretraining, and the masked-text
// prediction decoder.
#pragma once

#include <functional>

#include "motionlab/dataset.hpp"
#include "motionlab/nn.hpp"
#include "motionlab/optim.hpp"
#include "motionlab/text.hpp"

namespace mlab {

struct TextEncoderConfig {
  int embed_dim = 128;
  int layers = 2;
  int heads = 4;
  int ff = 256;
  int out_dim = 64;    // projection to the alignment space
  int max_len = 48;
};

// Bidirectional transformer over token embeddings; pooled sentence vector is
// the mean over non-PAD positions, projected and unit-normalized.
class TextEncoder {
 public:
  TextEncoder(ParamStore& ps, const std::string& name, const TextEncoderConfig& cfg,
              int vocab_size, RngStream& rng);

  struct Out {
    Var tokens;  // (L, embed_dim)
    Var pooled;  // (out_dim), unit norm
  };
  Out forward(Tape& t, const std::vector<int>& ids) const;

  // Inference helper: pooled embedding as a plain tensor.
  Tensor embed(const std::vector<int>& ids) const;
  // Inference helper: per-token features.
  Tensor token_features(const std::vector<int>& ids) const;

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  int vocab_ = 0;
  nn::EmbeddingT<float> tok_emb_, pos_emb_;
  std::vector<nn::TransformerBlockT<float>> blocks_;
  nn::LayerNormT<float> final_ln_;
  nn::LinearT<float> proj_;
};

struct MotionEncoderConfig {
  int channels = 64;
  int out_dim = 64;
};

// Strided temporal conv stack with mean pooling; produces a unit-norm clip
// feature for contrastive training and metric spaces.
class MotionEncoder {
 public:
  MotionEncoder(ParamStore& ps, const std::string& name, const MotionEncoderConfig& cfg,
                RngStream& rng);
  Var forward(Tape& t, const Tensor& frames) const;  // (out_dim) unit norm
  Tensor embed(const Tensor& frames) const;

 private:
  MotionEncoderConfig cfg_;
  nn::Conv1dT<float> c1_, c2_, c3_;
  nn::LinearT<float> proj_;
};

struct ContrastiveConfig {
  int steps = 600;
  int batch = 32;
  double lr = 1e-3;
  double temperature = 0.07;
  int warmup = 20;
  uint64_t seed = 1;
};

struct ContrastiveResult {
  double final_loss = 0.0;
  std::vector<std::pair<long, double>> loss_curve;
};

// Symmetric InfoNCE between paired motion and text features. `params` are
// the trainable parameters (typically both encoders' stores).
ContrastiveResult contrastive_pretrain(std::vector<ParamT<float>*> params,
                                       const MotionEncoder& me, const TextEncoder& te,
                                       const DatasetFile& data, const ContrastiveConfig& cfg);

struct MtpDecoderConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 256;
  int ff = 512;
  double dropout = 0.1;
  int max_len = 48;
  int memory_dim = 64;  // reasoning feature dim fed as cross-attention memory
};

// Cross-attention decoder: masked-prompt queries attend into reasoning
// features; emits vocabulary logits at the masked positions only.
class MtpDecoder {
 public:
  MtpDecoder(ParamStore& ps, const std::string& name, const MtpDecoderConfig& cfg, int vocab_size,
             RngStream& rng);

  // memory: (T_res, memory_dim) variable on the same tape.
  Var logits_at_masks(Tape& t, const MaskedPrompt& masked, Var memory,
                      RngStream* drop_rng = nullptr) const;

  const MtpDecoderConfig& config() const { return cfg_; }

 private:
  MtpDecoderConfig cfg_;
  int vocab_ = 0;
  nn::EmbeddingT<float> tok_emb_, pos_emb_;
  nn::LinearT<float> mem_proj_;
  std::vector<nn::CrossBlockT<float>> blocks_;
  nn::LayerNormT<float> final_ln_;
  nn::LinearT<float> out_;
};

// Cross-entropy over masked positions only.
Var mtp_loss(Tape& t, const MtpDecoder& dec, const MaskedPrompt& masked, Var memory,
             RngStream* drop_rng = nullptr);

}  // namespace mlab
