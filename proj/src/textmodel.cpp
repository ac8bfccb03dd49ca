#include "motionlab/textmodel.hpp"

namespace mlab {

TextEncoder::TextEncoder(ParamStore& ps, const std::string& name, const TextEncoderConfig& cfg,
                         int vocab_size, RngStream& rng)
    : cfg_(cfg),
      vocab_(vocab_size),
      tok_emb_(ps, name + ".tok", vocab_size, cfg.embed_dim, rng),
      pos_emb_(ps, name + ".pos", cfg.max_len, cfg.embed_dim, rng),
      final_ln_(ps, name + ".ln", cfg.embed_dim),
      proj_(ps, name + ".proj", cfg.embed_dim, cfg.out_dim, rng) {
  for (int i = 0; i < cfg.layers; ++i)
    blocks_.emplace_back(ps, name + ".blk" + std::to_string(i), cfg.embed_dim, cfg.heads, cfg.ff,
                         rng);
}

TextEncoder::Out TextEncoder::forward(Tape& t, const std::vector<int>& ids) const {
  if (ids.empty()) throw ShapeError("encode_text: empty prompt");
  for (int id : ids)
    if (id < 0 || id >= vocab_) throw ShapeError(format("encode_text: unknown token id %d", id));
  std::vector<int> pos;
  for (size_t i = 0; i < ids.size(); ++i) pos.push_back(int(i) % cfg_.max_len);
  Var x = ops::add(tok_emb_(t, ids), pos_emb_(t, pos));
  for (const auto& blk : blocks_) x = blk(t, x);  // bidirectional: no mask
  x = final_ln_(t, x);
  // mean over non-PAD positions
  std::vector<float> mask;
  for (int id : ids) mask.push_back(id == Vocabulary::kPad ? 0.0f : 1.0f);
  Var pooled = ops::masked_mean_rows(x, mask);
  Var w = ops::matmul(ops::reshape(pooled, {1, cfg_.embed_dim}), t.use(*proj_.w));
  if (proj_.b) w = ops::add(w, t.use(*proj_.b));
  return {x, ops::l2_normalize(ops::reshape(w, {cfg_.out_dim}))};
}

Tensor TextEncoder::embed(const std::vector<int>& ids) const {
  Tape t;
  return forward(t, ids).pooled.val();
}

Tensor TextEncoder::token_features(const std::vector<int>& ids) const {
  Tape t;
  return forward(t, ids).tokens.val();
}

MotionEncoder::MotionEncoder(ParamStore& ps, const std::string& name,
                             const MotionEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      c1_(ps, name + ".c1", kMotionDim, cfg.channels, 5, rng, 2),
      c2_(ps, name + ".c2", cfg.channels, cfg.channels, 5, rng, 2),
      c3_(ps, name + ".c3", cfg.channels, cfg.channels, 3, rng, 1),
      proj_(ps, name + ".proj", cfg.channels, cfg.out_dim, rng) {
  // stride-2 convs use kernel 5 with symmetric padding of 2 to halve length
}

Var MotionEncoder::forward(Tape& t, const Tensor& frames) const {
  check_finite(frames, "motion encoder input");
  Var x = t.constant(frames);
  x = ops::gelu(ops::conv1d(x, t.use(*c1_.w), t.use(*c1_.b), 2, 2, 2));
  x = ops::gelu(ops::conv1d(x, t.use(*c2_.w), t.use(*c2_.b), 2, 2, 2));
  x = ops::gelu(c3_(t, x));
  Var pooled = ops::mean_pool_rows(x);
  Var out = ops::matmul(ops::reshape(pooled, {1, cfg_.channels}), t.use(*proj_.w));
  out = ops::add(out, t.use(*proj_.b));
  return ops::l2_normalize(ops::reshape(out, {cfg_.out_dim}));
}

Tensor MotionEncoder::embed(const Tensor& frames) const {
  Tape t;
  return forward(t, frames).val();
}

ContrastiveResult contrastive_pretrain(std::vector<ParamT<float>*> params,
                                       const MotionEncoder& me, const TextEncoder& te,
                                       const DatasetFile& data, const ContrastiveConfig& cfg) {
  if (data.records.empty()) throw ConfigError("contrastive_pretrain: empty dataset");
  AdamW opt(std::move(params));
  opt.schedule = {cfg.lr, cfg.warmup, cfg.steps, cfg.lr * 0.05};
  RngStream rng(mix_seed(cfg.seed, 0xC0137A57ULL));
  ContrastiveResult res;
  const int n = int(data.records.size());
  for (int step = 0; step < cfg.steps; ++step) {
    Tape t;
    std::vector<Var> mfeats, tfeats;
    const int B = std::min(cfg.batch, n);
    std::vector<int> idx = rng.sample_indices(n, B);
    for (int i : idx) {
      const Sample& s = data.records[size_t(i)];
      mfeats.push_back(me.forward(t, s.motion.frames));
      tfeats.push_back(te.forward(t, s.prompt.ids).pooled);
    }
    Var M = ops::stack_rows(mfeats);
    Var T = ops::stack_rows(tfeats);
    Var logits = ops::scale(ops::matmul(M, ops::transpose(T)), 1.0 / cfg.temperature);
    std::vector<int> diag;
    for (int i = 0; i < B; ++i) diag.push_back(i);
    Var loss = ops::scale(
        ops::add(ops::cross_entropy(logits, diag), ops::cross_entropy(ops::transpose(logits), diag)),
        0.5);
    opt.zero_grad();
    t.backward(loss);
    opt.step();
    const double lv = double(loss.val().data[0]);
    if (!std::isfinite(lv)) throw NumericError("contrastive_pretrain: non-finite loss");
    res.final_loss = lv;
    if (step % 10 == 0 || step + 1 == cfg.steps) res.loss_curve.emplace_back(step, lv);
  }
  return res;
}

MtpDecoder::MtpDecoder(ParamStore& ps, const std::string& name, const MtpDecoderConfig& cfg,
                       int vocab_size, RngStream& rng)
    : cfg_(cfg),
      vocab_(vocab_size),
      tok_emb_(ps, name + ".tok", vocab_size, cfg.hidden, rng),
      pos_emb_(ps, name + ".pos", cfg.max_len, cfg.hidden, rng),
      mem_proj_(ps, name + ".mem", cfg.memory_dim, cfg.hidden, rng),
      final_ln_(ps, name + ".ln", cfg.hidden),
      out_(ps, name + ".out", cfg.hidden, vocab_size, rng) {
  for (int i = 0; i < cfg.layers; ++i)
    blocks_.emplace_back(ps, name + ".blk" + std::to_string(i), cfg.hidden, cfg.heads, cfg.ff, rng);
}

Var MtpDecoder::logits_at_masks(Tape& t, const MaskedPrompt& masked, Var memory,
                                RngStream* drop_rng) const {
  if (masked.masked.empty()) throw ShapeError("mtp_decode: no masked positions");
  if (memory.cols() != cfg_.memory_dim)
    throw ShapeError(format("mtp_decode: memory dim %d, expected %d", memory.cols(),
                            cfg_.memory_dim));
  std::vector<int> pos;
  for (size_t i = 0; i < masked.ids.size(); ++i) pos.push_back(int(i) % cfg_.max_len);
  Var x = ops::add(tok_emb_(t, masked.ids), pos_emb_(t, pos));
  Var mem = mem_proj_(t, memory);
  for (const auto& blk : blocks_) x = blk(t, x, mem, drop_rng, cfg_.dropout);
  x = final_ln_(t, x);
  std::vector<int> mask_pos;
  for (auto& [p, orig] : masked.masked) mask_pos.push_back(p);
  Var at_masks = ops::gather_rows(x, mask_pos);
  return out_(t, at_masks);  // (num_masks, vocab)
}

Var mtp_loss(Tape& t, const MtpDecoder& dec, const MaskedPrompt& masked, Var memory,
             RngStream* drop_rng) {
  Var logits = dec.logits_at_masks(t, masked, memory, drop_rng);
  std::vector<int> targets;
  for (auto& [p, orig] : masked.masked) targets.push_back(orig);
  return ops::cross_entropy(logits, targets);
}

}  // namespace mlab
