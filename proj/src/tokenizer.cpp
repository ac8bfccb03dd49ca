#include "motionlab/tokenizer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mlab {

namespace op = ops;

Scenario scenario_from_string(const std::string& s) {
  if (s == "discrete") return Scenario::kDiscrete;
  if (s == "continuous") return Scenario::kContinuous;
  throw ConfigError("unknown scenario: " + s + " (expected discrete|continuous)");
}

const char* scenario_name(Scenario s) {
  return s == Scenario::kDiscrete ? "discrete" : "continuous";
}

TrainStrategy strategy_from_string(const std::string& s) {
  if (s == "end-to-end") return TrainStrategy::kEndToEnd;
  if (s == "two-stage-freeze") return TrainStrategy::kTwoStageFreeze;
  if (s == "two-stage-finetune") return TrainStrategy::kTwoStageFinetune;
  if (s == "independent") return TrainStrategy::kIndependent;
  throw ConfigError("unknown training strategy: " + s);
}

const char* strategy_name(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::kEndToEnd: return "end-to-end";
    case TrainStrategy::kTwoStageFreeze: return "two-stage-freeze";
    case TrainStrategy::kTwoStageFinetune: return "two-stage-finetune";
    case TrainStrategy::kIndependent: return "independent";
  }
  return "?";
}

DualTokenizer::EncoderNet DualTokenizer::build_encoder(ParamStore& ps, const std::string& prefix,
                                                       RngStream& rng, bool causal) {
  EncoderNet net;
  const int C = cfg_.enc_channels;
  net.in = nn::Conv1dT<float>(ps, prefix + ".in", kMotionDim, C, 3, rng, 1, causal);
  net.r1a = nn::Conv1dT<float>(ps, prefix + ".r1a", C, C, 3, rng, 1, causal);
  net.r1b = nn::Conv1dT<float>(ps, prefix + ".r1b", C, C, 3, rng, 1, causal);
  net.r2a = nn::Conv1dT<float>(ps, prefix + ".r2a", C, C, 3, rng, 1, causal);
  net.r2b = nn::Conv1dT<float>(ps, prefix + ".r2b", C, C, 3, rng, 1, causal);
  for (int s = cfg_.exec_stride; s > 1; s /= 2) {
    net.down.emplace_back(ps, prefix + ".down" + std::to_string(net.down.size()), C, C, 4, rng, 2,
                          causal);
  }
  net.out = nn::Conv1dT<float>(ps, prefix + ".out", C, cfg_.feature_dim, 3, rng, 1, causal);
  return net;
}

namespace {

// stride-2 conv with kernel 4: halves even-length inputs
Var strided_conv(Tape& t, const nn::Conv1dT<float>& c, Var x, bool causal) {
  if (causal) return op::conv1d(x, t.use(*c.w), t.use(*c.b), 2, 3, 0);
  return op::conv1d(x, t.use(*c.w), t.use(*c.b), 2, 1, 1);
}

}  // namespace

Var DualTokenizer::run_encoder(Tape& t, const EncoderNet& net, const Tensor& frames) {
  check_finite(frames, "encoder input");
  if (frames.rank() != 2 || frames.dim(1) != kMotionDim)
    throw ShapeError("encode_shared: frames must be (T, " + std::to_string(kMotionDim) + ")");
  Var x = op::gelu(net.in(t, t.constant(frames)));
  Var h = op::gelu(net.r1a(t, x));
  x = op::add(x, net.r1b(t, h));
  h = op::gelu(net.r2a(t, x));
  x = op::add(x, net.r2b(t, h));
  for (const auto& d : net.down) x = op::gelu(strided_conv(t, d, x, causal_));
  return net.out(t, x);
}

DualTokenizer::DualTokenizer(const TokenizerConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  causal_ = cfg_.scenario == Scenario::kContinuous;
  cfg_.text.out_dim = cfg_.align_dim();
  cfg_.mtp.memory_dim = cfg_.align_dim();
  RngStream rng(mix_seed(init_seed, 0x70C3ULL));

  enc_ = build_encoder(exec_store_, "enc", rng, causal_);
  const int C = cfg_.enc_channels;
  dec_.in = nn::Conv1dT<float>(exec_store_, "dec.in", cfg_.feature_dim, C, 3, rng, 1, causal_);
  dec_.r1a = nn::Conv1dT<float>(exec_store_, "dec.r1a", C, C, 3, rng, 1, causal_);
  dec_.r1b = nn::Conv1dT<float>(exec_store_, "dec.r1b", C, C, 3, rng, 1, causal_);
  dec_.smooth = nn::Conv1dT<float>(exec_store_, "dec.smooth", C, C, 3, rng, 1, causal_);
  dec_.out = nn::Conv1dT<float>(exec_store_, "dec.out", C, kMotionDim, 3, rng, 1, causal_);
  if (cfg_.scenario == Scenario::kContinuous) {
    exec_mu_ = nn::LinearT<float>(exec_store_, "exec.mu", cfg_.feature_dim, cfg_.feature_dim, rng);
    exec_logsig_ =
        nn::LinearT<float>(exec_store_, "exec.logsig", cfg_.feature_dim, cfg_.feature_dim, rng);
  }

  reason_.in = nn::LinearT<float>(reason_store_, "reason.in", cfg_.feature_dim, cfg_.reason_hidden,
                                  rng);
  for (int i = 0; i < cfg_.reason_layers; ++i)
    reason_.blocks.emplace_back(reason_store_, "reason.blk" + std::to_string(i),
                                cfg_.reason_hidden, cfg_.reason_heads, cfg_.reason_ff, rng);
  reason_.down = nn::Conv1dT<float>(reason_store_, "reason.down", cfg_.reason_hidden,
                                    cfg_.reason_hidden, cfg_.reason_stride, rng, cfg_.reason_stride);
  if (cfg_.scenario == Scenario::kDiscrete) {
    reason_.out_code =
        nn::LinearT<float>(reason_store_, "reason.code", cfg_.reason_hidden, cfg_.feature_dim, rng);
  } else {
    reason_.out_mu = nn::LinearT<float>(reason_store_, "reason.mu", cfg_.reason_hidden,
                                        cfg_.latent_dim_res, rng);
    reason_.out_logsig = nn::LinearT<float>(reason_store_, "reason.logsig", cfg_.reason_hidden,
                                            cfg_.latent_dim_res, rng);
  }
  if (cfg_.strategy == TrainStrategy::kIndependent)
    indep_enc_ = build_encoder(reason_store_, "indep", rng, causal_);

  cb_exec_ = Codebook("exec", cfg_.codebook_exec, cfg_.feature_dim, rng, cfg_.ema_decay,
                      cfg_.revival_steps);
  cb_res_ = Codebook("res", cfg_.codebook_res,
                     cfg_.scenario == Scenario::kDiscrete ? cfg_.feature_dim : cfg_.latent_dim_res,
                     rng, cfg_.ema_decay, cfg_.revival_steps);

  const int vocab = Vocabulary::standard().size();
  text_enc_ = std::make_unique<TextEncoder>(text_store_, "text", cfg_.text, vocab, rng);
  mtp_dec_ = std::make_unique<MtpDecoder>(mtp_store_, "mtp", cfg_.mtp, vocab, rng);
}

Var DualTokenizer::encode_shared(Tape& t, const Tensor& frames, bool independent_branch) {
  if (independent_branch) {
    if (!indep_enc_) throw ConfigError("independent encoder requested but not configured");
    return run_encoder(t, *indep_enc_, frames);
  }
  return run_encoder(t, enc_, frames);
}

Var DualTokenizer::reason_project(Tape& t, Var f) {
  const int T = f.rows();
  if (T % cfg_.reason_stride != 0)
    throw ShapeError(format("reason_project: %d tokens not divisible by stride %d", T,
                            cfg_.reason_stride));
  Var h = reason_.in(t, f);
  Tensor mask = nn::causal_mask<float>(T);
  for (const auto& blk : reason_.blocks) h = blk(t, h, &mask);
  h = reason_.down(t, h);
  if (cfg_.scenario == Scenario::kDiscrete) return reason_.out_code(t, h);
  return reason_.out_mu(t, h);
}

Var DualTokenizer::decode(Tape& t, Var exec_latent) {
  Var x = op::gelu(dec_.in(t, exec_latent));
  Var h = op::gelu(dec_.r1a(t, x));
  x = op::add(x, dec_.r1b(t, h));
  if (cfg_.exec_stride > 1) {
    x = op::repeat_rows(x, cfg_.exec_stride);
    x = op::gelu(dec_.smooth(t, x));
  } else {
    x = op::gelu(dec_.smooth(t, x));
  }
  return dec_.out(t, x);
}

DualCodes DualTokenizer::tokenize(const Tensor& frames) {
  Tape t;
  Var f = encode_shared(t, frames);
  DualCodes out;
  if (cfg_.scenario == Scenario::kDiscrete) {
    out.ids_exec = cb_exec_.nearest(f.val());
    Var fr = reason_project(t, f);
    out.ids_res = cb_res_.nearest(fr.val());
    // quantized vectors for downstream consumers
    out.u_exec = Tensor({int(out.ids_exec.size()), cfg_.feature_dim});
    for (size_t i = 0; i < out.ids_exec.size(); ++i)
      for (int d = 0; d < cfg_.feature_dim; ++d)
        out.u_exec.at(int(i), d) = cb_exec_.codes().at(out.ids_exec[i], d);
    out.u_res = Tensor({int(out.ids_res.size()), cfg_.feature_dim});
    for (size_t i = 0; i < out.ids_res.size(); ++i)
      for (int d = 0; d < cfg_.feature_dim; ++d)
        out.u_res.at(int(i), d) = cb_res_.codes().at(out.ids_res[i], d);
  } else {
    Var mu_e = exec_mu_(t, f);
    out.u_exec = mu_e.val();
    Var mu_r = reason_project(t, f);
    out.u_res = mu_r.val();
  }
  return out;
}

Tensor DualTokenizer::decode_ids(const std::vector<int>& ids_exec) {
  if (cfg_.scenario != Scenario::kDiscrete)
    throw ConfigError("decode_ids: tokenizer is continuous");
  Tensor z({int(ids_exec.size()), cfg_.feature_dim});
  for (size_t i = 0; i < ids_exec.size(); ++i) {
    if (ids_exec[i] < 0 || ids_exec[i] >= cb_exec_.size())
      throw ShapeError(format("decode_ids: id %d out of codebook", ids_exec[i]));
    for (int d = 0; d < cfg_.feature_dim; ++d)
      z.at(int(i), d) = cb_exec_.codes().at(ids_exec[i], d);
  }
  return decode_latents(z);
}

Tensor DualTokenizer::decode_latents(const Tensor& u_exec) {
  if (u_exec.rank() != 2 || u_exec.dim(1) != cfg_.feature_dim)
    throw ShapeError("decode_latents: expected (T, feature_dim)");
  Tape t;
  return decode(t, t.constant(u_exec)).val();
}

Tensor DualTokenizer::reconstruct(const Tensor& frames) {
  DualCodes codes = tokenize(frames);
  if (cfg_.scenario == Scenario::kDiscrete) return decode_ids(codes.ids_exec);
  return decode_latents(codes.u_exec);
}

Tensor DualTokenizer::pooled_reasoning(const Tensor& frames) {
  DualCodes codes = tokenize(frames);
  const Tensor& u = codes.u_res;
  Tensor pooled({u.cols()});
  for (int i = 0; i < u.rows(); ++i)
    for (int j = 0; j < u.cols(); ++j) pooled.data[size_t(j)] += u.at(i, j);
  double norm = 0.0;
  for (auto& v : pooled.data) {
    v /= float(u.rows());
    norm += double(v) * double(v);
  }
  norm = std::sqrt(std::max(norm, 1e-24));
  for (auto& v : pooled.data) v = float(double(v) / norm);
  return pooled;
}

uint64_t DualTokenizer::exec_state_hash() const {
  uint64_t h = exec_store_.state_hash();
  h = fnv1a(&h, sizeof(h), cb_exec_.state_hash());
  return h;
}

void DualTokenizer::save(const std::string& path) const {
  Checkpoint ck;
  ck.add_params(const_cast<ParamStore&>(exec_store_), "exec/");
  ck.add_params(const_cast<ParamStore&>(reason_store_), "reason/");
  ck.add_params(const_cast<ParamStore&>(mtp_store_), "mtp/");
  ck.add_params(const_cast<ParamStore&>(text_store_), "text/");
  ck.add("codebook.exec", cb_exec_.codes());
  ck.add("codebook.res", cb_res_.codes());
  ck.save(path);

  nlohmann::json j;
  const auto& c = cfg_;
  j["scenario"] = scenario_name(c.scenario);
  j["feature_dim"] = c.feature_dim;
  j["enc_channels"] = c.enc_channels;
  j["exec_stride"] = c.exec_stride;
  j["reason_stride"] = c.reason_stride;
  j["codebook_exec"] = c.codebook_exec;
  j["codebook_res"] = c.codebook_res;
  j["latent_dim_res"] = c.latent_dim_res;
  j["reason_layers"] = c.reason_layers;
  j["reason_heads"] = c.reason_heads;
  j["reason_hidden"] = c.reason_hidden;
  j["reason_ff"] = c.reason_ff;
  j["variational_reasoning"] = c.variational_reasoning;
  j["kl_weight"] = c.kl_weight;
  j["commitment_beta"] = c.commitment_beta;
  j["ema_decay"] = c.ema_decay;
  j["revival_steps"] = c.revival_steps;
  j["rec_weight"] = c.rec_weight;
  j["lambda_align"] = c.lambda_align;
  j["lambda_mtp"] = c.lambda_mtp;
  j["mask_ratio"] = c.mask_ratio;
  j["strategy"] = strategy_name(c.strategy);
  j["text"] = {{"embed_dim", c.text.embed_dim}, {"layers", c.text.layers},
               {"heads", c.text.heads},         {"ff", c.text.ff},
               {"out_dim", c.text.out_dim},     {"max_len", c.text.max_len}};
  j["mtp"] = {{"layers", c.mtp.layers},   {"heads", c.mtp.heads},
              {"hidden", c.mtp.hidden},   {"ff", c.mtp.ff},
              {"dropout", c.mtp.dropout}, {"max_len", c.mtp.max_len},
              {"memory_dim", c.mtp.memory_dim}};
  j["vocab_hash"] = hash_hex(Vocabulary::standard().hash());
  std::ofstream f(path + ".json");
  if (!f) throw IoError("tokenizer: cannot write config sidecar: " + path + ".json");
  f << j.dump(2) << "\n";
}

DualTokenizer DualTokenizer::load(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw IoError("tokenizer: missing config sidecar: " + path + ".json");
  nlohmann::json j = nlohmann::json::parse(f);
  TokenizerConfig c;
  c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  c.feature_dim = j.at("feature_dim").get<int>();
  c.enc_channels = j.at("enc_channels").get<int>();
  c.exec_stride = j.at("exec_stride").get<int>();
  c.reason_stride = j.at("reason_stride").get<int>();
  c.codebook_exec = j.at("codebook_exec").get<int>();
  c.codebook_res = j.at("codebook_res").get<int>();
  c.latent_dim_res = j.at("latent_dim_res").get<int>();
  c.reason_layers = j.at("reason_layers").get<int>();
  c.reason_heads = j.at("reason_heads").get<int>();
  c.reason_hidden = j.at("reason_hidden").get<int>();
  c.reason_ff = j.at("reason_ff").get<int>();
  c.variational_reasoning = j.at("variational_reasoning").get<bool>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.commitment_beta = j.at("commitment_beta").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.revival_steps = j.at("revival_steps").get<int>();
  c.rec_weight = j.at("rec_weight").get<double>();
  c.lambda_align = j.at("lambda_align").get<double>();
  c.lambda_mtp = j.at("lambda_mtp").get<double>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  const auto& jt = j.at("text");
  c.text.embed_dim = jt.at("embed_dim").get<int>();
  c.text.layers = jt.at("layers").get<int>();
  c.text.heads = jt.at("heads").get<int>();
  c.text.ff = jt.at("ff").get<int>();
  c.text.max_len = jt.at("max_len").get<int>();
  const auto& jm = j.at("mtp");
  c.mtp.layers = jm.at("layers").get<int>();
  c.mtp.heads = jm.at("heads").get<int>();
  c.mtp.hidden = jm.at("hidden").get<int>();
  c.mtp.ff = jm.at("ff").get<int>();
  c.mtp.dropout = jm.at("dropout").get<double>();
  c.mtp.max_len = jm.at("max_len").get<int>();
  DualTokenizer tok(c, 0);
  Checkpoint ck = Checkpoint::load(path);
  ck.load_params(tok.exec_store_, "exec/");
  ck.load_params(tok.reason_store_, "reason/");
  ck.load_params(tok.mtp_store_, "mtp/");
  ck.load_params(tok.text_store_, "text/");
  tok.cb_exec_.codes() = ck.get("codebook.exec");
  tok.cb_res_.codes() = ck.get("codebook.res");
  return tok;
}

// ---------------- training ----------------

struct TokenizerTrainer {
  DualTokenizer& tok;
  const DatasetSplits& data;
  TokenizerConfig cfg;
  std::ostringstream csv;
  RngStream rng;
  bool cb_exec_init = false, cb_res_init = false;

  explicit TokenizerTrainer(DualTokenizer& t, const DatasetSplits& d)
      : tok(t), data(d), cfg(t.config()), rng(mix_seed(t.config().seed, 0x7201EULL)) {
    csv << "stage,step,rec,vq_commit,vq_codebook,kl,align,mtp,total\n";
  }

  Var kl_gaussian(Tape& t, Var mu, Var logsig) {
    // mean over elements of 0.5*(mu^2 + sigma^2 - 1 - 2*logsig)
    Var sig2 = op::exp_op(op::scale(logsig, 2.0));
    Var term = op::add(op::add(op::square(mu), sig2), op::scale(logsig, -2.0));
    return op::scale(op::add_scalar(op::mean(term), -1.0), 0.5);
  }

  Var sample_gaussian(Tape& t, Var mu, Var logsig, RngStream& noise) {
    Tensor eps(mu.val().shape);
    for (auto& v : eps.data) v = float(noise.gauss());
    return op::add(mu, op::mul(op::exp_op(logsig), t.constant(eps)));
  }

  // heads emit logsig relative to a -2 baseline so training starts with
  // small posterior noise
  Var shifted_logsig(Tape& t, const nn::LinearT<float>& head, Var h) {
    return op::add_scalar(head(t, h), -2.0);
  }

  struct StepAccum {
    TokenizerLosses losses;
    // features observed this step, for EMA updates
    std::vector<Tensor> exec_feats;
    std::vector<std::vector<int>> exec_ids;
    std::vector<Tensor> res_feats;
    std::vector<std::vector<int>> res_ids;
  };

  // Builds the per-sample loss graph. Which loss terms are active depends on
  // the stage: stage 1 = reconstruction (+exec regularizers); stage 2 =
  // semantic losses (+reasoning regularizers); end-to-end = both.
  Var sample_loss(Tape& t, const Sample& s, bool with_rec, bool with_semantic, StepAccum& acc,
                  RngStream& noise) {
    with_rec = with_rec && cfg.rec_weight > 0.0;
    std::vector<Var> terms;
    Var f = tok.encode_shared(t, s.motion.frames);
    Var exec_latent;  // what the decoder consumes
    if (with_rec) {
      if (cfg.scenario == Scenario::kDiscrete) {
        if (!cb_exec_init) {
          tok.cb_exec_.init_from_features(f.val(), rng);
          cb_exec_init = true;
        }
        QuantizeResult q = quantize_st(t, f, tok.cb_exec_, cfg.commitment_beta);
        exec_latent = q.quantized;
        acc.exec_feats.push_back(f.val());
        acc.exec_ids.push_back(q.ids);
        terms.push_back(q.commitment);
        acc.losses.vq_commit += double(q.commitment.val().data[0]);
        acc.losses.vq_codebook += q.codebook_term;
      } else {
        Var mu = tok.exec_mu_(t, f);
        Var logsig = shifted_logsig(t, tok.exec_logsig_, f);
        exec_latent = sample_gaussian(t, mu, logsig, noise);
        Var kl = op::scale(kl_gaussian(t, mu, logsig), cfg.kl_weight);
        terms.push_back(kl);
        acc.losses.kl += double(kl.val().data[0]);
      }
      Var xhat = tok.decode(t, exec_latent);
      Var rec = op::scale(op::mse(xhat, t.constant(s.motion.frames)), cfg.rec_weight);
      terms.push_back(rec);
      acc.losses.rec += double(rec.val().data[0]);
    }
    if (with_semantic) {
      Var f_for_reason = f;
      if (cfg.strategy == TrainStrategy::kIndependent)
        f_for_reason = tok.encode_shared(t, s.motion.frames, true);
      Var u_res;  // (T_res, align_dim)
      if (cfg.scenario == Scenario::kDiscrete) {
        Var fr = tok.reason_project(t, f_for_reason);
        if (!cb_res_init) {
          tok.cb_res_.init_from_features(fr.val(), rng);
          cb_res_init = true;
        }
        QuantizeResult q = quantize_st(t, fr, tok.cb_res_, cfg.commitment_beta);
        u_res = q.quantized;
        acc.res_feats.push_back(fr.val());
        acc.res_ids.push_back(q.ids);
        terms.push_back(q.commitment);
        acc.losses.vq_commit += double(q.commitment.val().data[0]);
        acc.losses.vq_codebook += q.codebook_term;
      } else {
        // reuse the reasoning trunk then both VAE heads
        Var h = tok.reason_.in(t, f_for_reason);
        Tensor mask = nn::causal_mask<float>(f_for_reason.rows());
        for (const auto& blk : tok.reason_.blocks) h = blk(t, h, &mask);
        h = tok.reason_.down(t, h);
        Var mu = tok.reason_.out_mu(t, h);
        if (cfg.variational_reasoning) {
          Var logsig = shifted_logsig(t, tok.reason_.out_logsig, h);
          u_res = sample_gaussian(t, mu, logsig, noise);
          Var kl = op::scale(kl_gaussian(t, mu, logsig), cfg.kl_weight);
          terms.push_back(kl);
          acc.losses.kl += double(kl.val().data[0]);
        } else {
          u_res = mu;
        }
      }
      // alignment: pool over positions, normalize, cosine against w
      if (cfg.lambda_align > 0.0) {
        Tensor w = tok.text_enc_->embed(s.prompt.ids);
        Var pooled = op::l2_normalize(op::mean_pool_rows(u_res));
        Var cosv = op::cosine_similarity(pooled, t.constant(w));
        Var align = op::scale(op::add_scalar(op::scale(cosv, -1.0), 1.0), cfg.lambda_align);
        terms.push_back(align);
        acc.losses.align += double(align.val().data[0]) / cfg.lambda_align;
      }
      if (cfg.lambda_mtp > 0.0) {
        MaskedPrompt masked = structured_mask(s.prompt, noise, cfg.mask_ratio);
        if (!masked.masked.empty()) {
          Var l = op::scale(mtp_loss(t, *tok.mtp_dec_, masked, u_res, &noise), cfg.lambda_mtp);
          terms.push_back(l);
          acc.losses.mtp += double(l.val().data[0]) / cfg.lambda_mtp;
        }
      }
    }
    if (terms.empty()) throw ConfigError("tokenizer training: no active loss terms");
    Var total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) total = op::add(total, terms[i]);
    return total;
  }

  void run_stage(const std::string& stage_name, int steps, std::vector<ParamT<float>*> params,
                 bool with_rec, bool with_semantic) {
    if (steps <= 0 || params.empty()) return;
    AdamW opt(params);
    opt.schedule = {cfg.lr, cfg.warmup, steps, cfg.lr * 0.05};
    opt.weight_decay = cfg.weight_decay;
    const int n = int(data.train.records.size());
    RngStream noise(mix_seed(cfg.seed, fnv1a(stage_name)));
    for (int step = 0; step < steps; ++step) {
      Tape t;
      StepAccum acc;
      const int B = std::min(cfg.batch, n);
      std::vector<int> idx = rng.sample_indices(n, B);
      Var total;
      for (int i : idx) {
        Var l = sample_loss(t, data.train.records[size_t(i)], with_rec, with_semantic, acc, noise);
        total = total.valid() ? op::add(total, l) : l;
      }
      total = op::scale(total, 1.0 / B);
      const double lv = double(total.val().data[0]);
      if (!std::isfinite(lv)) throw NumericError("tokenizer training: non-finite loss");
      opt.zero_grad();
      t.backward(total);
      opt.step();
      // EMA codebook updates after the gradient step
      if (!acc.exec_feats.empty()) ema_update_batch(tok.cb_exec_, acc.exec_feats, acc.exec_ids);
      if (!acc.res_feats.empty()) ema_update_batch(tok.cb_res_, acc.res_feats, acc.res_ids);
      if (step % 20 == 0 || step + 1 == steps) {
        csv << stage_name << "," << step << "," << acc.losses.rec / B << ","
            << acc.losses.vq_commit / B << "," << acc.losses.vq_codebook / B << ","
            << acc.losses.kl / B << "," << acc.losses.align / B << "," << acc.losses.mtp / B << ","
            << lv << "\n";
      }
    }
  }

  void ema_update_batch(Codebook& cb, const std::vector<Tensor>& feats,
                        const std::vector<std::vector<int>>& ids) {
    // concatenate rows in batch order so the update is order-deterministic
    int rows = 0;
    for (const auto& f : feats) rows += f.rows();
    Tensor all({rows, feats[0].cols()});
    std::vector<int> all_ids;
    all_ids.reserve(size_t(rows));
    int r = 0;
    for (size_t i = 0; i < feats.size(); ++i) {
      std::copy(feats[i].data.begin(), feats[i].data.end(),
                all.data.begin() + long(r) * feats[i].cols());
      all_ids.insert(all_ids.end(), ids[i].begin(), ids[i].end());
      r += feats[i].rows();
    }
    cb.ema_update(all, all_ids, rng);
  }
};

TokenizerTrainReport train_tokenizer(DualTokenizer& tok, const DatasetSplits& data) {
  TokenizerTrainer tr(tok, data);
  const TokenizerConfig& cfg = tok.config();
  TokenizerTrainReport rep;

  // text encoder pretraining (frozen afterwards)
  {
    ParamStore throwaway;
    RngStream r(mix_seed(cfg.seed, 0x7e47ULL));
    MotionEncoder me(throwaway, "pretrain_me", {64, cfg.align_dim()}, r);
    std::vector<ParamT<float>*> params = throwaway.all();
    for (auto* p : tok.text_params().all()) params.push_back(p);
    ContrastiveConfig cc;
    cc.steps = cfg.text_pretrain_steps;
    cc.seed = mix_seed(cfg.seed, 0x7e48ULL);
    cc.batch = 32;
    rep.text_pretrain_loss =
        contrastive_pretrain(params, me, tok.text_encoder(), data.train, cc).final_loss;
  }

  auto collect = [](std::initializer_list<ParamStore*> stores) {
    std::vector<ParamT<float>*> out;
    for (auto* s : stores)
      for (auto* p : s->all()) out.push_back(p);
    return out;
  };

  switch (cfg.strategy) {
    case TrainStrategy::kEndToEnd:
      tr.run_stage("joint", cfg.steps_stage1 + cfg.steps_stage2,
                   collect({&tok.exec_params(), &tok.reason_params(), &tok.mtp_params()}), true,
                   true);
      rep.exec_hash_after_stage1 = tok.exec_state_hash();
      break;
    case TrainStrategy::kTwoStageFreeze:
      tr.run_stage("exec", cfg.steps_stage1, collect({&tok.exec_params()}), true, false);
      rep.exec_hash_after_stage1 = tok.exec_state_hash();
      tr.run_stage("reason", cfg.steps_stage2,
                   collect({&tok.reason_params(), &tok.mtp_params()}), false, true);
      break;
    case TrainStrategy::kTwoStageFinetune:
      tr.run_stage("exec", cfg.steps_stage1, collect({&tok.exec_params()}), true, false);
      rep.exec_hash_after_stage1 = tok.exec_state_hash();
      tr.run_stage("finetune", cfg.steps_stage2,
                   collect({&tok.exec_params(), &tok.reason_params(), &tok.mtp_params()}), true,
                   true);
      break;
    case TrainStrategy::kIndependent:
      tr.run_stage("exec", cfg.steps_stage1, collect({&tok.exec_params()}), true, false);
      rep.exec_hash_after_stage1 = tok.exec_state_hash();
      tr.run_stage("reason", cfg.steps_stage2,
                   collect({&tok.reason_params(), &tok.mtp_params()}), false, true);
      break;
  }
  rep.exec_hash_after_stage2 = tok.exec_state_hash();
  rep.loss_csv = tr.csv.str();
  rep.val_mpjpe = eval_mpjpe(tok, data.val);
  if (cfg.scenario == Scenario::kDiscrete) {
    rep.perplexity_exec = codebook_health(tok, data.val, false).perplexity;
    rep.perplexity_res = codebook_health(tok, data.val, true).perplexity;
  }
  rep.mtp_acc = eval_mtp_accuracy(tok, data.val, mix_seed(cfg.seed, 11));
  rep.reasoning_r1 = eval_reasoning_r1(tok, data.val,
                                      std::min<int>(8, int(data.val.records.size())),
                                      mix_seed(cfg.seed, 12));
  rep.revivals = tok.exec_codebook().revival_count() + tok.reason_codebook().revival_count();
  return rep;
}

// ---------------- evaluation helpers ----------------

static double mpjpe_frames(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw ShapeError("mpjpe: shape mismatch");
  const int T = a.dim(0);
  double acc = 0.0;
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < kJoints; ++j) {
      const double dx = double(a.at(t, 2 * j)) - double(b.at(t, 2 * j));
      const double dy = double(a.at(t, 2 * j + 1)) - double(b.at(t, 2 * j + 1));
      acc += std::sqrt(dx * dx + dy * dy);
    }
  return acc / (double(T) * kJoints);
}

double eval_mpjpe(DualTokenizer& tok, const DatasetFile& data, int limit) {
  const int n = limit > 0 ? std::min<int>(limit, int(data.records.size()))
                          : int(data.records.size());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.records[size_t(i)];
    acc += mpjpe_frames(tok.reconstruct(s.motion.frames), s.motion.frames);
  }
  return acc / n;
}

double eval_mpjpe_random_codes(DualTokenizer& tok, const DatasetFile& data, uint64_t seed,
                               int limit) {
  RngStream rng(seed);
  const int n = limit > 0 ? std::min<int>(limit, int(data.records.size()))
                          : int(data.records.size());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.records[size_t(i)];
    const int T = tok.exec_len(s.motion.length());
    std::vector<int> ids(size_t(T), 0);
    for (auto& id : ids) id = int(rng.uniform_int(uint64_t(tok.exec_codebook().size())));
    acc += mpjpe_frames(tok.decode_ids(ids), s.motion.frames);
  }
  return acc / n;
}

double eval_mtp_accuracy(DualTokenizer& tok, const DatasetFile& data, uint64_t seed, int limit) {
  RngStream rng(seed);
  const int n = limit > 0 ? std::min<int>(limit, int(data.records.size()))
                          : int(data.records.size());
  long correct = 0, total = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.records[size_t(i)];
    MaskedPrompt masked = structured_mask(s.prompt, rng, tok.config().mask_ratio);
    if (masked.masked.empty()) continue;
    DualCodes codes = tok.tokenize(s.motion.frames);
    Tape t;
    Var mem = t.constant(codes.u_res);
    Var logits = tok.mtp_decoder().logits_at_masks(t, masked, mem);
    const Tensor& lv = logits.val();
    for (size_t m = 0; m < masked.masked.size(); ++m) {
      int best = 0;
      for (int v = 1; v < lv.cols(); ++v)
        if (lv.at(int(m), v) > lv.at(int(m), best)) best = v;
      if (best == masked.masked[m].second) ++correct;
      ++total;
    }
  }
  return total > 0 ? double(correct) / double(total) : 0.0;
}

double eval_reasoning_r1(DualTokenizer& tok, const DatasetFile& data, int pool, uint64_t seed,
                         int limit) {
  RngStream rng(seed);
  const int n = limit > 0 ? std::min<int>(limit, int(data.records.size()))
                          : int(data.records.size());
  if (n < pool) throw ConfigError("eval_reasoning_r1: dataset smaller than pool");
  long hits = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = data.records[size_t(i)];
    Tensor pooled = tok.pooled_reasoning(s.motion.frames);
    // candidate pool: the true caption plus pool-1 distractors
    std::vector<int> cands = {i};
    while (int(cands.size()) < pool) {
      int j = int(rng.uniform_int(uint64_t(n)));
      if (j == i) continue;
      if (data.records[size_t(j)].prompt.surface == s.prompt.surface) continue;
      cands.push_back(j);
    }
    double best = -2.0;
    int best_k = 0;
    for (size_t k = 0; k < cands.size(); ++k) {
      Tensor w = tok.text_encoder().embed(data.records[size_t(cands[k])].prompt.ids);
      double dot = 0.0;
      for (size_t d = 0; d < w.data.size(); ++d) dot += double(w.data[d]) * double(pooled.data[d]);
      if (dot > best) {
        best = dot;
        best_k = int(k);
      }
    }
    if (best_k == 0) ++hits;
  }
  return double(hits) / n;
}

CodebookHealth codebook_health(DualTokenizer& tok, const DatasetFile& data, bool reasoning) {
  Codebook& cb = reasoning ? tok.reason_codebook() : tok.exec_codebook();
  cb.reset_usage();
  std::vector<double> usage(size_t(cb.size()), 0.0);
  for (const auto& rec : data.records) {
    DualCodes codes = tok.tokenize(rec.motion.frames);
    const auto& ids = reasoning ? codes.ids_res : codes.ids_exec;
    for (int id : ids) usage[size_t(id)] += 1.0;
  }
  CodebookHealth h;
  h.perplexity = usage_perplexity(usage);
  for (double u : usage)
    if (u == 0.0) ++h.dead_codes;
  h.revivals = cb.revival_count();
  return h;
}

}  // namespace mlab
