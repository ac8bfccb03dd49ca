#include "motionlab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

namespace mlab {

EvaluatorModel::EvaluatorModel(const EvaluatorConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  RngStream rng(mix_seed(init_seed, 0xE7A1ULL));
  motion_enc_ = std::make_unique<MotionEncoder>(store_, "ev_motion",
                                                MotionEncoderConfig{64, cfg.feature_dim}, rng);
  TextEncoderConfig tc;
  tc.embed_dim = 64;
  tc.layers = 2;
  tc.heads = 4;
  tc.ff = 128;
  tc.out_dim = cfg.feature_dim;
  text_enc_ = std::make_unique<TextEncoder>(store_, "ev_text", tc, Vocabulary::standard().size(),
                                            rng);
}

double EvaluatorModel::train(const DatasetFile& train_split) {
  ContrastiveConfig cc;
  cc.steps = cfg_.train_steps;
  cc.batch = cfg_.batch;
  cc.lr = cfg_.lr;
  cc.seed = cfg_.seed;
  return contrastive_pretrain(store_.all(), *motion_enc_, *text_enc_, train_split, cc).final_loss;
}

Tensor EvaluatorModel::motion_features(const Tensor& frames) const {
  return motion_enc_->embed(frames);
}

Tensor EvaluatorModel::text_features(const std::vector<int>& ids) const {
  return text_enc_->embed(ids);
}

void EvaluatorModel::save(const std::string& path) const {
  Checkpoint ck;
  ck.add_params(const_cast<ParamStore&>(store_), "ev/");
  ck.save(path);
  nlohmann::json j;
  j["feature_dim"] = cfg_.feature_dim;
  j["train_steps"] = cfg_.train_steps;
  j["batch"] = cfg_.batch;
  j["lr"] = cfg_.lr;
  j["seed"] = cfg_.seed;
  std::ofstream f(path + ".json");
  if (!f) throw IoError("evaluator: cannot write config sidecar");
  f << j.dump(2) << "\n";
}

EvaluatorModel EvaluatorModel::load(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw IoError("evaluator: missing config sidecar: " + path + ".json");
  nlohmann::json j = nlohmann::json::parse(f);
  EvaluatorConfig cfg;
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.train_steps = j.at("train_steps").get<int>();
  cfg.batch = j.at("batch").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  EvaluatorModel ev(cfg, 0);
  Checkpoint ck = Checkpoint::load(path);
  ck.load_params(ev.store_, "ev/");
  return ev;
}

namespace {

// Jacobi eigendecomposition of a symmetric matrix (column eigenvectors).
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
  eigvecs.assign(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigvecs[size_t(i) * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[size_t(p) * n + q] * a[size_t(p) * n + q];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[size_t(p) * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[size_t(p) * n + p], aqq = a[size_t(q) * n + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[size_t(k) * n + p], akq = a[size_t(k) * n + q];
          a[size_t(k) * n + p] = c * akp - s * akq;
          a[size_t(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[size_t(p) * n + k], aqk = a[size_t(q) * n + k];
          a[size_t(p) * n + k] = c * apk - s * aqk;
          a[size_t(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = eigvecs[size_t(k) * n + p], vkq = eigvecs[size_t(k) * n + q];
          eigvecs[size_t(k) * n + p] = c * vkp - s * vkq;
          eigvecs[size_t(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(size_t(n));
  for (int i = 0; i < n; ++i) eigvals[size_t(i)] = a[size_t(i) * n + i];
}

// Symmetric positive-semidefinite square root via eigendecomposition with
// negative-eigenvalue clamping at the stated tolerance.
std::vector<double> sym_sqrt(std::vector<double> m, int n, const char* what) {
  std::vector<double> vals, vecs;
  jacobi_eigen(m, n, vals, vecs);
  for (double& v : vals) {
    if (v < -1e-8)
      throw NumericError(std::string(what) +
                         ": covariance far from PSD; gather more samples");
    v = v > 0.0 ? std::sqrt(v) : 0.0;
  }
  std::vector<double> out(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k)
        acc += vecs[size_t(i) * n + k] * vals[size_t(k)] * vecs[size_t(j) * n + k];
      out[size_t(i) * n + j] = acc;
    }
  return out;
}

struct Moments {
  std::vector<double> mean;
  std::vector<double> cov;
  int n = 0, d = 0;
};

Moments moments(const Tensor& feats) {
  Moments m;
  m.n = feats.rows();
  m.d = feats.cols();
  m.mean.assign(size_t(m.d), 0.0);
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.d; ++j) m.mean[size_t(j)] += double(feats.at(i, j));
  for (auto& v : m.mean) v /= m.n;
  m.cov.assign(size_t(m.d) * m.d, 0.0);
  for (int i = 0; i < m.n; ++i)
    for (int a = 0; a < m.d; ++a) {
      const double da = double(feats.at(i, a)) - m.mean[size_t(a)];
      for (int b = 0; b < m.d; ++b)
        m.cov[size_t(a) * m.d + b] += da * (double(feats.at(i, b)) - m.mean[size_t(b)]);
    }
  const double denom = std::max(1, m.n - 1);
  for (auto& v : m.cov) v /= denom;
  return m;
}

}  // namespace

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
  if (feats_a.cols() != feats_b.cols())
    throw ShapeError("frechet_distance: feature dims differ");
  const int d = feats_a.cols();
  if (feats_a.rows() < d + 1 || feats_b.rows() < d + 1)
    throw ShapeError(format("frechet_distance: need at least %d samples per side", d + 1));
  Moments A = moments(feats_a), B = moments(feats_b);
  double mean_term = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = A.mean[size_t(j)] - B.mean[size_t(j)];
    mean_term += diff * diff;
  }
  // tr(Sa + Sb - 2 (Sa Sb)^{1/2}) with (Sa Sb)^{1/2} = Ra (Ra Sb Ra)^{1/2} Ra^{-1};
  // the trace only needs the middle factor.
  std::vector<double> ra = sym_sqrt(A.cov, d, "frechet");
  std::vector<double> inner(size_t(d) * d, 0.0);
  std::vector<double> tmp(size_t(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += ra[size_t(i) * d + k] * B.cov[size_t(k) * d + j];
      tmp[size_t(i) * d + j] = acc;
    }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += tmp[size_t(i) * d + k] * ra[size_t(k) * d + j];
      inner[size_t(i) * d + j] = acc;
    }
  std::vector<double> mid = sym_sqrt(std::move(inner), d, "frechet");
  double tr = 0.0;
  for (int i = 0; i < d; ++i)
    tr += A.cov[size_t(i) * d + i] + B.cov[size_t(i) * d + i] - 2.0 * mid[size_t(i) * d + i];
  return mean_term + tr;
}

RPrecision r_precision(const Tensor& motion_feats, const Tensor& text_feats,
                       const std::vector<std::string>& captions, int pool_size, uint64_t seed) {
  const int n = motion_feats.rows();
  if (n < pool_size) throw ConfigError("r_precision: fewer samples than pool size");
  if (text_feats.rows() != n || int(captions.size()) != n)
    throw ShapeError("r_precision: feature/caption counts differ");
  const int d = motion_feats.cols();
  RngStream rng(mix_seed(seed, 0x52505245ULL));
  long hits1 = 0, hits2 = 0, hits3 = 0;
  for (int i = 0; i < n; ++i) {
    // candidate captions: the true one plus pool-1 distinct distractors
    std::vector<int> cands = {i};
    std::set<std::string> seen = {captions[size_t(i)]};
    int guard = 0;
    while (int(cands.size()) < pool_size) {
      const int j = int(rng.uniform_int(uint64_t(n)));
      if (seen.count(captions[size_t(j)])) {
        if (++guard > 10000)
          throw ConfigError("r_precision: not enough distinct captions for the pool");
        continue;
      }
      seen.insert(captions[size_t(j)]);
      cands.push_back(j);
    }
    std::vector<std::pair<double, int>> ranked;
    for (size_t k = 0; k < cands.size(); ++k) {
      double d2 = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff =
            double(motion_feats.at(i, c)) - double(text_feats.at(cands[k], c));
        d2 += diff * diff;
      }
      ranked.emplace_back(d2, int(k));
    }
    std::sort(ranked.begin(), ranked.end());
    int rank = 0;
    for (size_t k = 0; k < ranked.size(); ++k)
      if (ranked[k].second == 0) rank = int(k);
    if (rank < 1) ++hits1;
    if (rank < 2) ++hits2;
    if (rank < 3) ++hits3;
  }
  return {double(hits1) / n, double(hits2) / n, double(hits3) / n};
}

double mpjpe(const Tensor& a, const Tensor& b) {
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

double diversity(const Tensor& feats, int n_pairs, uint64_t seed) {
  const int n = feats.rows();
  if (n < 2 * n_pairs)
    throw ConfigError(format("diversity: need at least %d samples, have %d", 2 * n_pairs, n));
  RngStream rng(mix_seed(seed, 0xD1BBULL));
  std::vector<int> idx = rng.sample_indices(n, 2 * n_pairs);
  double acc = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const int i = idx[size_t(2 * p)], j = idx[size_t(2 * p + 1)];
    double d2 = 0.0;
    for (int c = 0; c < feats.cols(); ++c) {
      const double diff = double(feats.at(i, c)) - double(feats.at(j, c));
      d2 += diff * diff;
    }
    acc += std::sqrt(d2);
  }
  return acc / n_pairs;
}

double mm_dist(const Tensor& motion_feats, const Tensor& text_feats) {
  if (motion_feats.shape != text_feats.shape) throw ShapeError("mm_dist: shape mismatch");
  double acc = 0.0;
  for (int i = 0; i < motion_feats.rows(); ++i) {
    double d2 = 0.0;
    for (int c = 0; c < motion_feats.cols(); ++c) {
      const double diff = double(motion_feats.at(i, c)) - double(text_feats.at(i, c));
      d2 += diff * diff;
    }
    acc += std::sqrt(d2);
  }
  return acc / motion_feats.rows();
}

double silhouette_score(const Tensor& feats, const std::vector<int>& labels) {
  const int n = feats.rows();
  if (int(labels.size()) != n) throw ShapeError("silhouette: label count mismatch");
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw ConfigError("silhouette: need at least two labels");
  // pairwise distances
  std::vector<double> dist(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < feats.cols(); ++c) {
        const double diff = double(feats.at(i, c)) - double(feats.at(j, c));
        d2 += diff * diff;
      }
      dist[size_t(i) * n + j] = dist[size_t(j) * n + i] = std::sqrt(d2);
    }
  double total = 0.0;
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    double a = 0.0;
    int na = 0;
    std::map<int, std::pair<double, int>> other;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[size_t(j)] == labels[size_t(i)]) {
        a += dist[size_t(i) * n + j];
        ++na;
      } else {
        auto& o = other[labels[size_t(j)]];
        o.first += dist[size_t(i) * n + j];
        ++o.second;
      }
    }
    if (na == 0 || other.empty()) continue;  // singleton cluster contributes 0
    a /= na;
    double b = 1e300;
    for (auto& [lab, sum] : other) b = std::min(b, sum.first / sum.second);
    total += (b - a) / std::max(a, b);
    ++counted;
  }
  return counted > 0 ? total / counted : 0.0;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["frechet"] = frechet;
  j["r_precision"] = {{"top1", rp.top1}, {"top2", rp.top2}, {"top3", rp.top3}};
  j["mm_dist"] = mm_dist;
  j["diversity"] = diversity;
  if (mpjpe >= 0.0) j["mpjpe"] = mpjpe;
  if (acc >= 0.0) j["acc"] = acc;
  j["n_gen"] = n_gen;
  j["n_ref"] = n_ref;
  j["evaluator_hash"] = hash_hex(evaluator_hash);
  j["seed"] = seed;
  return j.dump(2);
}

MetricReport evaluate_generation(const EvaluatorModel& ev,
                                 const std::vector<Tensor>& generated_frames,
                                 const std::vector<const Sample*>& prompts_used,
                                 const DatasetFile& reference, int pool_size, int min_samples,
                                 int diversity_pairs, uint64_t seed) {
  if (generated_frames.size() != prompts_used.size())
    throw ShapeError("evaluate_generation: frames/prompts count mismatch");
  if (int(generated_frames.size()) < min_samples)
    throw ConfigError(format("evaluate_generation: need >= %d generated samples, have %d",
                             min_samples, int(generated_frames.size())));
  if (int(reference.records.size()) < min_samples)
    throw ConfigError(format("evaluate_generation: need >= %d reference samples, have %d",
                             min_samples, int(reference.records.size())));
  const int d = ev.config().feature_dim;
  const int ng = int(generated_frames.size());
  const int nr = int(reference.records.size());

  Tensor gen_feats({ng, d}), text_feats({ng, d}), ref_feats({nr, d});
  std::vector<std::string> captions;
  for (int i = 0; i < ng; ++i) {
    Tensor mf = ev.motion_features(generated_frames[size_t(i)]);
    Tensor tf = ev.text_features(prompts_used[size_t(i)]->prompt.ids);
    for (int c = 0; c < d; ++c) {
      gen_feats.at(i, c) = mf.data[size_t(c)];
      text_feats.at(i, c) = tf.data[size_t(c)];
    }
    captions.push_back(prompts_used[size_t(i)]->prompt.surface);
  }
  for (int i = 0; i < nr; ++i) {
    Tensor rf = ev.motion_features(reference.records[size_t(i)].motion.frames);
    for (int c = 0; c < d; ++c) ref_feats.at(i, c) = rf.data[size_t(c)];
  }

  MetricReport rep;
  rep.frechet = frechet_distance(gen_feats, ref_feats);
  rep.rp = r_precision(gen_feats, text_feats, captions, pool_size, seed);
  rep.mm_dist = mm_dist(gen_feats, text_feats);
  rep.diversity = diversity(gen_feats, diversity_pairs, seed);
  rep.n_gen = ng;
  rep.n_ref = nr;
  rep.evaluator_hash = ev.weight_hash();
  rep.seed = seed;
  return rep;
}

}  // namespace mlab
