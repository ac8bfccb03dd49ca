// evalsuite.hpp — frozen contrastive evaluator, distribution metrics,
// retrieval metrics, and the latent-space probes.
#pragma once

#include "motionlab/textmodel.hpp"
#include "motionlab/tokenizer.hpp"

namespace mlab {

struct EvaluatorConfig {
  int feature_dim = 32;
  int train_steps = 700;
  int batch = 32;
  double lr = 1e-3;
  uint64_t seed = 17;
};

// Motion and text encoders trained contrastively into a shared unit-norm
// feature space, then frozen. Every metric report carries the weight hash.
class EvaluatorModel {
 public:
  EvaluatorModel(const EvaluatorConfig& cfg, uint64_t init_seed);

  double train(const DatasetFile& train_split);  // returns final loss
  Tensor motion_features(const Tensor& frames) const;
  Tensor text_features(const std::vector<int>& ids) const;

  uint64_t weight_hash() const { return const_cast<ParamStore&>(store_).state_hash(); }
  const EvaluatorConfig& config() const { return cfg_; }

  void save(const std::string& path) const;
  static EvaluatorModel load(const std::string& path);

 private:
  EvaluatorConfig cfg_;
  ParamStore store_;
  std::unique_ptr<MotionEncoder> motion_enc_;
  std::unique_ptr<TextEncoder> text_enc_;
};

// Feature matrices are (N, d) row-major.
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

struct RPrecision {
  double top1 = 0, top2 = 0, top3 = 0;
};
// Ranks each motion's true caption among `pool_size` candidates by Euclidean
// distance in evaluator space. Pools with duplicate captions are re-drawn.
RPrecision r_precision(const Tensor& motion_feats, const Tensor& text_feats,
                       const std::vector<std::string>& captions, int pool_size, uint64_t seed);

double mpjpe(const Tensor& a, const Tensor& b);

double diversity(const Tensor& feats, int n_pairs, uint64_t seed);
double mm_dist(const Tensor& motion_feats, const Tensor& text_feats);

// Mean silhouette coefficient (Euclidean) of rows under integer labels.
double silhouette_score(const Tensor& feats, const std::vector<int>& labels);

struct MetricReport {
  double frechet = 0.0;
  RPrecision rp;
  double mm_dist = 0.0;
  double diversity = 0.0;
  double mpjpe = -1.0;    // reconstruction context only
  double acc = -1.0;      // masked-text accuracy, tokenizer context
  int n_gen = 0, n_ref = 0;
  uint64_t evaluator_hash = 0;
  uint64_t seed = 0;
  std::string to_json() const;
};

// Evaluator-space metrics for a set of generated motions vs a reference set.
MetricReport evaluate_generation(const EvaluatorModel& ev,
                                 const std::vector<Tensor>& generated_frames,
                                 const std::vector<const Sample*>& prompts_used,
                                 const DatasetFile& reference, int pool_size, int min_samples,
                                 int diversity_pairs, uint64_t seed);

}  // namespace mlab
