// quantize.hpp — EMA vector quantizer with straight-through estimator.
#pragma once

#include <string>
#include <vector>

#include "motionlab/ops.hpp"
#include "motionlab/rng.hpp"

namespace mlab {

// Learnable code matrix updated by exponential moving averages (no gradient
// path into the codes). Tracks usage for perplexity and revives codes that
// stay dead too long.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::string name, int n, int dim, RngStream& rng, double ema_decay = 0.99,
           int revival_steps = 256);

  int size() const { return n_; }
  int dim() const { return dim_; }
  const Tensor& codes() const { return codes_; }
  Tensor& codes() { return codes_; }
  const std::string& name() const { return name_; }

  // argmin_k ||row - z_k||_2 per feature row; ties resolve to the lowest
  // index. Distances accumulate in double.
  std::vector<int> nearest(const Tensor& features) const;

  // Replace codes with randomly drawn feature rows (data-dependent init).
  void init_from_features(const Tensor& features, RngStream& rng);

  // One EMA update from a batch of features and their assignments. Also
  // advances dead-code counters and revives stale codes from the batch.
  // Returns the number of revived codes.
  int ema_update(const Tensor& features, const std::vector<int>& ids, RngStream& rng);

  // exp(entropy) of the usage histogram accumulated since the last reset.
  double perplexity() const;
  void reset_usage();
  long revival_count() const { return revivals_; }

  uint64_t state_hash() const;

 private:
  std::string name_;
  int n_ = 0, dim_ = 0;
  double decay_ = 0.99;
  int revival_steps_ = 256;
  Tensor codes_;                     // (n, dim)
  std::vector<double> ema_count_;    // per code
  Tensor ema_sum_;                   // (n, dim)
  std::vector<int> unused_steps_;    // per code
  std::vector<double> usage_;        // histogram for perplexity
  long revivals_ = 0;
};

// Tape-side quantization: quantized output follows the straight-through rule
// (backward is identity into `features`), commitment loss carries the only
// gradient; the codebook term is reported for logging (EMA updates the codes).
struct QuantizeResult {
  std::vector<int> ids;
  Var quantized;       // straight-through
  Var commitment;      // beta * ||f - sg(z)||^2 (scalar)
  double codebook_term = 0.0;  // ||sg(f) - z||^2 value
};

QuantizeResult quantize_st(Tape& tape, Var features, const Codebook& cb, double beta);

double usage_perplexity(const std::vector<double>& counts);

}  // namespace mlab
