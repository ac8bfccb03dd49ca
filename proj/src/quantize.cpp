#include "motionlab/quantize.hpp"

#include <cmath>

namespace mlab {

Codebook::Codebook(std::string name, int n, int dim, RngStream& rng, double ema_decay,
                   int revival_steps)
    : name_(std::move(name)), n_(n), dim_(dim), decay_(ema_decay), revival_steps_(revival_steps) {
  if (n <= 0 || dim <= 0) throw ConfigError("codebook: size and dim must be positive");
  codes_ = Tensor::randn({n, dim}, rng, 0.5);
  ema_count_.assign(size_t(n), 0.0);
  ema_sum_ = Tensor({n, dim});
  for (int k = 0; k < n; ++k)
    for (int d = 0; d < dim; ++d) ema_sum_.at(k, d) = codes_.at(k, d) * 0.1f;
  for (auto& c : ema_count_) c = 0.1;
  unused_steps_.assign(size_t(n), 0);
  usage_.assign(size_t(n), 0.0);
}

std::vector<int> Codebook::nearest(const Tensor& features) const {
  if (n_ == 0) throw ShapeError("quantize: empty codebook");
  if (features.cols() != dim_)
    throw ShapeError(format("quantize: feature dim %d vs code dim %d", features.cols(), dim_));
  const int R = features.rows();
  // codes transposed to (dim, n) so the distance accumulation runs over
  // codes; the summation order over dims is unchanged.
  std::vector<double> ct(size_t(dim_) * n_);
  for (int k = 0; k < n_; ++k)
    for (int d = 0; d < dim_; ++d)
      ct[size_t(d) * n_ + k] = double(codes_.data[size_t(k) * dim_ + d]);
  std::vector<int> ids(size_t(R), 0);
#pragma omp parallel for schedule(static) num_threads(kernels::threads())
  for (int i = 0; i < R; ++i) {
    const float* f = features.data.data() + size_t(i) * dim_;
    std::vector<double> dist(size_t(n_), 0.0);
    for (int d = 0; d < dim_; ++d) {
      const double fd = double(f[d]);
      const double* zt = ct.data() + size_t(d) * n_;
      for (int k = 0; k < n_; ++k) {
        const double diff = fd - zt[k];
        dist[size_t(k)] += diff * diff;
      }
    }
    int best_k = 0;
    for (int k = 1; k < n_; ++k)
      if (dist[size_t(k)] < dist[size_t(best_k)]) best_k = k;
    ids[size_t(i)] = best_k;
  }
  return ids;
}

void Codebook::init_from_features(const Tensor& features, RngStream& rng) {
  const int R = features.rows();
  if (R == 0) throw ShapeError("codebook init: no features");
  for (int k = 0; k < n_; ++k) {
    const int src = int(rng.uniform_int(uint64_t(R)));
    for (int d = 0; d < dim_; ++d) {
      codes_.at(k, d) = features.at(src, d);
      ema_sum_.at(k, d) = codes_.at(k, d) * 0.1f;
    }
    ema_count_[size_t(k)] = 0.1;
    unused_steps_[size_t(k)] = 0;
  }
}

int Codebook::ema_update(const Tensor& features, const std::vector<int>& ids, RngStream& rng) {
  const int R = features.rows();
  std::vector<double> count(size_t(n_), 0.0);
  std::vector<double> sum(size_t(n_) * size_t(dim_), 0.0);
  for (int i = 0; i < R; ++i) {
    const int k = ids[size_t(i)];
    count[size_t(k)] += 1.0;
    usage_[size_t(k)] += 1.0;
    const float* f = features.data.data() + size_t(i) * dim_;
    double* s = sum.data() + size_t(k) * dim_;
    for (int d = 0; d < dim_; ++d) s[d] += double(f[d]);
  }
  for (int k = 0; k < n_; ++k) {
    ema_count_[size_t(k)] = decay_ * ema_count_[size_t(k)] + (1.0 - decay_) * count[size_t(k)];
    for (int d = 0; d < dim_; ++d) {
      const double m = decay_ * double(ema_sum_.at(k, d)) + (1.0 - decay_) * sum[size_t(k) * dim_ + d];
      ema_sum_.at(k, d) = float(m);
      if (ema_count_[size_t(k)] > 1e-5) codes_.at(k, d) = float(m / ema_count_[size_t(k)]);
    }
    unused_steps_[size_t(k)] = count[size_t(k)] > 0.0 ? 0 : unused_steps_[size_t(k)] + 1;
  }
  // revive codes unused for too long from random batch rows
  int revived = 0;
  for (int k = 0; k < n_; ++k) {
    if (unused_steps_[size_t(k)] < revival_steps_) continue;
    const int src = int(rng.uniform_int(uint64_t(R)));
    for (int d = 0; d < dim_; ++d) {
      codes_.at(k, d) = features.at(src, d);
      ema_sum_.at(k, d) = codes_.at(k, d) * 0.1f;
    }
    ema_count_[size_t(k)] = 0.1;
    unused_steps_[size_t(k)] = 0;
    ++revived;
    ++revivals_;
  }
  return revived;
}

double usage_perplexity(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double p = c / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

double Codebook::perplexity() const { return usage_perplexity(usage_); }

void Codebook::reset_usage() { usage_.assign(size_t(n_), 0.0); }

uint64_t Codebook::state_hash() const {
  uint64_t h = fnv1a(name_);
  h = fnv1a(codes_.data.data(), codes_.data.size() * sizeof(float), h);
  return h;
}

QuantizeResult quantize_st(Tape& tape, Var features, const Codebook& cb, double beta) {
  // snapshot: val() references the tape's node storage, which reallocates as
  // ops are appended below
  const Tensor f = features.val();
  QuantizeResult out;
  out.ids = cb.nearest(f);
  Tensor q({f.rows(), cb.dim()});
  for (int i = 0; i < f.rows(); ++i)
    for (int d = 0; d < cb.dim(); ++d) q.at(i, d) = cb.codes().at(out.ids[size_t(i)], d);
  double cb_term = 0.0;
  for (size_t i = 0; i < f.data.size(); ++i) {
    const double d = double(q.data[i]) - double(f.data[i]);
    cb_term += d * d;
  }
  out.codebook_term = cb_term / double(f.data.size());
  Var q_const = tape.constant(std::move(q));
  out.quantized = ops::straight_through(features, q_const);
  out.commitment = ops::scale(ops::mse(features, q_const), beta);
  return out;
}

}  // namespace mlab
