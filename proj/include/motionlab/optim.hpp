// optim.hpp — AdamW with linear-warmup + cosine-decay schedule.
#pragma once

#include <cmath>
#include <vector>

#include "motionlab/nn.hpp"

namespace mlab {

struct LrSchedule {
  double peak_lr = 2e-4;
  int warmup_steps = 0;
  int total_steps = 0;   // 0 = constant after warmup
  double min_lr = 0.0;

  // Learning rate applied at step number `step` (0-based). Warmup is linear
  // from zero, so step 0 trains with lr 0.
  double at(long step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return peak_lr * double(step) / double(warmup_steps);
    if (total_steps <= 0) return peak_lr;
    long s = step - warmup_steps;
    long span = total_steps - warmup_steps;
    if (span <= 0 || s >= span) return min_lr;
    double frac = double(s) / double(span);
    return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * frac));
  }
};

template <typename S>
class AdamWT {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  LrSchedule schedule;

  explicit AdamWT(std::vector<ParamT<S>*> params) : params_(std::move(params)) {
    states_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      states_[i].m.assign(params_[i]->value.numel(), S(0));
      states_[i].v.assign(params_[i]->value.numel(), S(0));
    }
  }

  long step_count() const { return step_; }
  double current_lr() const { return schedule.at(step_); }

  // One update over all parameters; consumes accumulated gradients.
  void step() {
    const double lr = schedule.at(step_);
    const long t = step_ + 1;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      ParamT<S>& p = *params_[pi];
      if (!p.value.grad)
        throw NumericError("adamw: missing gradient for parameter " + p.name);
      auto& g = *p.value.grad;
      auto& st = states_[pi];
      for (size_t i = 0; i < g.size(); ++i) {
        const double gi = double(g[i]);
        if (!std::isfinite(gi))
          throw NumericError("adamw: non-finite gradient in parameter " + p.name);
        st.m[i] = S(beta1 * double(st.m[i]) + (1.0 - beta1) * gi);
        st.v[i] = S(beta2 * double(st.v[i]) + (1.0 - beta2) * gi * gi);
        const double mhat = double(st.m[i]) / bc1;
        const double vhat = double(st.v[i]) / bc2;
        double upd = lr * (mhat / (std::sqrt(vhat) + eps));
        if (weight_decay > 0.0) upd += lr * weight_decay * double(p.value.data[i]);
        p.value.data[i] = S(double(p.value.data[i]) - upd);
      }
    }
    ++step_;
  }

  void zero_grad() {
    for (auto* p : params_) {
      p->value.ensure_grad();
      p->value.zero_grad();
    }
  }

 private:
  struct State {
    std::vector<S> m, v;
  };
  std::vector<ParamT<S>*> params_;
  std::vector<State> states_;
  long step_ = 0;
};

using AdamW = AdamWT<float>;

}  // namespace mlab
