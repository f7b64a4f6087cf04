#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lsanet/tensor.hpp"

namespace lsanet {

/// Named views into a module tree's tensors. `learnable` feeds the optimizer
/// and parameter counting; `state` (batch-norm running stats) is persisted but
/// never updated by gradients. Registration order is the construction order
/// and is stable, which fixes the optimizer's iteration order and the
/// checkpoint layout.
template <class T>
struct TensorRegistry {
  std::vector<std::pair<std::string, Tensor<T>*>> learnable;
  std::vector<std::pair<std::string, Tensor<T>*>> state;

  void add_learnable(std::string name, Tensor<T>& t) { learnable.emplace_back(std::move(name), &t); }
  void add_state(std::string name, Tensor<T>& t) { state.emplace_back(std::move(name), &t); }

  int64_t learnable_count() const {
    int64_t n = 0;
    for (auto& [name, t] : learnable) n += t->numel();
    return n;
  }
};

/// Stepped exponential decay with a lower clamp.
struct LrSchedule {
  double base_lr = 0.002;
  double decay_ratio = 0.7;
  int decay_interval_epochs = 40;
  double floor = 1e-5;

  double lr_for_epoch(int epoch) const {
    double lr = base_lr * std::pow(decay_ratio, static_cast<double>(epoch / decay_interval_epochs));
    return std::max(lr, floor);
  }
};

/// Adam with bias correction. Moment buffers are created lazily and are
/// shape-congruent with their parameters.
template <class T>
class Adam {
 public:
  LrSchedule schedule;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);

  explicit Adam(LrSchedule sched = {}) : schedule(sched) {}

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  /// One update over (param, grad) pairs at the effective lr for `epoch`.
  /// Rejects the whole step (params untouched) if any gradient is non-finite;
  /// returns false in that case.
  bool step(std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& params_grads, int epoch) {
    for (auto& [p, g] : params_grads) {
      LSANET_CHECK(p->shape() == g->shape(),
                   "adam: gradient shape " << shape_str(g->shape())
                                           << " does not match parameter " << shape_str(p->shape()));
      if (!g->all_finite()) return false;
    }
    ensure_moments(params_grads);
    ++t_;
    const T lr = static_cast<T>(schedule.lr_for_epoch(epoch));
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t_)));
    for (size_t i = 0; i < params_grads.size(); ++i) {
      T* p = params_grads[i].first->data();
      const T* g = params_grads[i].second->data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const int64_t n = params_grads[i].first->numel();
      for (int64_t j = 0; j < n; ++j) {
        m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
        v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + epsilon);
      }
    }
    return true;
  }

  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  void ensure_moments(const std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& pg) {
    if (!m_.empty()) {
      LSANET_CHECK(m_.size() == pg.size(), "adam: parameter set changed between steps");
      return;
    }
    for (auto& [p, g] : pg) {
      m_.push_back(Tensor<T>::zeros(p->shape()));
      v_.push_back(Tensor<T>::zeros(p->shape()));
    }
  }

  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace lsanet
