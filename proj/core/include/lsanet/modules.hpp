#pragma once

#include <string>
#include <vector>

#include "lsanet/ops.hpp"
#include "lsanet/optim.hpp"
#include "lsanet/rng.hpp"

namespace lsanet {

template <class T>
struct SdwRecord;  // defined in lsa_layer.hpp

/// Everything a forward pass needs besides its inputs. Parameters are
/// immutable during a pass; the tape (when set) records for backward.
template <class T>
struct FwdCtx {
  Tape<T>* tape = nullptr;
  Mode mode = Mode::kInfer;
  Rng* rng = nullptr;                    // dropout stream (train mode)
  SdwRecord<T>* sdw_record = nullptr;    // optional SDW capture
};

/// Glorot-uniform for rank-2 weights (out, in).
template <class T>
Tensor<T> glorot_init(int64_t out_dim, int64_t in_dim, Rng& rng) {
  Tensor<T> w({out_dim, in_dim});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  T* p = w.data();
  for (int64_t i = 0; i < w.numel(); ++i)
    p[i] = static_cast<T>(rng.uniform(-bound, bound));
  w.requires_grad = true;
  return w;
}

/// Per-tensor init stream: independent of registration order, so flag
/// variants of one seed share weights for the modules they have in common.
inline Rng init_rng(uint64_t seed, const std::string& name) {
  return Rng(mix_seed(seed, hash_str(name)));
}

/// Channels-last batch norm with learnable scale/shift and running stats.
template <class T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.9);

  BatchNorm() = default;
  explicit BatchNorm(int64_t channels)
      : gamma(Tensor<T>::full({channels}, T(1))),
        beta(Tensor<T>::zeros({channels})),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {
    gamma.requires_grad = true;
    beta.requires_grad = true;
  }

  Tensor<T> forward(const Tensor<T>& x, FwdCtx<T>& ctx) {
    return ops::batch_norm(x, gamma, beta, running_mean, running_var, eps, momentum, ctx.mode,
                           ctx.tape);
  }

  void register_tensors(const std::string& prefix, TensorRegistry<T>& reg) {
    reg.add_learnable(prefix + "/gamma", gamma);
    reg.add_learnable(prefix + "/beta", beta);
    reg.add_state(prefix + "/running_mean", running_mean);
    reg.add_state(prefix + "/running_var", running_var);
  }
};

/// Shared-MLP stage: bias-free pointwise linear, batch norm, ReLU.
template <class T>
struct LinearBnRelu {
  Tensor<T> weight;  // (out, in)
  BatchNorm<T> bn;

  LinearBnRelu() = default;
  LinearBnRelu(int64_t out_dim, int64_t in_dim, uint64_t seed, const std::string& name)
      : bn(out_dim) {
    Rng rng = init_rng(seed, name);
    weight = glorot_init<T>(out_dim, in_dim, rng);
  }

  int64_t in_dim() const { return weight.dim(1); }
  int64_t out_dim() const { return weight.dim(0); }

  Tensor<T> forward(const Tensor<T>& x, FwdCtx<T>& ctx) {
    return ops::relu(bn.forward(ops::linear(x, weight, ctx.tape), ctx), ctx.tape);
  }

  void register_tensors(const std::string& prefix, TensorRegistry<T>& reg) {
    reg.add_learnable(prefix + "/weight", weight);
    bn.register_tensors(prefix + "/bn", reg);
  }
};

}  // namespace lsanet
