#pragma once

#include <string>
#include <utility>

#include "lsanet/lsa_layer.hpp"
#include "lsanet/modules.hpp"

namespace lsanet {

/// Spatial Feature Extractor stage. Lifts its spatial input (raw relative
/// coordinates at the first stage, the previous stage's state afterwards) to
/// a higher-dimensional representation, hands the combined tensor to the
/// backbone as the injected spatial channels, and pools a forward state for
/// the next stage.
///
/// combine = concatenation by default: inject = [lift(x), x], extent
/// lift_width + d_in. The projected-sum variant adds a linear projection of
/// the input to the lifted half instead (extent lift_width).
template <class T>
class SfeStage {
 public:
  SfeStage() = default;

  SfeStage(int64_t d_in, int64_t lift_width, bool projected_sum, uint64_t seed,
           const std::string& name)
      : d_in_(d_in),
        lift_width_(lift_width),
        projected_sum_(projected_sum),
        lift_(lift_width, d_in, seed, name + "/lift"),
        forward_(lift_width, projected_sum ? lift_width : lift_width + d_in, seed,
                 name + "/forward") {
    if (projected_sum_) {
      Rng rng = init_rng(seed, name + "/proj");
      proj_ = glorot_init<T>(lift_width, d_in, rng);
    }
  }

  int64_t in_dim() const { return d_in_; }
  int64_t inject_dim() const { return projected_sum_ ? lift_width_ : lift_width_ + d_in_; }
  int64_t state_dim() const { return lift_width_; }

  /// spatial_in (B, M, K, d_in) -> inject (B, M, K, inject_dim) plus the
  /// next-stage state (B, M, state_dim), pooled to centroids by an
  /// unmodulated max over K.
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& spatial_in, FwdCtx<T>& ctx) {
    LSANET_CHECK(spatial_in.rank() == 4 && spatial_in.dim(3) == d_in_,
                 "sfe: input " << shape_str(spatial_in.shape()) << " does not carry " << d_in_
                               << " channels");
    Tensor<T> lifted = lift_.forward(spatial_in, ctx);
    Tensor<T> inject = projected_sum_
                           ? ops::add(lifted, ops::linear(spatial_in, proj_, ctx.tape), ctx.tape)
                           : ops::concat(lifted, spatial_in, 3, ctx.tape);
    Tensor<T> state = ops::reduce_max(forward_.forward(inject, ctx), 2, ctx.tape).values;
    return {inject, state};
  }

  void register_tensors(const std::string& prefix, TensorRegistry<T>& reg) {
    lift_.register_tensors(prefix + "/lift", reg);
    forward_.register_tensors(prefix + "/forward", reg);
    if (projected_sum_) reg.add_learnable(prefix + "/proj", proj_);
  }

 private:
  int64_t d_in_ = 0;
  int64_t lift_width_ = 0;
  bool projected_sum_ = false;
  LinearBnRelu<T> lift_;
  LinearBnRelu<T> forward_;
  Tensor<T> proj_;
};

/// Widen backbone features with the injected spatial channels:
/// (B, M, K, F) + (B, M, K, D) -> (B, M, K, F+D). Either side may be
/// undefined (F = 0 at the first layer).
template <class T>
Tensor<T> inject_spatial(const Tensor<T>& x, const Tensor<T>& inject, Tape<T>* tape = nullptr) {
  if (!x.defined()) return inject;
  if (!inject.defined()) return x;
  return ops::concat(x, inject, 3, tape);
}

}  // namespace lsanet
