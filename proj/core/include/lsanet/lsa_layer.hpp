#pragma once

#include <string>
#include <vector>

#include "lsanet/geometry.hpp"
#include "lsanet/modules.hpp"

// Local Spatial Aware layer.
//
// Per region of K neighbors with relative coordinates P_i, the layer derives a
// spatial distribution feature S_i = [point term, region term] (64 + 64
// channels), turns it into a stack of Spatial Distribution Weights
// e^1..e^L in (0,1) via a sigmoid-gated chain, and runs a shared MLP whose
// stage inputs (from the second stage on) and whose final max pool are
// modulated elementwise by the matching SDW level. Freezing every SDW at 1
// reduces the layer to a plain set-abstraction stage.
namespace lsanet {

/// Width of the point/region spatial feature halves.
inline constexpr int64_t kSpatialFeatDim = 64;

struct LsaFlags {
  bool use_lsa = true;             // off: no SDW branch at all (plain shared MLP + max pool)
  bool use_region_encoder = true;  // off: SDWs conditioned on the point term only
  bool use_modulated_pool = true;  // off: plain max pool
  bool sdw_prerelu = false;        // extra ReLU before each sigmoid in the SDW chain
  bool region_mean_valid_only = false;  // region term averages real neighbors only
};

/// Captured SDW levels for one forward pass (export / analysis hook).
template <class T>
struct SdwRecord {
  std::vector<Tensor<T>> levels;  // e^1..e^L, each (B, M, K, F_l)
};

// --- stage operations (free functions; the layer composes them) -------------

/// Point term: per-slot linear lift of the relative coordinate, no activation.
/// rel (B, M, K, 3) with w0 (64, 3) -> (B, M, K, 64).
template <class T>
Tensor<T> point_spatial_feature(const Tensor<T>& rel, const Tensor<T>& w0,
                                Tape<T>* tape = nullptr) {
  LSANET_CHECK(rel.rank() == 4 && rel.dim(3) == w0.dim(1),
               "point_spatial_feature: rel " << shape_str(rel.shape())
                                             << " incompatible with weight " << shape_str(w0.shape()));
  return ops::linear(rel, w0, tape);
}

/// Region term: shared-weight lift of the region's mean relative coordinate,
/// (B, M, K, 3) -> (B, M, 64). The mean accumulates in a content-canonical
/// order, so it is bit-identical under any permutation of the K slots.
template <class T>
Tensor<T> region_spatial_feature(const Tensor<T>& rel, const Tensor<T>& w1,
                                 const std::vector<int>& valid_counts, bool valid_only,
                                 Tape<T>* tape = nullptr) {
  LSANET_CHECK(rel.rank() == 4 && rel.dim(3) == w1.dim(1),
               "region_spatial_feature: rel " << shape_str(rel.shape())
                                              << " incompatible with weight " << shape_str(w1.shape()));
  Tensor<T> mean = valid_only ? ops::masked_mean_k(rel, valid_counts, tape)
                              : ops::canonical_mean_k(rel, tape);
  return ops::linear(mean, w1, tape);
}

/// S_i = [point term, region term broadcast across the K slots]:
/// (B, M, K, 64) + (B, M, 64) -> (B, M, K, 128).
template <class T>
Tensor<T> spatial_distribution_feature(const Tensor<T>& per_point, const Tensor<T>& regional,
                                       Tape<T>* tape = nullptr) {
  LSANET_CHECK(per_point.rank() == 4 && regional.rank() == 3 &&
                   per_point.dim(0) == regional.dim(0) && per_point.dim(1) == regional.dim(1),
               "spatial_distribution_feature: " << shape_str(per_point.shape()) << " vs "
                                                << shape_str(regional.shape()));
  Tensor<T> tiled = ops::expand(regional, 2, per_point.dim(2), tape);
  return ops::concat(per_point, tiled, 3, tape);
}

/// First SDW level: e^1 = sigmoid(ws1 . S), elements strictly in (0,1).
template <class T>
Tensor<T> sdw_first(const Tensor<T>& s, const Tensor<T>& ws1, bool prerelu = false,
                    Tape<T>* tape = nullptr) {
  Tensor<T> z = ops::linear(s, ws1, tape);
  if (prerelu) z = ops::relu(z, tape);
  return ops::sigmoid(z, tape);
}

/// Next SDW level from the previous one: e^{l+1} = sigmoid(ws . e^l).
template <class T>
Tensor<T> sdw_next(const Tensor<T>& e_prev, const Tensor<T>& ws, bool prerelu = false,
                   Tape<T>* tape = nullptr) {
  Tensor<T> z = ops::linear(e_prev, ws, tape);
  if (prerelu) z = ops::relu(z, tape);
  return ops::sigmoid(z, tape);
}

/// One modulated shared-MLP stage: wm . (x (*) e), then batch norm, then ReLU.
/// x and e must be shape-congruent; the modulation applies to the stage input.
template <class T>
Tensor<T> sdw_modulated_mlp_step(const Tensor<T>& x, const Tensor<T>& e, LinearBnRelu<T>& stage,
                                 FwdCtx<T>& ctx) {
  LSANET_CHECK(x.shape() == e.shape(),
               "sdw_modulated_mlp_step: feature " << shape_str(x.shape())
                                                  << " and weights " << shape_str(e.shape())
                                                  << " are not shape-congruent");
  return stage.forward(ops::ew_mul(x, e, ctx.tape), ctx);
}

/// Modulated max pool over the K axis: Y = max_k (x (*) e). Padded duplicate
/// slots cannot change the max.
template <class T>
Tensor<T> sdw_modulated_max_pool(const Tensor<T>& x, const Tensor<T>& e, Tape<T>* tape = nullptr) {
  LSANET_CHECK(x.shape() == e.shape(),
               "sdw_modulated_max_pool: " << shape_str(x.shape()) << " vs " << shape_str(e.shape()));
  return ops::reduce_max(ops::ew_mul(x, e, tape), 2, tape).values;
}

// --- the layer ---------------------------------------------------------------

/// Per-batch tensor view of a grouping stage shared by every cloud in the
/// batch (all clouds have the same M, K).
template <class T>
struct StageTensors {
  Tensor<T> rel;                      // (B, M, K, 3)
  std::vector<int64_t> neighbor_idx;  // B*M*K into the parent point set
  std::vector<int64_t> centroid_idx;  // B*M (empty for group-all)
  std::vector<int> valid_counts;      // B*M
  int64_t b = 0, m = 0, k = 0, n_parent = 0;
};

template <class T>
class LsaLayer {
 public:
  LsaLayer() = default;

  /// widths = per-stage output channels (F_1..F_L); c_in = input channels.
  LsaLayer(int64_t c_in, std::vector<int64_t> widths, LsaFlags flags, uint64_t seed,
           const std::string& name)
      : c_in_(c_in), widths_(std::move(widths)), flags_(flags) {
    LSANET_CHECK(!widths_.empty(), name << ": MLP width list is empty");
    if (flags_.use_lsa) {
      {
        Rng rng = init_rng(seed, name + "/w0");
        w0_ = glorot_init<T>(kSpatialFeatDim, 3, rng);
      }
      if (flags_.use_region_encoder) {
        Rng rng = init_rng(seed, name + "/w1");
        w1_ = glorot_init<T>(kSpatialFeatDim, 3, rng);
      }
      const int64_t s_dim = flags_.use_region_encoder ? 2 * kSpatialFeatDim : kSpatialFeatDim;
      int64_t prev = s_dim;
      for (size_t l = 0; l < widths_.size(); ++l) {
        Rng rng = init_rng(seed, name + "/ws" + std::to_string(l));
        ws_.push_back(glorot_init<T>(widths_[l], prev, rng));
        prev = widths_[l];
      }
    }
    int64_t prev = c_in_;
    for (size_t l = 0; l < widths_.size(); ++l) {
      mlp_.emplace_back(widths_[l], prev, seed, name + "/wm" + std::to_string(l));
      prev = widths_[l];
    }
    check_shape_chain();
  }

  /// Chain consistency: each SDW level must be shape-congruent with the MLP
  /// stage it modulates. Throws naming the first offending sub-layer.
  void check_shape_chain() const {
    int64_t prev = c_in_;
    for (size_t l = 0; l < mlp_.size(); ++l) {
      LSANET_CHECK(mlp_[l].in_dim() == prev && mlp_[l].out_dim() == widths_[l],
                   "lsa_layer: MLP sub-layer " << l << " maps " << mlp_[l].in_dim() << " -> "
                                               << mlp_[l].out_dim() << ", expected " << prev
                                               << " -> " << widths_[l]);
      prev = widths_[l];
    }
    if (!flags_.use_lsa) return;
    const int64_t s_dim = flags_.use_region_encoder ? 2 * kSpatialFeatDim : kSpatialFeatDim;
    LSANET_CHECK(ws_.size() == widths_.size(),
                 "lsa_layer: " << ws_.size() << " SDW stages for " << widths_.size()
                               << " MLP sub-layers");
    prev = s_dim;
    for (size_t l = 0; l < ws_.size(); ++l) {
      LSANET_CHECK(ws_[l].rank() == 2 && ws_[l].dim(1) == prev && ws_[l].dim(0) == widths_[l],
                   "lsa_layer: SDW sub-layer " << l << " weight is " << shape_str(ws_[l].shape())
                                               << ", expected [" << widths_[l] << ", " << prev
                                               << "]");
      prev = widths_[l];
    }
  }

  int64_t in_dim() const { return c_in_; }
  int64_t out_dim() const { return widths_.back(); }
  const LsaFlags& flags() const { return flags_; }
  std::vector<Tensor<T>>& sdw_weights() { return ws_; }
  std::vector<LinearBnRelu<T>>& mlp_stages() { return mlp_; }

  /// grouping.rel feeds the SDW branch; x_in (B, M, K, c_in) feeds the MLP
  /// path. Returns pooled region features (B, M, F_L).
  Tensor<T> forward(const StageTensors<T>& g, const Tensor<T>& x_in, FwdCtx<T>& ctx) {
    LSANET_CHECK(x_in.rank() == 4 && x_in.dim(3) == c_in_,
                 "lsa_layer: input " << shape_str(x_in.shape()) << " does not carry " << c_in_
                                     << " channels");
    std::vector<Tensor<T>> e;
    if (flags_.use_lsa) {
      Tensor<T> s = point_spatial_feature(g.rel, w0_, ctx.tape);
      if (flags_.use_region_encoder) {
        Tensor<T> regional = region_spatial_feature(g.rel, w1_, g.valid_counts,
                                                    flags_.region_mean_valid_only, ctx.tape);
        s = spatial_distribution_feature(s, regional, ctx.tape);
      }
      e.push_back(sdw_first(s, ws_[0], flags_.sdw_prerelu, ctx.tape));
      for (size_t l = 1; l < ws_.size(); ++l)
        e.push_back(sdw_next(e.back(), ws_[l], flags_.sdw_prerelu, ctx.tape));
      if (ctx.sdw_record) ctx.sdw_record->levels = e;
    }
    // Shared MLP: the first stage consumes the raw input (no SDW matches its
    // extent); stage l >= 1 is modulated by e^l.
    Tensor<T> x = mlp_[0].forward(x_in, ctx);
    for (size_t l = 1; l < mlp_.size(); ++l) {
      x = flags_.use_lsa ? sdw_modulated_mlp_step(x, e[l - 1], mlp_[l], ctx)
                         : mlp_[l].forward(x, ctx);
    }
    if (flags_.use_lsa && flags_.use_modulated_pool)
      return sdw_modulated_max_pool(x, e.back(), ctx.tape);
    return ops::reduce_max(x, 2, ctx.tape).values;
  }

  void register_tensors(const std::string& prefix, TensorRegistry<T>& reg) {
    if (flags_.use_lsa) {
      reg.add_learnable(prefix + "/w0", w0_);
      if (flags_.use_region_encoder) reg.add_learnable(prefix + "/w1", w1_);
      for (size_t l = 0; l < ws_.size(); ++l)
        reg.add_learnable(prefix + "/ws" + std::to_string(l), ws_[l]);
    }
    for (size_t l = 0; l < mlp_.size(); ++l)
      mlp_[l].register_tensors(prefix + "/wm" + std::to_string(l), reg);
  }

 private:
  int64_t c_in_ = 0;
  std::vector<int64_t> widths_;
  LsaFlags flags_;
  Tensor<T> w0_, w1_;
  std::vector<Tensor<T>> ws_;
  std::vector<LinearBnRelu<T>> mlp_;
};

}  // namespace lsanet
