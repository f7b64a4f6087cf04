#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsanet/geometry.hpp"
#include "lsanet/lsa_layer.hpp"
#include "lsanet/sfe.hpp"

namespace lsanet {

struct LayerSpec {
  int64_t n = 0;       // regions sampled at this stage (1 = group-all)
  int k = 0;           // neighbors per region
  float radius = 0;    // ball-query radius (unused by the group-all stage)
  std::vector<int64_t> f;  // shared-MLP output widths F_1..F_L
};

/// Backbone + head description. Field names match the JSON config format
/// one-to-one (see parse_network_config).
struct NetworkConfig {
  std::vector<LayerSpec> layers;
  std::vector<int64_t> head_widths = {512, 256};
  int num_classes = 40;
  double dropout_rate = 0.4;
  std::vector<int64_t> sfe_lift_widths = {32, 64};

  // ablation flags
  bool use_sfe = true;
  bool use_lsa = true;
  bool use_region_encoder = true;
  bool use_modulated_pool = true;

  // study variants
  bool sdw_prerelu = false;
  bool region_mean_valid_only = false;
  bool sfe_projected_sum = false;

  /// Lift width for a stage; a list shorter than the layer count repeats its
  /// last entry.
  int64_t lift_width(size_t stage) const {
    LSANET_CHECK(!sfe_lift_widths.empty(), "config: sfe_lift_widths is empty");
    return sfe_lift_widths[std::min(stage, sfe_lift_widths.size() - 1)];
  }

  /// Throws on the first violated constraint.
  void validate() const;

  LsaFlags lsa_flags() const {
    return LsaFlags{use_lsa, use_region_encoder, use_modulated_pool, sdw_prerelu,
                    region_mean_valid_only};
  }
};

NetworkConfig parse_network_config(const std::string& json_text);
NetworkConfig load_network_config(const std::string& path);
std::string network_config_to_json(const NetworkConfig& cfg);

/// Reduced backbone that trains on a CPU in minutes.
NetworkConfig desk_config(int num_classes = 4);
/// Full-scale classification backbone (512/128/1 regions, 1024-wide features).
NetworkConfig modelnet40_config(int num_classes = 40);

/// Per-stage groupings for a batch of same-size clouds, lifted to tensors.
template <class T>
struct BatchGroupings {
  std::vector<StageTensors<T>> stages;
  int64_t b = 0;
  int64_t n_points = 0;
};

/// Runs FPS + ball query (or group-all at N = 1) per cloud and stacks the
/// results. Pure geometry: no parameters involved, so ablation variants of
/// one model see identical groupings.
template <class T>
BatchGroupings<T> compute_groupings(std::span<const PointCloud> batch, const NetworkConfig& cfg) {
  LSANET_CHECK(!batch.empty(), "compute_groupings: empty batch");
  const int64_t b = static_cast<int64_t>(batch.size());
  const int64_t n0 = batch[0].size();
  for (const auto& c : batch)
    LSANET_CHECK(c.size() == n0, "compute_groupings: clouds in a batch must share a point count");
  LSANET_CHECK(n0 >= cfg.layers.front().n,
               "compute_groupings: cloud has " << n0 << " points, first stage samples "
                                               << cfg.layers.front().n);
  BatchGroupings<T> out;
  out.b = b;
  out.n_points = n0;
  const size_t n_stages = cfg.layers.size();
  out.stages.resize(n_stages);
  // Shapes are uniform across the batch; allocate up front, fill per cloud.
  int64_t n_parent = n0;
  for (size_t s = 0; s < n_stages; ++s) {
    const LayerSpec& ls = cfg.layers[s];
    const int64_t m = ls.n;
    const int64_t k = m == 1 ? n_parent : ls.k;
    StageTensors<T>& st = out.stages[s];
    st.b = b;
    st.m = m;
    st.k = k;
    st.n_parent = n_parent;
    st.rel = Tensor<T>({b, m, k, 3});
    st.neighbor_idx.resize(b * m * k);
    st.centroid_idx.resize(m == 1 ? 0 : b * m);
    st.valid_counts.resize(b * m);
    n_parent = m;
  }
  parallel_for(b, [&](int64_t b0, int64_t b1) {
    for (int64_t bi = b0; bi < b1; ++bi) {
      PointCloud cur;
      cur.coords = batch[bi].coords;
      for (size_t s = 0; s < n_stages; ++s) {
        const LayerSpec& ls = cfg.layers[s];
        StageTensors<T>& st = out.stages[s];
        RegionGrouping g;
        if (ls.n == 1) {
          g = group_all(cur);
        } else {
          auto centroids = farthest_point_sample(cur, ls.n);
          g = ball_query(cur, centroids, ls.radius, ls.k);
        }
        const int64_t m = st.m, k = st.k;
        T* rel = st.rel.data() + bi * m * k * 3;
        for (int64_t i = 0; i < m * k; ++i) {
          rel[i * 3 + 0] = static_cast<T>(g.relative_coords[i].x);
          rel[i * 3 + 1] = static_cast<T>(g.relative_coords[i].y);
          rel[i * 3 + 2] = static_cast<T>(g.relative_coords[i].z);
          st.neighbor_idx[bi * m * k + i] = g.neighbor_indices[i];
        }
        for (int64_t j = 0; j < m; ++j) st.valid_counts[bi * m + j] = g.valid_counts[j];
        if (!g.centroid_indices.empty())
          for (int64_t j = 0; j < m; ++j) st.centroid_idx[bi * m + j] = g.centroid_indices[j];
        PointCloud next;
        next.coords = g.centroid_coords;
        cur = std::move(next);
      }
    }
  }, 1);
  return out;
}

/// LSANet classifier: per stage an SFE inject feeds the LSA layer together
/// with the features gathered from the previous stage; the group-all stage's
/// pooled vector goes through the fully connected head. Outputs logits
/// (softmax lives in the loss/metrics).
template <class T>
class LsaNet {
 public:
  LsaNet() = default;

  LsaNet(NetworkConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const size_t n_stages = cfg_.layers.size();
    int64_t feat_prev = 0;  // pooled feature width entering this stage (0 at the first)
    int64_t state_dim = 3;  // SFE input width (relative coords at the first stage)
    for (size_t s = 0; s < n_stages; ++s) {
      int64_t inject_dim = 0;
      if (cfg_.use_sfe) {
        sfe_.emplace_back(state_dim, cfg_.lift_width(s), cfg_.sfe_projected_sum, seed,
                          "sfe" + std::to_string(s));
        inject_dim = sfe_.back().inject_dim();
        state_dim = sfe_.back().state_dim();
      } else {
        inject_dim = 3;  // raw relative coordinates
      }
      const int64_t c_in = feat_prev + inject_dim;
      layers_.emplace_back(c_in, cfg_.layers[s].f, cfg_.lsa_flags(), seed,
                           "layer" + std::to_string(s));
      feat_prev = cfg_.layers[s].f.back();
    }
    int64_t prev = feat_prev;
    for (size_t h = 0; h < cfg_.head_widths.size(); ++h) {
      head_hidden_.emplace_back(cfg_.head_widths[h], prev, seed, "head/fc" + std::to_string(h));
      prev = cfg_.head_widths[h];
    }
    {
      Rng rng = init_rng(seed, "head/out");
      head_out_w_ = glorot_init<T>(cfg_.num_classes, prev, rng);
      head_out_b_ = Tensor<T>::zeros({cfg_.num_classes});
      head_out_b_.requires_grad = true;
    }
  }

  const NetworkConfig& config() const { return cfg_; }
  std::vector<LsaLayer<T>>& layers() { return layers_; }
  std::vector<SfeStage<T>>& sfe_stages() { return sfe_; }

  /// logits (B, num_classes) from precomputed groupings.
  Tensor<T> forward(const BatchGroupings<T>& g, FwdCtx<T>& ctx) {
    LSANET_CHECK(g.stages.size() == layers_.size(),
                 "forward: groupings carry " << g.stages.size() << " stages, network has "
                                             << layers_.size());
    Tensor<T> feats;  // (B, M, F) pooled at the previous stage's centroids
    Tensor<T> state;  // SFE state at those same points
    for (size_t s = 0; s < layers_.size(); ++s) {
      const StageTensors<T>& st = g.stages[s];
      Tensor<T> gathered;
      if (feats.defined())
        gathered = ops::group_points(feats, st.neighbor_idx, st.m, st.k, ctx.tape);
      Tensor<T> x_in;
      if (cfg_.use_sfe) {
        Tensor<T> sp_in = s == 0 ? st.rel
                                 : ops::group_points(state, st.neighbor_idx, st.m, st.k, ctx.tape);
        auto [inject, next_state] = sfe_[s].forward(sp_in, ctx);
        x_in = inject_spatial(gathered, inject, ctx.tape);
        state = next_state;
      } else {
        x_in = inject_spatial(gathered, st.rel, ctx.tape);
      }
      SdwRecord<T>* want = (ctx.sdw_record && sdw_record_layer_ == static_cast<int>(s))
                               ? ctx.sdw_record
                               : nullptr;
      FwdCtx<T> layer_ctx = ctx;
      layer_ctx.sdw_record = want;
      feats = layers_[s].forward(st, x_in, layer_ctx);
    }
    Tensor<T> x = ops::reshape(feats, {g.b, layers_.back().out_dim()}, ctx.tape);
    for (auto& fc : head_hidden_) {
      x = fc.forward(x, ctx);
      if (cfg_.dropout_rate > 0 && ctx.mode == Mode::kTrain) {
        LSANET_CHECK(ctx.rng != nullptr, "forward: train-mode dropout needs an rng");
        x = ops::dropout(x, static_cast<T>(cfg_.dropout_rate), *ctx.rng, ctx.mode, ctx.tape);
      }
    }
    return ops::add(ops::linear(x, head_out_w_, ctx.tape), head_out_b_, ctx.tape);
  }

  /// Convenience: groupings + forward in one call.
  Tensor<T> forward_classify(std::span<const PointCloud> batch, FwdCtx<T>& ctx) {
    BatchGroupings<T> g = compute_groupings<T>(batch, cfg_);
    return forward(g, ctx);
  }

  /// Which layer's SDW levels to capture when ctx.sdw_record is set.
  void set_sdw_record_layer(int layer) { sdw_record_layer_ = layer; }

  TensorRegistry<T> registry() {
    TensorRegistry<T> reg;
    for (size_t s = 0; s < sfe_.size(); ++s)
      sfe_[s].register_tensors("sfe" + std::to_string(s), reg);
    for (size_t s = 0; s < layers_.size(); ++s)
      layers_[s].register_tensors("layer" + std::to_string(s), reg);
    for (size_t h = 0; h < head_hidden_.size(); ++h)
      head_hidden_[h].register_tensors("head/fc" + std::to_string(h), reg);
    reg.add_learnable("head/out/weight", head_out_w_);
    reg.add_learnable("head/out/bias", head_out_b_);
    return reg;
  }

  int64_t count_parameters() { return registry().learnable_count(); }

  /// (group, learnable element count) keyed by the first path component.
  std::vector<std::pair<std::string, int64_t>> parameter_breakdown() {
    TensorRegistry<T> reg = registry();
    std::vector<std::pair<std::string, int64_t>> out;
    for (auto& [name, t] : reg.learnable) {
      const std::string group = name.substr(0, name.find('/'));
      if (out.empty() || out.back().first != group) out.emplace_back(group, 0);
      out.back().second += t->numel();
    }
    return out;
  }

 private:
  NetworkConfig cfg_;
  std::vector<SfeStage<T>> sfe_;
  std::vector<LsaLayer<T>> layers_;
  std::vector<LinearBnRelu<T>> head_hidden_;
  Tensor<T> head_out_w_, head_out_b_;
  int sdw_record_layer_ = 0;
};

/// Overall accuracy and unweighted mean of per-class recalls.
struct Metrics {
  double oa = 0;
  double ma = 0;
  std::vector<double> per_class_recall;
  std::vector<int64_t> per_class_count;
};

Metrics metrics_from_counts(const std::vector<int64_t>& correct,
                            const std::vector<int64_t>& total);

/// Seeded uniform subsample to n_points (identity when the cloud already has
/// that many); indices kept in ascending order.
PointCloud subsample(const PointCloud& cloud, int64_t n_points, uint64_t seed);

/// Cloud padded to at least n_points by cycling its points from the start.
/// Lets a model whose first stage samples N centroids run on sparser inputs
/// (density sweeps); duplicates cannot perturb grouping or pooling.
PointCloud pad_by_cycling(PointCloud cloud, int64_t n_points);

/// Deterministic infer-mode evaluation at a requested point count.
template <class T>
Metrics evaluate(LsaNet<T>& net, std::span<const PointCloud> clouds, int64_t n_points,
                 uint64_t seed, int batch_size = 32) {
  LSANET_CHECK(!clouds.empty(), "evaluate: empty dataset");
  const int c = net.config().num_classes;
  std::vector<int64_t> correct(c, 0), total(c, 0);
  for (size_t start = 0; start < clouds.size(); start += batch_size) {
    const size_t end = std::min(clouds.size(), start + batch_size);
    std::vector<PointCloud> batch;
    std::vector<int> labels;
    for (size_t i = start; i < end; ++i) {
      batch.push_back(pad_by_cycling(subsample(clouds[i], n_points, mix_seed(seed, i)),
                                     net.config().layers.front().n));
      labels.push_back(clouds[i].label);
    }
    FwdCtx<T> ctx;  // infer mode, no tape
    Tensor<T> logits = net.forward_classify(batch, ctx);
    for (size_t i = 0; i < batch.size(); ++i) {
      const T* row = logits.data() + i * c;
      int pred = 0;
      for (int j = 1; j < c; ++j)
        if (row[j] > row[pred]) pred = j;
      const int y = labels[i];
      LSANET_CHECK(y >= 0 && y < c, "evaluate: label " << y << " out of range");
      ++total[y];
      if (pred == y) ++correct[y];
    }
  }
  return metrics_from_counts(correct, total);
}

}  // namespace lsanet
