#include "lsanet/network.hpp"

#include <algorithm>
#include <numeric>

#include "lsanet/rng.hpp"

namespace lsanet {

void NetworkConfig::validate() const {
  LSANET_CHECK(!layers.empty(), "config: no layers");
  LSANET_CHECK(layers.back().n == 1, "config: last layer must group all (N = 1), got N = "
                                         << layers.back().n);
  for (size_t s = 0; s < layers.size(); ++s) {
    const LayerSpec& ls = layers[s];
    LSANET_CHECK(ls.n >= 1, "config: layer " << s << " has N = " << ls.n);
    if (s > 0)
      LSANET_CHECK(ls.n < layers[s - 1].n, "config: N must strictly decrease, layer " << s
                                               << " has N = " << ls.n << " after N = "
                                               << layers[s - 1].n);
    LSANET_CHECK(!ls.f.empty(), "config: layer " << s << " has an empty F list");
    for (int64_t w : ls.f)
      LSANET_CHECK(w >= 1, "config: layer " << s << " has a non-positive MLP width");
    if (ls.n == 1) {
      if (s > 0)
        LSANET_CHECK(ls.k == layers[s - 1].n,
                     "config: group-all layer " << s << " must use K = " << layers[s - 1].n
                                                << " (previous N), got " << ls.k);
    } else {
      LSANET_CHECK(ls.k >= 1, "config: layer " << s << " has K = " << ls.k);
      LSANET_CHECK(ls.radius > 0, "config: layer " << s << " needs a positive ball-query radius");
    }
  }
  LSANET_CHECK(num_classes >= 2, "config: num_classes must be >= 2, got " << num_classes);
  LSANET_CHECK(dropout_rate >= 0 && dropout_rate < 1,
               "config: dropout_rate must be in [0, 1), got " << dropout_rate);
  for (int64_t w : head_widths)
    LSANET_CHECK(w >= 1, "config: head width must be positive");
  LSANET_CHECK(!sfe_lift_widths.empty(), "config: sfe_lift_widths is empty");
  for (int64_t w : sfe_lift_widths)
    LSANET_CHECK(w >= 1, "config: SFE lift width must be positive");
}

NetworkConfig desk_config(int num_classes) {
  NetworkConfig cfg;
  cfg.layers = {
      {128, 16, 0.3f, {32, 32, 64}},
      {32, 32, 0.6f, {64, 64, 128}},
      {1, 32, 0.0f, {128, 256, 256}},
  };
  cfg.head_widths = {128, 64};
  cfg.num_classes = num_classes;
  cfg.dropout_rate = 0.4;
  cfg.sfe_lift_widths = {16, 32};
  return cfg;
}

NetworkConfig modelnet40_config(int num_classes) {
  NetworkConfig cfg;
  cfg.layers = {
      {512, 32, 0.2f, {64, 64, 128}},
      {128, 64, 0.4f, {128, 128, 256}},
      {1, 128, 0.0f, {256, 512, 1024}},
  };
  cfg.head_widths = {512, 256};
  cfg.num_classes = num_classes;
  cfg.dropout_rate = 0.4;
  cfg.sfe_lift_widths = {32, 64};
  return cfg;
}

Metrics metrics_from_counts(const std::vector<int64_t>& correct,
                            const std::vector<int64_t>& total) {
  Metrics m;
  m.per_class_count = total;
  int64_t all = 0, hit = 0;
  double recall_sum = 0;
  int present = 0;
  m.per_class_recall.resize(total.size(), 0.0);
  for (size_t c = 0; c < total.size(); ++c) {
    all += total[c];
    hit += correct[c];
    if (total[c] > 0) {
      m.per_class_recall[c] = static_cast<double>(correct[c]) / total[c];
      recall_sum += m.per_class_recall[c];
      ++present;
    }
  }
  LSANET_CHECK(all > 0, "metrics: no samples");
  m.oa = static_cast<double>(hit) / all;
  m.ma = recall_sum / present;
  return m;
}

PointCloud pad_by_cycling(PointCloud cloud, int64_t n_points) {
  const int64_t n = cloud.size();
  if (n >= n_points) return cloud;
  cloud.coords.reserve(n_points);
  for (int64_t i = n; i < n_points; ++i) cloud.coords.push_back(cloud.coords[i % n]);
  if (cloud.feature_dim > 0)
    for (int64_t i = n; i < n_points; ++i)
      cloud.features.insert(cloud.features.end(),
                            cloud.features.begin() + (i % n) * cloud.feature_dim,
                            cloud.features.begin() + (i % n + 1) * cloud.feature_dim);
  return cloud;
}

PointCloud subsample(const PointCloud& cloud, int64_t n_points, uint64_t seed) {
  const int64_t n = cloud.size();
  LSANET_CHECK(n_points >= 1 && n_points <= n,
               "subsample: requested " << n_points << " of " << n << " points");
  if (n_points == n) return cloud;
  // partial Fisher-Yates, then ascending order
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int64_t i = 0; i < n_points; ++i) {
    int64_t j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n_points);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.label = cloud.label;
  out.coords.reserve(n_points);
  for (int64_t i : idx) out.coords.push_back(cloud.coords[i]);
  if (cloud.feature_dim > 0) {
    out.feature_dim = cloud.feature_dim;
    out.features.reserve(n_points * cloud.feature_dim);
    for (int64_t i : idx)
      out.features.insert(out.features.end(), cloud.features.begin() + i * cloud.feature_dim,
                          cloud.features.begin() + (i + 1) * cloud.feature_dim);
  }
  return out;
}

}  // namespace lsanet
