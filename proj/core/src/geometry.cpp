#include "lsanet/geometry.hpp"

#include <cmath>
#include <limits>

#include "lsanet/rng.hpp"

namespace lsanet {

void validate(const PointCloud& cloud) {
  LSANET_CHECK(cloud.size() >= 1, "point cloud is empty");
  for (const Vec3& p : cloud.coords)
    LSANET_CHECK(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
                 "point cloud contains non-finite coordinates");
  if (cloud.feature_dim > 0)
    LSANET_CHECK(static_cast<int64_t>(cloud.features.size()) == cloud.size() * cloud.feature_dim,
                 "feature buffer does not match N x feature_dim");
}

std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m) {
  const int64_t n = cloud.size();
  LSANET_CHECK(m >= 1 && m <= n, "farthest_point_sample: m = " << m << " outside [1, " << n << "]");
  std::vector<int64_t> picked;
  picked.reserve(m);
  std::vector<float> min_d2(n, std::numeric_limits<float>::max());
  std::vector<char> taken(n, 0);
  int64_t cur = 0;  // deterministic seed: lowest index
  picked.push_back(cur);
  taken[cur] = 1;
  for (int64_t s = 1; s < m; ++s) {
    const Vec3 c = cloud.coords[cur];
    int64_t best = -1;
    float best_d2 = -1.0f;
    for (int64_t i = 0; i < n; ++i) {
      const float d2 = squared_dist(cloud.coords[i], c);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (!taken[i] && min_d2[i] > best_d2) {  // strict: ties keep the lowest index
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    taken[best] = 1;
    cur = best;
  }
  return picked;
}

namespace {

RegionGrouping ball_query_impl(const PointCloud& cloud, const Vec3* centers, int64_t m,
                               const int64_t* center_indices, float radius, int k) {
  LSANET_CHECK(radius > 0, "ball_query: radius must be positive, got " << radius);
  LSANET_CHECK(k >= 1, "ball_query: k must be >= 1, got " << k);
  const int64_t n = cloud.size();
  const float r2 = radius * radius;
  RegionGrouping g;
  g.m = static_cast<int>(m);
  g.k = k;
  g.radius = radius;
  g.centroid_coords.assign(centers, centers + m);
  if (center_indices) g.centroid_indices.assign(center_indices, center_indices + m);
  g.neighbor_indices.assign(m * k, 0);
  g.relative_coords.assign(m * k, Vec3{});
  g.valid_counts.assign(m, 0);
  for (int64_t j = 0; j < m; ++j) {
    const Vec3 c = centers[j];
    const int64_t self = center_indices ? center_indices[j] : -1;
    int cnt = 0;
    bool has_self = false;
    for (int64_t i = 0; i < n && cnt < k; ++i) {
      if (squared_dist(cloud.coords[i], c) <= r2) {
        if (cnt == 0) {
          for (int s = 0; s < k; ++s) g.neighbor_indices[j * k + s] = i;  // pad by repetition
        }
        g.neighbor_indices[j * k + cnt] = i;
        has_self = has_self || i == self;
        ++cnt;
      }
    }
    LSANET_CHECK(cnt > 0, "ball_query: centroid " << j << " at (" << c.x << ", " << c.y << ", "
                                                  << c.z << ") has no neighbors within radius "
                                                  << radius << "; region is degenerate");
    // A region always holds its own centroid. When k lower-indexed neighbors
    // crowd it out, it takes the last slot.
    if (self >= 0 && !has_self) g.neighbor_indices[j * k + (k - 1)] = self;
    g.valid_counts[j] = cnt;
    for (int s = 0; s < k; ++s) {
      const Vec3 p = cloud.coords[g.neighbor_indices[j * k + s]];
      g.relative_coords[j * k + s] = Vec3{p.x - c.x, p.y - c.y, p.z - c.z};
    }
  }
  return g;
}

}  // namespace

RegionGrouping ball_query(const PointCloud& cloud, std::span<const int64_t> centroids,
                          float radius, int k) {
  std::vector<Vec3> centers(centroids.size());
  for (size_t j = 0; j < centroids.size(); ++j) {
    LSANET_CHECK(centroids[j] >= 0 && centroids[j] < cloud.size(),
                 "ball_query: centroid index " << centroids[j] << " out of range");
    centers[j] = cloud.coords[centroids[j]];
  }
  return ball_query_impl(cloud, centers.data(), static_cast<int64_t>(centers.size()),
                         centroids.data(), radius, k);
}

RegionGrouping ball_query_at(const PointCloud& cloud, std::span<const Vec3> centroids,
                             float radius, int k) {
  return ball_query_impl(cloud, centroids.data(), static_cast<int64_t>(centroids.size()), nullptr,
                         radius, k);
}

RegionGrouping group_all(const PointCloud& cloud) {
  const int64_t n = cloud.size();
  LSANET_CHECK(n >= 1, "group_all: empty cloud");
  Vec3 c{};
  for (const Vec3& p : cloud.coords) {
    c.x += p.x;
    c.y += p.y;
    c.z += p.z;
  }
  c.x /= n;
  c.y /= n;
  c.z /= n;
  RegionGrouping g;
  g.m = 1;
  g.k = static_cast<int>(n);
  g.radius = 0;
  g.centroid_coords = {c};
  g.neighbor_indices.resize(n);
  g.relative_coords.resize(n);
  g.valid_counts = {static_cast<int>(n)};
  for (int64_t i = 0; i < n; ++i) {
    g.neighbor_indices[i] = i;
    const Vec3 p = cloud.coords[i];
    g.relative_coords[i] = Vec3{p.x - c.x, p.y - c.y, p.z - c.z};
  }
  return g;
}

PointCloud normalize_unit_sphere(PointCloud cloud) {
  validate(cloud);
  const int64_t n = cloud.size();
  double cx = 0, cy = 0, cz = 0;
  for (const Vec3& p : cloud.coords) {
    cx += p.x;
    cy += p.y;
    cz += p.z;
  }
  cx /= n;
  cy /= n;
  cz /= n;
  float max_d2 = 0;
  for (Vec3& p : cloud.coords) {
    p.x = static_cast<float>(p.x - cx);
    p.y = static_cast<float>(p.y - cy);
    p.z = static_cast<float>(p.z - cz);
    max_d2 = std::max(max_d2, p.x * p.x + p.y * p.y + p.z * p.z);
  }
  if (max_d2 > 0) {
    const float inv = 1.0f / std::sqrt(max_d2);
    for (Vec3& p : cloud.coords) {
      p.x *= inv;
      p.y *= inv;
      p.z *= inv;
    }
  }
  return cloud;
}

PointCloud augment(const PointCloud& cloud, uint64_t seed, const AugmentOptions& opts) {
  PointCloud out = cloud;
  Rng rng(seed);
  if (opts.rotate_z) {
    const double a = rng.uniform(0.0, 6.283185307179586);
    const float ca = static_cast<float>(std::cos(a)), sa = static_cast<float>(std::sin(a));
    for (Vec3& p : out.coords) {
      const float x = p.x, y = p.y;
      p.x = ca * x - sa * y;
      p.y = sa * x + ca * y;
    }
  }
  if (opts.jitter_sigma > 0) {
    const float clip = opts.jitter_clip;
    auto draw = [&]() {
      float v = static_cast<float>(rng.normal()) * opts.jitter_sigma;
      return std::min(std::max(v, -clip), clip);
    };
    for (Vec3& p : out.coords) {
      p.x += draw();
      p.y += draw();
      p.z += draw();
    }
  }
  if (opts.dropout_max_ratio > 0) {
    LSANET_CHECK(opts.dropout_max_ratio <= 1.0f,
                 "augment: dropout_max_ratio must be <= 1, got " << opts.dropout_max_ratio);
    const double ratio = rng.uniform() * opts.dropout_max_ratio;
    std::vector<char> drop(out.coords.size());
    int64_t first_kept = -1;
    for (size_t i = 0; i < out.coords.size(); ++i) {
      drop[i] = rng.uniform() < ratio;
      if (!drop[i] && first_kept < 0) first_kept = static_cast<int64_t>(i);
    }
    if (first_kept < 0) {
      drop[0] = false;  // keep at least one point
      first_kept = 0;
    }
    const Vec3 fill = out.coords[first_kept];
    for (size_t i = 0; i < out.coords.size(); ++i)
      if (drop[i]) out.coords[i] = fill;
  }
  return out;
}

}  // namespace lsanet
