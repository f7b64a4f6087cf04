#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lsanet/common.hpp"

namespace lsanet {

struct Vec3 {
  float x = 0, y = 0, z = 0;
};

inline float squared_dist(const Vec3& a, const Vec3& b) {
  const float dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// N x 3 coordinates, optional N x F per-point features, optional class label.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<float> features;  // row-major N x feature_dim, empty if none
  int feature_dim = 0;
  int label = -1;

  int64_t size() const { return static_cast<int64_t>(coords.size()); }
};

/// Throws unless all coordinates are finite and N >= 1.
void validate(const PointCloud& cloud);

/// Output of ball_query / group_all: M regions of K slots each.
/// Real neighbors are packed first; when a region has fewer than K qualifying
/// points the remaining slots repeat the first qualifying index, so
/// relative_coords never contains garbage and a max over slots is unaffected.
/// centroid_indices is empty for group_all (its centroid is the coordinate
/// mean, not a cloud point).
struct RegionGrouping {
  std::vector<int64_t> centroid_indices;  // M (or empty)
  std::vector<Vec3> centroid_coords;      // M
  std::vector<int64_t> neighbor_indices;  // M * K, into the parent cloud
  std::vector<Vec3> relative_coords;      // M * K, neighbor minus centroid
  std::vector<int> valid_counts;          // M, in [1, K]
  int m = 0;
  int k = 0;
  float radius = 0;
};

/// Greedy max-min farthest point sampling. The seed is index 0 (lowest
/// index); each subsequent pick maximizes squared distance to the selected
/// set, ties broken by lowest index. O(N*M) with an incrementally maintained
/// nearest-selected-distance array.
std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m);

/// For each centroid (given as indices into the cloud): the first K points in
/// ascending index with squared distance <= radius^2.
RegionGrouping ball_query(const PointCloud& cloud, std::span<const int64_t> centroids,
                          float radius, int k);

/// Ball query against external centroid coordinates. A centroid with zero
/// qualifying points makes the region degenerate and the call throws with
/// diagnostics.
RegionGrouping ball_query_at(const PointCloud& cloud, std::span<const Vec3> centroids,
                             float radius, int k);

/// Single region covering the whole cloud; the centroid is the coordinate
/// mean and relative coordinates are taken against it.
RegionGrouping group_all(const PointCloud& cloud);

/// Centroid to the origin, max norm scaled to 1 (scale is a no-op if all
/// points coincide).
PointCloud normalize_unit_sphere(PointCloud cloud);

struct AugmentOptions {
  bool rotate_z = false;          // uniform rotation about the up (z) axis
  float jitter_sigma = 0.0f;      // per-coordinate Gaussian noise
  float jitter_clip = 0.05f;      // noise clamp
  float dropout_max_ratio = 0.0f; // dropped points are replaced by the first survivor
};

/// Deterministic given (cloud, seed, opts); point count is preserved.
PointCloud augment(const PointCloud& cloud, uint64_t seed, const AugmentOptions& opts);

}  // namespace lsanet
