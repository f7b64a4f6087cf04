#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lsanet/geometry.hpp"
#include "lsanet/rng.hpp"

namespace lsanet {

/// Labeled clouds plus class names (index = label).
struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<std::string> class_names;
};

enum class ShapeClass : int { kSphere = 0, kCube = 1, kTorus = 2, kPlane = 3 };

const std::vector<std::string>& synth_class_names();

struct SyntheticSpec {
  int n_points = 1024;
  float noise_sigma = 0.02f;
};

/// Raw surface samples before noise/normalization (spheres land on the unit
/// shell, cube faces span [-1,1], torus uses R = 0.7 / r = 0.25, plane is a
/// unit disk).
std::vector<Vec3> sample_shape_points(ShapeClass cls, int n_points, Rng& rng);

/// One noisy, unit-sphere-normalized cloud.
PointCloud synth_cloud(ShapeClass cls, const SyntheticSpec& spec, uint64_t seed);

/// Deterministic, exactly class-balanced train/test split over the four
/// shape classes. n_train and n_test must be divisible by 4.
std::pair<Dataset, Dataset> synth_dataset(const SyntheticSpec& spec, int n_train, int n_test,
                                          uint64_t seed);

// --- OFF meshes --------------------------------------------------------------

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int64_t, 3>> triangles;
};

/// ASCII OFF: "OFF" header (counts may share its line), counts line, vertex
/// lines, face lines. Polygon faces are fan-triangulated. Throws on malformed
/// input.
TriMesh parse_off(std::istream& is);

/// Area-weighted uniform surface sampling; throws if total area is zero.
PointCloud sample_mesh_surface(const TriMesh& mesh, int n_points, uint64_t seed);

/// Directory of class subdirectories holding .off files. Samples n_points per
/// mesh (area-weighted, per-file seed), unit-sphere normalizes, labels by the
/// sorted class-directory order. Malformed files are skipped with a warning;
/// a class that ends up empty is an error.
Dataset load_off_dir(const std::string& path, int n_points, uint64_t seed);

}  // namespace lsanet
