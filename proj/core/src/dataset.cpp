#include "lsanet/dataset.hpp"

#include <cmath>

namespace lsanet {

const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names = {"sphere", "cube", "torus", "plane"};
  return names;
}

std::vector<Vec3> sample_shape_points(ShapeClass cls, int n_points, Rng& rng) {
  LSANET_CHECK(n_points >= 1, "sample_shape_points: n_points must be >= 1");
  std::vector<Vec3> pts;
  pts.reserve(n_points);
  switch (cls) {
    case ShapeClass::kSphere:
      // uniform on the unit sphere via normalized Gaussians
      for (int i = 0; i < n_points; ++i) {
        double x, y, z, n2;
        do {
          x = rng.normal();
          y = rng.normal();
          z = rng.normal();
          n2 = x * x + y * y + z * z;
        } while (n2 < 1e-12);
        const double inv = 1.0 / std::sqrt(n2);
        pts.push_back(Vec3{static_cast<float>(x * inv), static_cast<float>(y * inv),
                           static_cast<float>(z * inv)});
      }
      break;
    case ShapeClass::kCube:
      // uniform over the six faces of [-1, 1]^3
      for (int i = 0; i < n_points; ++i) {
        const int face = static_cast<int>(rng.uniform_int(6));
        const float u = static_cast<float>(rng.uniform(-1.0, 1.0));
        const float v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const float s = face % 2 == 0 ? 1.0f : -1.0f;
        switch (face / 2) {
          case 0: pts.push_back(Vec3{s, u, v}); break;
          case 1: pts.push_back(Vec3{u, s, v}); break;
          default: pts.push_back(Vec3{u, v, s}); break;
        }
      }
      break;
    case ShapeClass::kTorus: {
      // uniform on the surface: acceptance proportional to R + r cos(v)
      const double R = 0.7, r = 0.25;
      for (int i = 0; i < n_points; ++i) {
        const double u = rng.uniform(0.0, 6.283185307179586);
        double v;
        for (;;) {
          v = rng.uniform(0.0, 6.283185307179586);
          const double w = (R + r * std::cos(v)) / (R + r);
          if (rng.uniform() < w) break;
        }
        const double cx = (R + r * std::cos(v)) * std::cos(u);
        const double cy = (R + r * std::cos(v)) * std::sin(u);
        const double cz = r * std::sin(v);
        pts.push_back(Vec3{static_cast<float>(cx), static_cast<float>(cy), static_cast<float>(cz)});
      }
      break;
    }
    case ShapeClass::kPlane:
      // uniform on a unit disk in the xy plane
      for (int i = 0; i < n_points; ++i) {
        const double rr = std::sqrt(rng.uniform());
        const double a = rng.uniform(0.0, 6.283185307179586);
        pts.push_back(Vec3{static_cast<float>(rr * std::cos(a)),
                           static_cast<float>(rr * std::sin(a)), 0.0f});
      }
      break;
  }
  return pts;
}

PointCloud synth_cloud(ShapeClass cls, const SyntheticSpec& spec, uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.coords = sample_shape_points(cls, spec.n_points, rng);
  cloud.label = static_cast<int>(cls);
  if (spec.noise_sigma > 0) {
    for (Vec3& p : cloud.coords) {
      p.x += static_cast<float>(rng.normal()) * spec.noise_sigma;
      p.y += static_cast<float>(rng.normal()) * spec.noise_sigma;
      p.z += static_cast<float>(rng.normal()) * spec.noise_sigma;
    }
  }
  return normalize_unit_sphere(std::move(cloud));
}

std::pair<Dataset, Dataset> synth_dataset(const SyntheticSpec& spec, int n_train, int n_test,
                                          uint64_t seed) {
  LSANET_CHECK(spec.n_points >= 64, "synth_dataset: n_points must be >= 64");
  LSANET_CHECK(n_train > 0 && n_train % 4 == 0, "synth_dataset: n_train must be a positive multiple of 4");
  LSANET_CHECK(n_test > 0 && n_test % 4 == 0, "synth_dataset: n_test must be a positive multiple of 4");
  Dataset train, test;
  train.class_names = test.class_names = synth_class_names();
  auto fill = [&](Dataset& ds, int count, uint64_t split_tag) {
    ds.clouds.reserve(count);
    for (int i = 0; i < count; ++i) {
      const ShapeClass cls = static_cast<ShapeClass>(i % 4);  // exactly balanced
      const uint64_t cloud_seed = mix_seed(mix_seed(seed, split_tag), static_cast<uint64_t>(i));
      ds.clouds.push_back(synth_cloud(cls, spec, cloud_seed));
    }
  };
  fill(train, n_train, 0x7261696eULL);  // distinct per-split streams
  fill(test, n_test, 0x74657374ULL);
  return {std::move(train), std::move(test)};
}

}  // namespace lsanet
