#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lsanet/dataset.hpp"

namespace lsanet {

namespace {

// Next content line: comments (#) and blank lines skipped.
bool next_line(std::istream& is, std::string& line) {
  while (std::getline(is, line)) {
    const size_t pos = line.find_first_not_of(" \t\r\n");
    if (pos == std::string::npos) continue;
    if (line[pos] == '#') continue;
    return true;
  }
  return false;
}

}  // namespace

TriMesh parse_off(std::istream& is) {
  std::string line;
  LSANET_CHECK(next_line(is, line), "off: empty file");
  std::istringstream header(line);
  std::string tag;
  header >> tag;
  LSANET_CHECK(tag == "OFF", "off: missing OFF header, got \"" << tag << "\"");
  int64_t nv = -1, nf = -1, ne = 0;
  if (!(header >> nv >> nf >> ne)) {
    // counts on their own line
    LSANET_CHECK(next_line(is, line), "off: missing counts line");
    std::istringstream counts(line);
    LSANET_CHECK(static_cast<bool>(counts >> nv >> nf), "off: malformed counts line \"" << line << "\"");
    counts >> ne;
  }
  LSANET_CHECK(nv >= 1 && nf >= 1, "off: implausible counts nv=" << nv << " nf=" << nf);
  TriMesh mesh;
  mesh.vertices.reserve(nv);
  for (int64_t i = 0; i < nv; ++i) {
    LSANET_CHECK(next_line(is, line), "off: truncated after " << i << " of " << nv << " vertices");
    std::istringstream vs(line);
    float x, y, z;
    LSANET_CHECK(static_cast<bool>(vs >> x >> y >> z), "off: malformed vertex line \"" << line << "\"");
    LSANET_CHECK(std::isfinite(x) && std::isfinite(y) && std::isfinite(z),
                 "off: non-finite vertex");
    mesh.vertices.push_back(Vec3{x, y, z});
  }
  for (int64_t i = 0; i < nf; ++i) {
    LSANET_CHECK(next_line(is, line), "off: truncated after " << i << " of " << nf << " faces");
    std::istringstream fs(line);
    int64_t k;
    LSANET_CHECK(static_cast<bool>(fs >> k) && k >= 3, "off: malformed face line \"" << line << "\"");
    std::vector<int64_t> poly(k);
    for (int64_t j = 0; j < k; ++j) {
      LSANET_CHECK(static_cast<bool>(fs >> poly[j]), "off: short face line \"" << line << "\"");
      LSANET_CHECK(poly[j] >= 0 && poly[j] < nv, "off: vertex index " << poly[j] << " out of range");
    }
    for (int64_t j = 1; j + 1 < k; ++j)  // fan triangulation
      mesh.triangles.push_back({poly[0], poly[j], poly[j + 1]});
  }
  return mesh;
}

PointCloud sample_mesh_surface(const TriMesh& mesh, int n_points, uint64_t seed) {
  LSANET_CHECK(n_points >= 1, "sample_mesh_surface: n_points must be >= 1");
  LSANET_CHECK(!mesh.triangles.empty(), "sample_mesh_surface: mesh has no triangles");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 a = mesh.vertices[mesh.triangles[t][0]];
    const Vec3 b = mesh.vertices[mesh.triangles[t][1]];
    const Vec3 c = mesh.vertices[mesh.triangles[t][2]];
    const double ux = b.x - a.x, uy = b.y - a.y, uz = b.z - a.z;
    const double vx = c.x - a.x, vy = c.y - a.y, vz = c.z - a.z;
    const double cx = uy * vz - uz * vy;
    const double cy = uz * vx - ux * vz;
    const double cz = ux * vy - uy * vx;
    total += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
    cum[t] = total;
  }
  LSANET_CHECK(total > 0, "sample_mesh_surface: degenerate mesh, total surface area is zero");
  Rng rng(seed);
  PointCloud cloud;
  cloud.coords.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double pick = rng.uniform() * total;
    const size_t t = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    const Vec3 a = mesh.vertices[tri[0]];
    const Vec3 b = mesh.vertices[tri[1]];
    const Vec3 c = mesh.vertices[tri[2]];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    cloud.coords.push_back(Vec3{
        static_cast<float>(a.x + u * (b.x - a.x) + v * (c.x - a.x)),
        static_cast<float>(a.y + u * (b.y - a.y) + v * (c.y - a.y)),
        static_cast<float>(a.z + u * (b.z - a.z) + v * (c.z - a.z)),
    });
  }
  return cloud;
}

Dataset load_off_dir(const std::string& path, int n_points, uint64_t seed) {
  namespace fs = std::filesystem;
  LSANET_CHECK(fs::is_directory(path), "load_off_dir: " << path << " is not a directory");
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  std::sort(classes.begin(), classes.end());
  LSANET_CHECK(!classes.empty(), "load_off_dir: no class subdirectories under " << path);
  Dataset ds;
  ds.class_names = classes;
  for (size_t label = 0; label < classes.size(); ++label) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(path) / classes[label]))
      if (entry.is_regular_file() && entry.path().extension() == ".off")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    size_t loaded = 0;
    for (const std::string& file : files) {
      try {
        std::ifstream is(file);
        LSANET_CHECK(is.is_open(), "off: cannot open " << file);
        TriMesh mesh = parse_off(is);
        PointCloud cloud = sample_mesh_surface(
            mesh, n_points, mix_seed(seed, hash_str(fs::path(file).filename().string())));
        cloud = normalize_unit_sphere(std::move(cloud));
        cloud.label = static_cast<int>(label);
        ds.clouds.push_back(std::move(cloud));
        ++loaded;
      } catch (const Error& e) {
        std::cerr << "warning: skipping " << file << ": " << e.what() << "\n";
      }
    }
    LSANET_CHECK(loaded > 0, "load_off_dir: class \"" << classes[label]
                                                      << "\" has no loadable meshes");
  }
  return ds;
}

}  // namespace lsanet
