#include "pcu/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pcu {

namespace {

TriMesh grid_mesh(int64_t nu, int64_t nv, bool wrap_u, bool wrap_v,
                  const std::function<Vec3(double, double)>& surf) {
  TriMesh mesh;
  const int64_t cols = wrap_u ? nu : nu + 1;
  const int64_t rows = wrap_v ? nv : nv + 1;
  for (int64_t j = 0; j < rows; ++j)
    for (int64_t i = 0; i < cols; ++i)
      mesh.vertices.push_back(surf(static_cast<double>(i) / static_cast<double>(nu),
                                   static_cast<double>(j) / static_cast<double>(nv)));
  auto vid = [&](int64_t i, int64_t j) {
    return (wrap_v ? j % nv : j) * cols + (wrap_u ? i % nu : i);
  };
  for (int64_t j = 0; j < nv; ++j)
    for (int64_t i = 0; i < nu; ++i) {
      const int64_t a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
      mesh.faces.push_back({a, b, c});
      mesh.faces.push_back({a, c, d});
    }
  mesh.finalize();
  return mesh;
}

}  // namespace

TriMesh make_sphere(int64_t n_theta, int64_t n_phi, double radius) {
  // latitude bands; poles get degenerate (zero-area) slivers avoided by
  // clamping phi away from the poles on the first/last ring
  TriMesh mesh = grid_mesh(n_theta, n_phi, true, false, [&](double u, double v) {
    const double theta = 2.0 * M_PI * u;
    const double phi = M_PI * (0.001 + 0.998 * v);
    return Vec3{radius * std::sin(phi) * std::cos(theta), radius * std::sin(phi) * std::sin(theta),
                radius * std::cos(phi)};
  });
  return mesh;
}

TriMesh make_torus(int64_t n_major, int64_t n_minor, double major, double minor) {
  return grid_mesh(n_major, n_minor, true, true, [&](double u, double v) {
    const double a = 2.0 * M_PI * u, b = 2.0 * M_PI * v;
    const double w = major + minor * std::cos(b);
    return Vec3{w * std::cos(a), w * std::sin(a), minor * std::sin(b)};
  });
}

TriMesh make_relief_plane(int64_t n, double amplitude, double freq) {
  return grid_mesh(n, n, false, false, [&](double u, double v) {
    const double x = 2.0 * u - 1.0, y = 2.0 * v - 1.0;
    return Vec3{x, y, amplitude * std::sin(freq * M_PI * x) * std::cos(freq * M_PI * y)};
  });
}

TriMesh make_cylinder(int64_t n_around, int64_t n_along, double radius, double height) {
  return grid_mesh(n_around, n_along, true, false, [&](double u, double v) {
    const double a = 2.0 * M_PI * u;
    return Vec3{radius * std::cos(a), radius * std::sin(a), height * (v - 0.5)};
  });
}

TriMesh make_builtin_mesh(const std::string& name) {
  if (name == "sphere") return make_sphere();
  if (name == "torus") return make_torus();
  if (name == "plane") return make_relief_plane();
  if (name == "cylinder") return make_cylinder();
  throw std::invalid_argument("unknown builtin mesh '" + name +
                              "' (expected sphere|torus|plane|cylinder)");
}

std::vector<PointCloud> extract_patches(const TriMesh& mesh, int64_t count, int64_t n_dense,
                                        Rng& rng,
                                        std::vector<std::pair<Vec3, double>>* transforms) {
  if (count < 1) throw std::invalid_argument("extract_patches: count must be >= 1");
  const int64_t total = count * n_dense;
  if (mesh.n_faces() == 0 || mesh.total_area <= 0)
    throw std::invalid_argument("extract_patches: mesh too small");
  const PointCloud dense = sample_mesh_surface(mesh, total, rng);

  const auto seeds = farthest_point_sample(dense, count, 0);
  std::vector<PointCloud> patches;
  patches.reserve(count);
  std::vector<std::pair<double, int64_t>> order(dense.n());
  for (int64_t s : seeds) {
    for (int64_t i = 0; i < dense.n(); ++i) order[i] = {dist2(dense[i], dense[s]), i};
    std::partial_sort(order.begin(), order.begin() + n_dense, order.end());
    PointCloud patch;
    patch.points.reserve(n_dense);
    for (int64_t i = 0; i < n_dense; ++i) patch.points.push_back(dense[order[i].second]);
    NormalizeResult norm = normalize_unit_sphere(patch);
    if (transforms) transforms->push_back({norm.centroid, norm.radius});
    patches.push_back(std::move(norm.cloud));
  }
  return patches;
}

TrainingPair make_training_pair(const PointCloud& patch_dense, double r, int64_t n_max,
                                Rng& rng) {
  if (patch_dense.n() < 2 * n_max)
    throw std::invalid_argument("make_training_pair: dense patch has " +
                                std::to_string(patch_dense.n()) + " points, need at least " +
                                std::to_string(2 * n_max));
  if (!(r > 1.0)) throw std::invalid_argument("make_training_pair: R must exceed 1");

  TrainingPair pair;
  pair.r = r;
  const int64_t n = static_cast<int64_t>(std::floor(static_cast<double>(n_max) / r));
  const int64_t big_n = static_cast<int64_t>(std::floor(r * static_cast<double>(n)));
  pair.target = blue_noise_downsample(patch_dense, big_n);

  // Non-uniform input: keep probability decays exponentially with the
  // distance to a random anchor point of the target.
  constexpr double kSigma = 0.7;
  const Vec3 anchor = pair.target[rng.uniform_int(big_n)];
  std::vector<double> w(big_n);
  double w_sum = 0;
  for (int64_t i = 0; i < big_n; ++i) {
    w[i] = std::exp(-(pair.target[i] - anchor).norm() / kSigma);
    w_sum += w[i];
  }
  std::vector<char> keep(big_n, 0);
  int64_t kept = 0;
  for (int64_t i = 0; i < big_n; ++i) {
    const double prob = std::min(1.0, static_cast<double>(n) * w[i] / w_sum);
    if (rng.uniform() < prob) {
      keep[i] = 1;
      ++kept;
    }
  }
  while (kept > n) {  // trim uniformly among kept
    const int64_t drop = rng.uniform_int(big_n);
    if (keep[drop]) {
      keep[drop] = 0;
      --kept;
    }
  }
  while (kept < n) {  // top up proportionally to the weights
    double u = rng.uniform() * w_sum;
    int64_t pick = big_n - 1;
    for (int64_t i = 0; i < big_n; ++i) {
      u -= w[i];
      if (u <= 0) {
        pick = i;
        break;
      }
    }
    if (!keep[pick]) {
      keep[pick] = 1;
      ++kept;
    }
  }
  for (int64_t i = 0; i < big_n; ++i)
    if (keep[i]) pair.input.points.push_back(pair.target[i]);
  return pair;
}

namespace {

// Uniform random rotation from a unit quaternion.
std::array<Vec3, 3> random_rotation(Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double qx = a * std::sin(2 * M_PI * u2), qy = a * std::cos(2 * M_PI * u2);
  const double qz = b * std::sin(2 * M_PI * u3), qw = b * std::cos(2 * M_PI * u3);
  return {Vec3{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
          Vec3{2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
          Vec3{2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}};
}

Vec3 apply_rot(const std::array<Vec3, 3>& rot, const Vec3& p) {
  return {rot[0].dot(p), rot[1].dot(p), rot[2].dot(p)};
}

double clipped_normal(Rng& rng, double sigma, double clip) {
  return std::clamp(rng.normal(0.0, sigma), -clip, clip);
}

}  // namespace

TrainingPair augment(const TrainingPair& pair, Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return pair;
  TrainingPair out;
  out.r = pair.r;
  out.source_id = pair.source_id;

  const auto rot = random_rotation(rng);
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const Vec3 shift{rng.uniform(-cfg.shift, cfg.shift), rng.uniform(-cfg.shift, cfg.shift),
                   rng.uniform(-cfg.shift, cfg.shift)};
  auto rigid = [&](const Vec3& p) { return apply_rot(rot, p) * s + shift; };

  out.target.points.reserve(pair.target.n());
  for (const Vec3& p : pair.target.points) out.target.points.push_back(rigid(p));

  const bool strong = rng.uniform() < cfg.strong_prob;
  const double sigma = strong ? cfg.strong_sigma : cfg.jitter_sigma;
  const double clip = strong ? cfg.strong_clip : cfg.jitter_clip;
  out.input.points.reserve(pair.input.n());
  for (const Vec3& p : pair.input.points) {
    Vec3 q = rigid(p);
    q.x += clipped_normal(rng, sigma, clip);
    q.y += clipped_normal(rng, sigma, clip);
    q.z += clipped_normal(rng, sigma, clip);
    out.input.points.push_back(q);
  }
  return out;
}

PointCloud read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_xyz: cannot open " + path);
  PointCloud cloud;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    Vec3 p;
    if (!(is >> p.x >> p.y >> p.z))
      throw std::runtime_error("read_xyz: malformed line " + std::to_string(line_no) + " in " +
                               path);
    cloud.points.push_back(p);  // extra columns (normals etc.) are ignored
  }
  if (cloud.n() == 0) throw std::runtime_error("read_xyz: no points in " + path);
  return cloud;
}

void write_xyz(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_xyz: cannot open " + path);
  char buf[96];
  for (const Vec3& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x, p.y, p.z);
    out << buf;
  }
  if (!out) throw std::runtime_error("write_xyz: write failed for " + path);
}

namespace {

void fan_triangulate(TriMesh& mesh, const std::vector<int64_t>& poly) {
  for (size_t i = 1; i + 1 < poly.size(); ++i)
    mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
}

// Tokenizer that skips comment lines starting with '#'.
class TokenStream {
 public:
  explicit TokenStream(std::istream& in) : in_(in) {}
  std::string next() {
    std::string tok;
    while (in_ >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in_, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("mesh: unexpected end of file");
  }
  int64_t next_int() { return std::stoll(next()); }
  double next_double() { return std::stod(next()); }

 private:
  std::istream& in_;
};

TriMesh read_off(std::istream& in) {
  TokenStream ts(in);
  std::string magic = ts.next();
  if (magic != "OFF") throw std::runtime_error("mesh: missing OFF header");
  const int64_t nv = ts.next_int(), nf = ts.next_int();
  ts.next_int();  // edge count, unused
  TriMesh mesh;
  mesh.vertices.resize(nv);
  for (int64_t i = 0; i < nv; ++i)
    mesh.vertices[i] = {ts.next_double(), ts.next_double(), ts.next_double()};
  for (int64_t f = 0; f < nf; ++f) {
    const int64_t arity = ts.next_int();
    if (arity < 3) throw std::runtime_error("mesh: face with fewer than 3 vertices");
    std::vector<int64_t> poly(arity);
    for (int64_t i = 0; i < arity; ++i) poly[i] = ts.next_int();
    fan_triangulate(mesh, poly);
  }
  mesh.finalize();
  return mesh;
}

TriMesh read_ply(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw std::runtime_error("mesh: missing ply header");
  int64_t nv = -1, nf = -1;
  int vertex_props = 0;
  std::string element;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string kw;
    is >> kw;
    if (kw == "format") {
      std::string fmt;
      is >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      std::string name;
      int64_t count;
      is >> name >> count;
      element = name;
      if (name == "vertex") nv = count;
      else if (name == "face") nf = count;
      else throw std::runtime_error("mesh: unsupported ply element '" + name + "'");
    } else if (kw == "property" && element == "vertex") {
      ++vertex_props;
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!ascii) throw std::runtime_error("mesh: only ascii ply is supported");
  if (nv < 0 || nf < 0) throw std::runtime_error("mesh: ply header missing elements");
  if (vertex_props < 3) throw std::runtime_error("mesh: ply vertices need x y z properties");

  TokenStream ts(in);
  TriMesh mesh;
  mesh.vertices.resize(nv);
  for (int64_t i = 0; i < nv; ++i) {
    mesh.vertices[i] = {ts.next_double(), ts.next_double(), ts.next_double()};
    for (int p = 3; p < vertex_props; ++p) ts.next();  // extra vertex properties ignored
  }
  for (int64_t f = 0; f < nf; ++f) {
    const int64_t arity = ts.next_int();
    if (arity < 3) throw std::runtime_error("mesh: face with fewer than 3 vertices");
    std::vector<int64_t> poly(arity);
    for (int64_t i = 0; i < arity; ++i) poly[i] = ts.next_int();
    fan_triangulate(mesh, poly);
  }
  mesh.finalize();
  return mesh;
}

}  // namespace

TriMesh read_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_mesh: cannot open " + path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") return read_ply(in);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".off") return read_off(in);
  // sniff the header
  const char c = static_cast<char>(in.peek());
  if (c == 'p') return read_ply(in);
  return read_off(in);
}

std::vector<PatchRecord> DatasetManifest::split(const std::string& which) const {
  std::vector<PatchRecord> out;
  for (const auto& p : patches)
    if (p.split == which) out.push_back(p);
  return out;
}

void DatasetManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["n_max"] = n_max;
  j["patches_per_model"] = patches_per_model;
  j["n_dense"] = n_dense;
  j["seed"] = seed;
  j["generator"] = generator;
  j["patches"] = nlohmann::json::array();
  for (const auto& p : patches)
    j["patches"].push_back({{"path", p.path},
                            {"source", p.source},
                            {"split", p.split},
                            {"centroid", {p.centroid.x, p.centroid.y, p.centroid.z}},
                            {"radius", p.radius}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot open " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.n_max = j.at("n_max").get<int64_t>();
  m.patches_per_model = j.at("patches_per_model").get<int64_t>();
  m.n_dense = j.value("n_dense", int64_t{0});
  m.seed = j.at("seed").get<uint64_t>();
  m.generator = j.value("generator", std::string{});
  for (const auto& p : j.at("patches")) {
    PatchRecord rec;
    rec.path = p.at("path").get<std::string>();
    rec.source = p.at("source").get<std::string>();
    rec.split = p.at("split").get<std::string>();
    if (p.contains("centroid")) {
      rec.centroid = {p["centroid"][0].get<double>(), p["centroid"][1].get<double>(),
                      p["centroid"][2].get<double>()};
      rec.radius = p.at("radius").get<double>();
    }
    m.patches.push_back(std::move(rec));
  }
  return m;
}

}  // namespace pcu
