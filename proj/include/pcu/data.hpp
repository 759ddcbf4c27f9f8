#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcu/geom.hpp"
#include "pcu/rng.hpp"

namespace pcu {

// Parametric meshes so the pipeline runs without external data.
TriMesh make_sphere(int64_t n_theta = 48, int64_t n_phi = 24, double radius = 1.0);
TriMesh make_torus(int64_t n_major = 48, int64_t n_minor = 24, double major = 1.0,
                   double minor = 0.4);
TriMesh make_relief_plane(int64_t n = 40, double amplitude = 0.15, double freq = 2.0);
TriMesh make_cylinder(int64_t n_around = 48, int64_t n_along = 16, double radius = 0.5,
                      double height = 2.0);
TriMesh make_builtin_mesh(const std::string& name);

/// Dense local neighborhoods: surface-sampled cloud, FPS seeds, for each
/// seed the n_dense nearest samples, unit-normalized. transforms, when
/// given, receives each patch's (centroid, radius) so results can be
/// mapped back into mesh coordinates.
std::vector<PointCloud> extract_patches(const TriMesh& mesh, int64_t count, int64_t n_dense,
                                        Rng& rng,
                                        std::vector<std::pair<Vec3, double>>* transforms = nullptr);

struct TrainingPair {
  PointCloud input;   // n = floor(n_max / R) points
  PointCloud target;  // N = floor(R * n) points
  double r = 0;
  std::string source_id;
};

/// Target by blue-noise downsampling of the dense patch; input by a
/// non-uniform subsample of the target (keep probability falling off
/// exponentially from a random anchor), topped up / trimmed to exact n.
TrainingPair make_training_pair(const PointCloud& patch_dense, double r, int64_t n_max,
                                Rng& rng);

struct AugmentConfig {
  bool enabled = true;
  double scale_lo = 0.8, scale_hi = 1.2;
  double shift = 0.1;          // per-axis uniform in [-shift, shift]
  double jitter_sigma = 0.005;
  double jitter_clip = 0.015;
  double strong_prob = 0.05;
  double strong_sigma = 0.02;
  double strong_clip = 0.06;
};

/// Joint rigid rotation + scale + shift on input and target; Gaussian
/// jitter on the input only.
TrainingPair augment(const TrainingPair& pair, Rng& rng, const AugmentConfig& cfg = {});

PointCloud read_xyz(const std::string& path);
void write_xyz(const std::string& path, const PointCloud& cloud);

/// OFF or ASCII-PLY triangle mesh; polygons are fan-triangulated.
TriMesh read_mesh(const std::string& path);

struct PatchRecord {
  std::string path;    // xyz file of the dense patch
  std::string source;  // model the patch came from
  std::string split;   // "train" or "test"
  Vec3 centroid{0, 0, 0};  // normalization transform back to mesh coordinates
  double radius = 1.0;
};

struct DatasetManifest {
  std::vector<PatchRecord> patches;
  int64_t n_max = 4096;
  int64_t patches_per_model = 100;
  int64_t n_dense = 0;
  uint64_t seed = 0;
  std::string generator;  // builtin names or source directory

  std::vector<PatchRecord> split(const std::string& which) const;
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

}  // namespace pcu
