#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcu/geom.hpp"
#include "pcu/rng.hpp"
#include "pcu/tensor.hpp"

namespace pcu {

enum class ScaleEncoding { kPaired, kAllR };

struct NetConfig {
  int64_t k = 8;
  int64_t channels = 128;  // c
  int64_t n_blocks = 22;
  int64_t meta_block_index = 2;  // 1-based position of the meta block
  int64_t r_max = 16;
  int64_t c_hidden = 128;
  int64_t kernel = 1;  // l
  ScaleEncoding scale_encoding = ScaleEncoding::kPaired;

  // Small profile used throughout the test suite.
  static NetConfig tiny() {
    NetConfig c;
    c.k = 8;
    c.channels = 32;
    c.n_blocks = 4;
    c.meta_block_index = 2;
    c.r_max = 4;
    c.c_hidden = 32;
    return c;
  }

  void validate() const;
  int64_t scale_vector_len() const { return 2 * r_max; }
  int64_t weight_numel() const { return channels * channels * kernel * kernel; }
};

/// Length-2*R_max encoding of the scale factor: pairs {max(0, R-i), R} for
/// i = 1..ceil(R), padded with {-1, -1}.
std::vector<double> make_scale_vector(double r, int64_t r_max);
std::vector<double> make_scale_vector(double r, const NetConfig& cfg);

/// Named parameter tensors, ordered by name for deterministic iteration.
class ParamStore {
 public:
  void insert(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::vector<std::string> names() const;
  int64_t total_numel() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

ParamStore init_params(const NetConfig& cfg, Rng& rng);

Tensor to_tensor(const PointCloud& cloud, bool requires_grad = false);
PointCloud to_cloud(const Tensor& t);

Tensor point_cnn_forward(const Tensor& x, const KnnGraph& graph, const ParamStore& params,
                         const NetConfig& cfg);
Tensor rgc_forward(const Tensor& f_in, const KnnGraph& graph, const Tensor& w_center,
                   const Tensor& w_neighbor);
Tensor meta_subnet_forward(const Tensor& sv, const ParamStore& params,
                           const std::string& prefix, const NetConfig& cfg);
Tensor meta_rgc_forward(const Tensor& f_in, const KnnGraph& graph, const Tensor& sv,
                        const ParamStore& params, const std::string& block_prefix,
                        const NetConfig& cfg);
// RGC-style block mapping features to R_max offsets per point, added onto
// the input coordinates; rows ordered with the R_max children of point i
// contiguous, i ascending.
Tensor unpool_forward(const Tensor& f, const Tensor& x, const KnnGraph& graph,
                      const ParamStore& params, const NetConfig& cfg);

struct ForwardResult {
  Tensor output;                  // [floor(R*n), 3]
  Tensor dense;                   // [n*R_max, 3] before the sampling head
  Tensor input;                   // [n, 3] leaf (for input-gradient probes)
  std::vector<int64_t> selected;  // rows of dense kept by the head
};

/// Full pipeline: point CNN, RGC stack with the meta block consuming the
/// scale vector, unpooling, farthest-sampling head down to floor(R*n).
/// meta_r, when set, drives the meta block while the head still targets R.
ForwardResult metapu_forward(const PointCloud& cloud, double r, const ParamStore& params,
                             const NetConfig& cfg, std::optional<double> meta_r = std::nullopt,
                             bool track_input_grad = false);

PointCloud upsample(const PointCloud& cloud, double r, const ParamStore& params,
                    const NetConfig& cfg, std::optional<double> meta_r = std::nullopt);

struct ReceptiveField {
  std::set<int64_t> indices;       // input points above threshold
  std::vector<double> magnitudes;  // per input point gradient norm
  double threshold = 0;            // 1% of the max magnitude
};

/// Gradient-based receptive field of one dense-output point, with the
/// sampling head bypassed.
ReceptiveField receptive_field(const PointCloud& cloud, double r, const ParamStore& params,
                               const NetConfig& cfg, int64_t centroid_output_index);

}  // namespace pcu
