#include "pcu/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcu {

void NetConfig::validate() const {
  if (k < 1) throw std::invalid_argument("net config: k must be >= 1");
  if (channels < 1 || c_hidden < 1) throw std::invalid_argument("net config: channel widths must be >= 1");
  if (meta_block_index < 1 || meta_block_index > n_blocks)
    throw std::invalid_argument("net config: meta block index out of [1, n_blocks]");
  if (r_max < 2) throw std::invalid_argument("net config: R_max must be >= 2");
  if (kernel != 1) throw std::invalid_argument("net config: only kernel size 1 is supported");
}

std::vector<double> make_scale_vector(double r, int64_t r_max) {
  if (!(r > 1.0) || r > static_cast<double>(r_max))
    throw std::invalid_argument("scale vector: R=" + std::to_string(r) + " out of (1, " +
                                std::to_string(r_max) + "]");
  std::vector<double> sv(2 * r_max, -1.0);
  const int64_t pairs = static_cast<int64_t>(std::ceil(r));
  for (int64_t i = 1; i <= pairs; ++i) {
    sv[2 * (i - 1)] = std::max(0.0, r - static_cast<double>(i));
    sv[2 * (i - 1) + 1] = r;
  }
  return sv;
}

std::vector<double> make_scale_vector(double r, const NetConfig& cfg) {
  if (cfg.scale_encoding == ScaleEncoding::kAllR) {
    if (!(r > 1.0) || r > static_cast<double>(cfg.r_max))
      throw std::invalid_argument("scale vector: R out of range");
    return std::vector<double>(2 * cfg.r_max, r);
  }
  return make_scale_vector(r, cfg.r_max);
}

void ParamStore::insert(const std::string& name, Tensor t) {
  if (params_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
  t.set_requires_grad(true);
  params_.emplace(name, std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: unknown name " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: unknown name " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

int64_t ParamStore::total_numel() const {
  int64_t total = 0;
  for (const auto& [name, t] : params_) total += t.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

Tensor init_matrix(int64_t rows, int64_t cols, Rng& rng) {
  // uniform fan-in scaling, bound 1/sqrt(fan_in)
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> data(static_cast<size_t>(rows * cols));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor({rows, cols}, std::move(data));
}

void add_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                bool bias) {
  store.insert(prefix + ".w", init_matrix(in, out, rng));
  if (bias) store.insert(prefix + ".b", Tensor::zeros({out}));
}

void add_meta_subnet(ParamStore& store, const std::string& prefix, const NetConfig& cfg,
                     Rng& rng) {
  const int64_t sv_len = cfg.scale_vector_len();
  const int64_t w_len = cfg.weight_numel();
  add_linear(store, prefix + ".fc1", sv_len, cfg.c_hidden, rng, true);
  add_linear(store, prefix + ".fc2", cfg.c_hidden, cfg.c_hidden, rng, true);
  add_linear(store, prefix + ".fc3", cfg.c_hidden, w_len, rng, true);
  add_linear(store, prefix + ".fc4", w_len, w_len, rng, true);
  add_linear(store, prefix + ".skip", sv_len, w_len, rng, true);
}

std::string block_prefix(int64_t i) { return "block" + std::to_string(i); }

}  // namespace

ParamStore init_params(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore store;
  const int64_t c = cfg.channels;
  add_linear(store, "cnn.l0", 3, c, rng, true);
  add_linear(store, "cnn.l1", c, c, rng, true);
  add_linear(store, "cnn.l2", c, c, rng, true);
  for (int64_t i = 1; i <= cfg.n_blocks; ++i) {
    if (i == cfg.meta_block_index) {
      add_meta_subnet(store, block_prefix(i) + ".meta0", cfg, rng);
      add_meta_subnet(store, block_prefix(i) + ".meta1", cfg, rng);
    } else {
      add_linear(store, block_prefix(i) + ".center", c, c, rng, false);
      add_linear(store, block_prefix(i) + ".neighbor", c, c, rng, false);
    }
  }
  add_linear(store, "unpool.center", c, cfg.r_max * 3, rng, false);
  add_linear(store, "unpool.neighbor", c, cfg.r_max * 3, rng, false);
  return store;
}

Tensor to_tensor(const PointCloud& cloud, bool requires_grad) {
  std::vector<double> data;
  data.reserve(cloud.points.size() * 3);
  for (const Vec3& p : cloud.points) {
    data.push_back(p.x);
    data.push_back(p.y);
    data.push_back(p.z);
  }
  return Tensor({cloud.n(), 3}, std::move(data), requires_grad);
}

PointCloud to_cloud(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3)
    throw std::invalid_argument("to_cloud: expected [n,3], got " + shape_str(t.shape()));
  PointCloud out;
  out.points.resize(t.dim(0));
  const auto v = t.data();
  for (int64_t i = 0; i < t.dim(0); ++i) out.points[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
  return out;
}

namespace {

// Sum of neighbor features: gather rows by the adjacency table, reduce
// over the neighbor axis.
Tensor neighbor_sum(const Tensor& f, const KnnGraph& graph) {
  Tensor gathered = group_gather(f, graph.neighbors, graph.k);
  return reduce(gathered, 1, Reduce::kSum);
}

}  // namespace

Tensor point_cnn_forward(const Tensor& x, const KnnGraph& graph, const ParamStore& params,
                         const NetConfig& cfg) {
  const int64_t n = x.dim(0);
  Tensor grouped = group_gather(x, graph.neighbors, graph.k);  // [n, k, 3]
  Tensor h = reshape(grouped, {n * cfg.k, 3});
  h = relu(linear(h, params.at("cnn.l0.w"), params.at("cnn.l0.b")));
  h = relu(linear(h, params.at("cnn.l1.w"), params.at("cnn.l1.b")));
  h = relu(linear(h, params.at("cnn.l2.w"), params.at("cnn.l2.b")));
  h = reshape(h, {n, cfg.k, cfg.channels});
  return reduce(h, 1, Reduce::kMax);  // [n, c]
}

Tensor rgc_forward(const Tensor& f_in, const KnnGraph& graph, const Tensor& w_center,
                   const Tensor& w_neighbor) {
  Tensor center = linear(f_in, w_center);
  Tensor neigh = linear(neighbor_sum(f_in, graph), w_neighbor);
  return add(relu(add(center, neigh)), f_in);
}

Tensor meta_subnet_forward(const Tensor& sv, const ParamStore& params,
                           const std::string& prefix, const NetConfig& cfg) {
  Tensor h = relu(linear(sv, params.at(prefix + ".fc1.w"), params.at(prefix + ".fc1.b")));
  h = relu(linear(h, params.at(prefix + ".fc2.w"), params.at(prefix + ".fc2.b")));
  h = relu(linear(h, params.at(prefix + ".fc3.w"), params.at(prefix + ".fc3.b")));
  h = linear(h, params.at(prefix + ".fc4.w"), params.at(prefix + ".fc4.b"));
  Tensor skip = linear(sv, params.at(prefix + ".skip.w"), params.at(prefix + ".skip.b"));
  // emitted vector reshaped to the convolution weight matrix (l = 1)
  return reshape(add(h, skip), {cfg.channels, cfg.channels});
}

Tensor meta_rgc_forward(const Tensor& f_in, const KnnGraph& graph, const Tensor& sv,
                        const ParamStore& params, const std::string& prefix,
                        const NetConfig& cfg) {
  Tensor w0 = meta_subnet_forward(sv, params, prefix + ".meta0", cfg);
  Tensor w1 = meta_subnet_forward(sv, params, prefix + ".meta1", cfg);
  return rgc_forward(f_in, graph, w0, w1);
}

Tensor unpool_forward(const Tensor& f, const Tensor& x, const KnnGraph& graph,
                      const ParamStore& params, const NetConfig& cfg) {
  const int64_t n = f.dim(0);
  Tensor center = linear(f, params.at("unpool.center.w"));
  Tensor neigh = linear(neighbor_sum(f, graph), params.at("unpool.neighbor.w"));
  Tensor offsets = reshape(add(center, neigh), {n, cfg.r_max, 3});
  Tensor base = reshape(x, {n, 1, 3});
  return reshape(combine(offsets, base, Combine::kAdd), {n * cfg.r_max, 3});
}

namespace {

// Head seed: first child of the lexicographically smallest input point, a
// physical (index-free) choice so permuting the input reproduces the same
// output set.
int64_t head_seed(const PointCloud& cloud, int64_t r_max) {
  int64_t best = 0;
  for (int64_t i = 1; i < cloud.n(); ++i) {
    const Vec3 &a = cloud[i], &b = cloud[best];
    if (a.x < b.x || (a.x == b.x && (a.y < b.y || (a.y == b.y && a.z < b.z)))) best = i;
  }
  return best * r_max;
}

Tensor run_blocks(const Tensor& x, const KnnGraph& graph, const ParamStore& params,
                  const NetConfig& cfg, const Tensor& sv) {
  Tensor f = point_cnn_forward(x, graph, params, cfg);
  for (int64_t i = 1; i <= cfg.n_blocks; ++i) {
    const std::string prefix = block_prefix(i);
    if (i == cfg.meta_block_index) {
      f = meta_rgc_forward(f, graph, sv, params, prefix, cfg);
    } else {
      f = rgc_forward(f, graph, params.at(prefix + ".center.w"),
                      params.at(prefix + ".neighbor.w"));
    }
  }
  return f;
}

Tensor dense_forward(const Tensor& x, const PointCloud& cloud, double meta_r,
                     const ParamStore& params, const NetConfig& cfg) {
  if (cloud.n() <= cfg.k)
    throw std::invalid_argument("forward: n=" + std::to_string(cloud.n()) +
                                " must exceed k=" + std::to_string(cfg.k));
  const KnnGraph graph = build_knn(cloud, cfg.k);
  const Tensor sv({1, cfg.scale_vector_len()}, make_scale_vector(meta_r, cfg));
  Tensor f = run_blocks(x, graph, params, cfg, sv);
  return unpool_forward(f, x, graph, params, cfg);
}

}  // namespace

ForwardResult metapu_forward(const PointCloud& cloud, double r, const ParamStore& params,
                             const NetConfig& cfg, std::optional<double> meta_r,
                             bool track_input_grad) {
  cfg.validate();
  if (!(r > 1.0) || r > static_cast<double>(cfg.r_max))
    throw std::invalid_argument("forward: R=" + std::to_string(r) + " out of (1, " +
                                std::to_string(cfg.r_max) + "]");
  ForwardResult res;
  res.input = to_tensor(cloud, track_input_grad);
  res.dense = dense_forward(res.input, cloud, meta_r.value_or(r), params, cfg);

  const int64_t m = static_cast<int64_t>(std::floor(r * static_cast<double>(cloud.n())));
  const PointCloud dense_cloud = to_cloud(res.dense);
  res.selected = farthest_point_sample(std::span<const Vec3>(dense_cloud.points), m,
                                       head_seed(cloud, cfg.r_max));
  res.output = gather_rows(res.dense, res.selected);
  return res;
}

PointCloud upsample(const PointCloud& cloud, double r, const ParamStore& params,
                    const NetConfig& cfg, std::optional<double> meta_r) {
  return to_cloud(metapu_forward(cloud, r, params, cfg, meta_r).output);
}

ReceptiveField receptive_field(const PointCloud& cloud, double r, const ParamStore& params,
                               const NetConfig& cfg, int64_t centroid_output_index) {
  cfg.validate();
  Tensor x = to_tensor(cloud, /*requires_grad=*/true);
  Tensor dense = dense_forward(x, cloud, r, params, cfg);
  if (centroid_output_index < 0 || centroid_output_index >= dense.dim(0))
    throw std::out_of_range("receptive_field: output index " +
                            std::to_string(centroid_output_index) + " out of range");

  const std::vector<int64_t> row{centroid_output_index};
  backward(sum_all(gather_rows(dense, row)));

  ReceptiveField rf;
  rf.magnitudes.resize(cloud.n(), 0.0);
  const auto g = x.grad();
  double max_mag = 0;
  for (int64_t i = 0; i < cloud.n(); ++i) {
    const double gx = g[i * 3], gy = g[i * 3 + 1], gz = g[i * 3 + 2];
    rf.magnitudes[i] = std::sqrt(gx * gx + gy * gy + gz * gz);
    max_mag = std::max(max_mag, rf.magnitudes[i]);
  }
  rf.threshold = 0.01 * max_mag;
  for (int64_t i = 0; i < cloud.n(); ++i)
    if (rf.magnitudes[i] > rf.threshold) rf.indices.insert(i);
  return rf;
}

}  // namespace pcu
