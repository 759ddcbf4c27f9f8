#include "pcu/train.hpp"

#include "pcu/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace pcu {

std::vector<double> scale_set(int64_t r_max, double stride) {
  std::vector<double> out;
  for (int64_t i = 1;; ++i) {
    const double r = 1.0 + static_cast<double>(i) * stride;
    if (r > static_cast<double>(r_max) + 1e-9) break;
    out.push_back(std::min(r, static_cast<double>(r_max)));
  }
  return out;
}

bool is_meta_fc_param(const std::string& name) { return name.find(".meta") != std::string::npos; }

void adam_step(ParamStore& params, AdamState& state,
               const std::function<double(const std::string&)>& lr_of) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, param] : params) {
    if (!param.has_grad())
      throw std::runtime_error("adam: missing gradient for parameter '" + name + "'");
    auto g = param.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    auto value = param.mutable_data();
    const double lr = lr_of(name);
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
    }
  }
}

double cosine_lr(int64_t step, int64_t total_steps, double lr_init, double lr_floor) {
  if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
  if (total_steps == 0) return lr_init;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_floor + 0.5 * (lr_init - lr_floor) * (1.0 + std::cos(M_PI * t));
}

namespace {

constexpr char kMagic[4] = {'M', 'P', 'U', '1'};

void write_bytes(std::ostream& out, const void* p, size_t len) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
}

void read_bytes(std::istream& in, void* p, size_t len, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
  if (static_cast<size_t>(in.gcount()) != len)
    throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
}

void write_u32(std::ostream& out, uint32_t v) { write_bytes(out, &v, 4); }
uint32_t read_u32(std::istream& in, const char* what) {
  uint32_t v = 0;
  read_bytes(in, &v, 4, what);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

std::string read_string(std::istream& in, const char* what) {
  const uint32_t len = read_u32(in, what);
  std::string s(len, '\0');
  read_bytes(in, s.data(), len, what);
  return s;
}

void write_tensor(std::ostream& out, const std::string& name, const Shape& shape,
                  std::span<const double> data) {
  write_string(out, name);
  write_u32(out, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) write_bytes(out, &d, 8);
  write_bytes(out, data.data(), data.size() * 8);
}

nlohmann::json net_config_json(const NetConfig& c) {
  return {{"k", c.k},
          {"channels", c.channels},
          {"n_blocks", c.n_blocks},
          {"meta_block_index", c.meta_block_index},
          {"r_max", c.r_max},
          {"c_hidden", c.c_hidden},
          {"kernel", c.kernel},
          {"scale_encoding", c.scale_encoding == ScaleEncoding::kAllR ? "all_r" : "paired"}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.k = j.at("k").get<int64_t>();
  c.channels = j.at("channels").get<int64_t>();
  c.n_blocks = j.at("n_blocks").get<int64_t>();
  c.meta_block_index = j.at("meta_block_index").get<int64_t>();
  c.r_max = j.at("r_max").get<int64_t>();
  c.c_hidden = j.at("c_hidden").get<int64_t>();
  c.kernel = j.at("kernel").get<int64_t>();
  c.scale_encoding = j.at("scale_encoding").get<std::string>() == "all_r"
                         ? ScaleEncoding::kAllR
                         : ScaleEncoding::kPaired;
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  write_bytes(out, kMagic, 4);
  write_u32(out, kCheckpointVersion);

  nlohmann::json j;
  j["net"] = net_config_json(ckpt.net);
  j["adam"] = {{"beta1", ckpt.adam.beta1},
               {"beta2", ckpt.adam.beta2},
               {"eps", ckpt.adam.eps},
               {"step", ckpt.adam.step}};
  j["rng_state"] = ckpt.rng_state;
  j["step"] = ckpt.step;
  write_string(out, j.dump());

  const auto names = ckpt.params.names();
  uint32_t count = static_cast<uint32_t>(names.size());
  for (const auto& name : names) {
    if (ckpt.adam.m.count(name)) ++count;
    if (ckpt.adam.v.count(name)) ++count;
  }
  write_u32(out, count);
  for (const auto& name : names) {
    const Tensor& t = ckpt.params.at(name);
    write_tensor(out, name, t.shape(), t.data());
    if (auto it = ckpt.adam.m.find(name); it != ckpt.adam.m.end())
      write_tensor(out, "adam.m." + name, {static_cast<int64_t>(it->second.size())}, it->second);
    if (auto it = ckpt.adam.v.find(name); it != ckpt.adam.v.end())
      write_tensor(out, "adam.v." + name, {static_cast<int64_t>(it->second.size())}, it->second);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                             " does not match supported version " +
                             std::to_string(kCheckpointVersion));

  const std::string config_text = read_string(in, "config block");
  const nlohmann::json j = nlohmann::json::parse(config_text);
  Checkpoint ckpt;
  ckpt.net = net_config_from_json(j.at("net"));
  ckpt.adam.beta1 = j.at("adam").at("beta1").get<double>();
  ckpt.adam.beta2 = j.at("adam").at("beta2").get<double>();
  ckpt.adam.eps = j.at("adam").at("eps").get<double>();
  ckpt.adam.step = j.at("adam").at("step").get<int64_t>();
  ckpt.rng_state = j.at("rng_state").get<std::string>();
  ckpt.step = j.at("step").get<int64_t>();

  const uint32_t count = read_u32(in, "tensor count");
  for (uint32_t t = 0; t < count; ++t) {
    const std::string name = read_string(in, "tensor name");
    const uint32_t rank = read_u32(in, "tensor rank");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) read_bytes(in, &shape[d], 8, "tensor dims");
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    read_bytes(in, data.data(), data.size() * 8, name.c_str());
    if (name.rfind("adam.m.", 0) == 0) {
      ckpt.adam.m[name.substr(7)] = std::move(data);
    } else if (name.rfind("adam.v.", 0) == 0) {
      ckpt.adam.v[name.substr(7)] = std::move(data);
    } else {
      ckpt.params.insert(name, Tensor(std::move(shape), std::move(data)));
    }
  }
  return ckpt;
}

namespace {

double grad_global_norm(const ParamStore& params) {
  double acc = 0;
  for (const auto& [name, t] : params)
    for (double g : t.grad()) acc += g * g;
  return std::sqrt(acc);
}

void scale_grads(ParamStore& params, double factor) {
  for (auto& [name, t] : params) {
    auto* node = t.node().get();
    for (double& g : node->grad) g *= factor;
  }
}

}  // namespace

TrainResult train_loop(const DatasetManifest& manifest, const NetConfig& net_cfg,
                       const TrainConfig& train_cfg, Checkpoint* resume_from,
                       const std::string& periodic_ckpt_path,
                       const std::function<void(const StepTrace&)>& on_step) {
  net_cfg.validate();
  const auto train_records = manifest.split("train");
  if (train_records.empty()) throw std::runtime_error("train: manifest has no train patches");

  std::vector<PointCloud> dense;
  dense.reserve(train_records.size());
  for (const auto& rec : train_records) dense.push_back(read_xyz(rec.path));

  const int64_t n_train = static_cast<int64_t>(dense.size());
  const int64_t steps_per_epoch = std::max<int64_t>(1, (n_train + train_cfg.batch_size - 1) /
                                                            train_cfg.batch_size);
  int64_t total_steps = train_cfg.epochs * steps_per_epoch;
  if (train_cfg.max_steps >= 0) total_steps = std::min(total_steps, train_cfg.max_steps);

  const auto scales = scale_set(net_cfg.r_max, train_cfg.scale_stride);

  Rng rng(train_cfg.seed);
  Checkpoint ckpt;
  if (resume_from) {
    ckpt = std::move(*resume_from);
    rng.set_state(ckpt.rng_state);
  } else {
    ckpt.net = net_cfg;
    ckpt.params = init_params(net_cfg, rng);
  }

  AugmentConfig aug_cfg;
  aug_cfg.enabled = train_cfg.augment;

  TrainResult result;
  for (int64_t step = ckpt.step + 1; step <= total_steps; ++step) {
    ckpt.params.zero_grad();

    const double r = scales[rng.uniform_int(static_cast<int64_t>(scales.size()))];
    Tensor batch_loss;
    StepTrace trace;
    trace.step = step;
    trace.r = r;
    for (int64_t b = 0; b < train_cfg.batch_size; ++b) {
      const int64_t pick = rng.uniform_int(n_train);
      TrainingPair pair = make_training_pair(dense[pick], r, manifest.n_max, rng);
      pair = augment(pair, rng, aug_cfg);

      ForwardResult fwd = metapu_forward(pair.input, r, ckpt.params, net_cfg);
      LossBreakdown parts;
      Tensor item = compound_loss(to_tensor(pair.target), fwd.output, train_cfg.loss,
                                  nullptr, &parts);
      trace.rec += parts.rec / static_cast<double>(train_cfg.batch_size);
      trace.uni += parts.uni / static_cast<double>(train_cfg.batch_size);
      trace.rep += parts.rep / static_cast<double>(train_cfg.batch_size);
      batch_loss = b == 0 ? item : add(batch_loss, item);
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(train_cfg.batch_size));
    trace.loss = batch_loss.item();
    if (!std::isfinite(trace.loss)) {
      const std::string dump = periodic_ckpt_path.empty()
                                   ? "nonfinite_batch.json"
                                   : periodic_ckpt_path + ".nonfinite_batch.json";
      nlohmann::json diag{{"step", step}, {"r", r}, {"loss", trace.loss}};
      std::ofstream(dump) << diag.dump(2);
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                               " (R=" + std::to_string(r) + "); diagnostics in " + dump);
    }

    backward(batch_loss);
    if (train_cfg.clip_norm > 0) {
      const double norm = grad_global_norm(ckpt.params);
      if (norm > train_cfg.clip_norm) scale_grads(ckpt.params, train_cfg.clip_norm / norm);
    }

    trace.lr_fc = cosine_lr(step, total_steps, train_cfg.lr_fc, train_cfg.lr_floor);
    trace.lr_other = cosine_lr(step, total_steps, train_cfg.lr_other, train_cfg.lr_floor);
    adam_step(ckpt.params, ckpt.adam, [&](const std::string& name) {
      return is_meta_fc_param(name) ? trace.lr_fc : trace.lr_other;
    });

    ckpt.step = step;
    ckpt.rng_state = rng.state();
    result.trace.push_back(trace);
    if (on_step) on_step(trace);
    if (train_cfg.checkpoint_every > 0 && !periodic_ckpt_path.empty() &&
        step % train_cfg.checkpoint_every == 0)
      save_checkpoint(periodic_ckpt_path + ".step" + std::to_string(step), ckpt);
  }

  if (ckpt.rng_state.empty()) ckpt.rng_state = rng.state();
  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace pcu
