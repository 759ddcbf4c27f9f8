#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pcu/data.hpp"
#include "pcu/loss.hpp"
#include "pcu/net.hpp"
#include "pcu/rng.hpp"

namespace pcu {

struct TrainConfig {
  int64_t epochs = 60;
  int64_t batch_size = 18;
  double lr_fc = 1e-3;      // meta-subnetwork FC layers
  double lr_other = 1e-4;   // convolutions and everything else
  double lr_floor = 1e-5;
  double scale_stride = 0.1;
  LossConfig loss;
  uint64_t seed = 0;
  int64_t max_steps = -1;       // when >= 0, caps the total step count
  int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  bool augment = true;
  double clip_norm = 5.0;
};

/// Scale set {1.1, 1.2, ..., R_max} with the configured stride.
std::vector<double> scale_set(int64_t r_max, double stride = 0.1);

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// lr_of(name) gives the per-group learning rate for this step.
void adam_step(ParamStore& params, AdamState& state,
               const std::function<double(const std::string&)>& lr_of);

double cosine_lr(int64_t step, int64_t total_steps, double lr_init, double lr_floor);

bool is_meta_fc_param(const std::string& name);

struct Checkpoint {
  NetConfig net;
  ParamStore params;
  AdamState adam;
  std::string rng_state;
  int64_t step = 0;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct StepTrace {
  int64_t step = 0;
  double r = 0;
  double loss = 0, rec = 0, uni = 0, rep = 0;
  double lr_fc = 0, lr_other = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepTrace> trace;
};

/// Variable-scale loop: each batch draws one R shared by all items, builds
/// pairs at that R, augments, and optimizes the compound loss.
TrainResult train_loop(const DatasetManifest& manifest, const NetConfig& net_cfg,
                       const TrainConfig& train_cfg, Checkpoint* resume_from = nullptr,
                       const std::string& periodic_ckpt_path = "",
                       const std::function<void(const StepTrace&)>& on_step = nullptr);

}  // namespace pcu
