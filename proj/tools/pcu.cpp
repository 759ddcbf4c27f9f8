#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcu/data.hpp"
#include "pcu/errors.hpp"
#include "pcu/metrics.hpp"
#include "pcu/net.hpp"
#include "pcu/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcu;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw CLI::ValidationError("--scales", "no scale factors given");
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Everything a run needs, fed from an optional JSON file then flags.
struct RunConfig {
  // net
  std::string profile = "tiny";
  int64_t k = -1, channels = -1, n_blocks = -1, meta_block = -1, r_max = -1, c_hidden = -1;
  std::string scale_encoding = "paired";
  // train
  int64_t epochs = -1, batch = -1, steps = -1, ckpt_every = 0;
  double lr_fc = -1, lr_other = -1, lr_floor = -1;
  bool no_augment = false;
  std::string rec_loss = "sinkhorn";  // or "chamfer"
  // loss / sinkhorn
  double lambda_rec = -1, lambda_uni = -1, lambda_rep = -1;
  double sink_eps = -1;
  int64_t sink_iters = -1;
  // shared
  uint64_t seed = 0;
  bool strict = false;

  NetConfig net() const {
    NetConfig cfg = profile == "paper" ? NetConfig{} : NetConfig::tiny();
    if (k > 0) cfg.k = k;
    if (channels > 0) cfg.channels = channels;
    if (n_blocks > 0) cfg.n_blocks = n_blocks;
    if (meta_block > 0) cfg.meta_block_index = meta_block;
    if (r_max > 0) cfg.r_max = r_max;
    if (c_hidden > 0) cfg.c_hidden = c_hidden;
    cfg.scale_encoding =
        scale_encoding == "all_r" ? ScaleEncoding::kAllR : ScaleEncoding::kPaired;
    return cfg;
  }

  TrainConfig train() const {
    TrainConfig cfg;
    if (epochs > 0) cfg.epochs = epochs;
    if (batch > 0) cfg.batch_size = batch;
    if (steps >= 0) cfg.max_steps = steps;
    cfg.checkpoint_every = ckpt_every;
    if (lr_fc > 0) cfg.lr_fc = lr_fc;
    if (lr_other > 0) cfg.lr_other = lr_other;
    if (lr_floor > 0) cfg.lr_floor = lr_floor;
    cfg.augment = !no_augment;
    cfg.seed = seed;
    if (lambda_rec >= 0) cfg.loss.weights.rec = lambda_rec;
    if (lambda_uni >= 0) cfg.loss.weights.uni = lambda_uni;
    if (lambda_rep >= 0) cfg.loss.weights.rep = lambda_rep;
    if (sink_eps > 0) cfg.loss.sinkhorn.epsilon = sink_eps;
    if (sink_iters > 0) cfg.loss.sinkhorn.max_iters = static_cast<int>(sink_iters);
    cfg.loss.chamfer_reconstruction = rec_loss == "chamfer";
    return cfg;
  }

  json echo() const {
    return {{"profile", profile},
            {"k", k},
            {"channels", channels},
            {"n_blocks", n_blocks},
            {"meta_block", meta_block},
            {"r_max", r_max},
            {"c_hidden", c_hidden},
            {"scale_encoding", scale_encoding},
            {"epochs", epochs},
            {"batch", batch},
            {"steps", steps},
            {"lr_fc", lr_fc},
            {"lr_other", lr_other},
            {"lr_floor", lr_floor},
            {"no_augment", no_augment},
            {"rec_loss", rec_loss},
            {"lambda_rec", lambda_rec},
            {"lambda_uni", lambda_uni},
            {"lambda_rep", lambda_rep},
            {"sink_eps", sink_eps},
            {"sink_iters", sink_iters},
            {"seed", seed},
            {"strict", strict}};
  }

  void load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    json j;
    in >> j;
    auto get = [&](const char* key, auto& slot) {
      if (j.contains(key)) slot = j[key].get<std::decay_t<decltype(slot)>>();
    };
    get("profile", profile);
    get("k", k);
    get("channels", channels);
    get("n_blocks", n_blocks);
    get("meta_block", meta_block);
    get("r_max", r_max);
    get("c_hidden", c_hidden);
    get("scale_encoding", scale_encoding);
    get("epochs", epochs);
    get("batch", batch);
    get("steps", steps);
    get("ckpt_every", ckpt_every);
    get("lr_fc", lr_fc);
    get("lr_other", lr_other);
    get("lr_floor", lr_floor);
    get("no_augment", no_augment);
    get("rec_loss", rec_loss);
    get("lambda_rec", lambda_rec);
    get("lambda_uni", lambda_uni);
    get("lambda_rep", lambda_rep);
    get("sink_eps", sink_eps);
    get("sink_iters", sink_iters);
    get("seed", seed);
    get("strict", strict);
  }
};

void add_common_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", "JSON config file (flags override it)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", rc.seed, "rng seed");
  cmd->add_flag("--strict", rc.strict, "treat numeric warnings as failures");
  cmd->add_option("--profile", rc.profile, "net profile: tiny|paper")
      ->check(CLI::IsMember({"tiny", "paper"}));
  cmd->add_option("--k", rc.k, "neighbor count");
  cmd->add_option("--channels", rc.channels, "feature channels");
  cmd->add_option("--blocks", rc.n_blocks, "RGC block count");
  cmd->add_option("--meta-block", rc.meta_block, "meta block position (1-based)");
  cmd->add_option("--r-max", rc.r_max, "maximum scale factor");
  cmd->add_option("--c-hidden", rc.c_hidden, "meta subnetwork hidden width");
  cmd->add_option("--scale-encoding", rc.scale_encoding, "paired|all_r")
      ->check(CLI::IsMember({"paired", "all_r"}));
}

// --config must apply before flag parsing so flags win
void preload_config(int argc, char** argv, RunConfig& rc) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") rc.load_json(argv[i + 1]);
}

void write_provenance(const std::string& beside, const json& extra, const RunConfig& rc) {
  json j;
  j["config"] = rc.echo();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream out(beside + ".provenance.json");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- dataset

struct MakeDatasetArgs {
  std::string out_dir;
  std::string builtin = "sphere,torus";
  std::string meshes_dir;
  int64_t patches = 100;
  int64_t n_max = 4096;
  int64_t dense_factor = 30;
  std::string split_mode = "model";
  bool force = false;
};

int cmd_make_dataset(const MakeDatasetArgs& args, const RunConfig& rc) {
  if (fs::exists(args.out_dir) && !fs::is_empty(args.out_dir) && !args.force) {
    std::cerr << "error: output directory " << args.out_dir
              << " is not empty (use --force)\n";
    return kExitUsage;
  }
  fs::create_directories(args.out_dir);

  struct Model {
    std::string name;
    TriMesh mesh;
  };
  std::vector<Model> models;
  if (!args.meshes_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.meshes_dir)) {
      const auto ext = entry.path().extension();
      if (ext == ".off" || ext == ".ply") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) models.push_back({f.stem().string(), read_mesh(f.string())});
    if (models.empty()) throw std::runtime_error("no .off/.ply meshes in " + args.meshes_dir);
  } else {
    for (const auto& name : split_csv(args.builtin))
      models.push_back({name, make_builtin_mesh(name)});
  }

  DatasetManifest manifest;
  manifest.n_max = args.n_max;
  manifest.patches_per_model = args.patches;
  manifest.n_dense = args.dense_factor * args.n_max;
  manifest.seed = rc.seed;
  manifest.generator = args.meshes_dir.empty() ? args.builtin : args.meshes_dir;

  Rng rng(rc.seed);
  const int64_t train_models =
      std::max<int64_t>(1, (2 * static_cast<int64_t>(models.size()) + 2) / 3);
  for (size_t m = 0; m < models.size(); ++m) {
    std::vector<std::pair<Vec3, double>> transforms;
    const auto patches =
        extract_patches(models[m].mesh, args.patches, manifest.n_dense, rng, &transforms);
    for (size_t p = 0; p < patches.size(); ++p) {
      const std::string file =
          (fs::path(args.out_dir) / (models[m].name + "_" + std::to_string(p) + ".xyz"))
              .string();
      write_xyz(file, patches[p]);
      PatchRecord rec;
      rec.path = file;
      rec.source = models[m].name;
      if (args.split_mode == "model") {
        rec.split = m < static_cast<size_t>(train_models) ? "train" : "test";
      } else {
        // hold out the tail fifth of each model's patches (at least one)
        const size_t test_count =
            patches.size() >= 2 ? std::max<size_t>(1, patches.size() / 5) : 0;
        rec.split = p >= patches.size() - test_count ? "test" : "train";
      }
      rec.centroid = transforms[p].first;
      rec.radius = transforms[p].second;
      manifest.patches.push_back(std::move(rec));
      std::cout << "patch " << file << " split=" << manifest.patches.back().split << "\n";
    }
  }
  const std::string manifest_path = (fs::path(args.out_dir) / "manifest.json").string();
  manifest.save(manifest_path);
  write_provenance(manifest_path, {{"command", "make-dataset"}}, rc);
  std::cout << "manifest " << manifest_path << " (" << manifest.patches.size()
            << " patches)\n";
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string manifest;
  std::string out_ckpt;
  std::string resume;
};

int cmd_train(const TrainArgs& args, const RunConfig& rc) {
  const DatasetManifest manifest = DatasetManifest::load(args.manifest);
  const NetConfig net = rc.net();
  TrainConfig train = rc.train();

  std::optional<Checkpoint> resume;
  if (!args.resume.empty()) resume = load_checkpoint(args.resume);

  const std::string trace_path = args.out_ckpt + ".trace.csv";
  // resume appends to the existing trace
  std::ofstream trace(trace_path, resume ? std::ios::app : std::ios::out);
  if (!resume) trace << "step,r,loss,rec,uni,rep,lr_fc,lr_other\n";
  trace.precision(12);

  TrainResult result = train_loop(
      manifest, net, train, resume ? &*resume : nullptr, args.out_ckpt,
      [&](const StepTrace& t) {
        trace << t.step << "," << t.r << "," << t.loss << "," << t.rec << "," << t.uni << ","
              << t.rep << "," << t.lr_fc << "," << t.lr_other << "\n";
        if (t.step % 10 == 0 || t.step == 1)
          std::cout << "step " << t.step << " R=" << t.r << " loss=" << t.loss << "\n";
      });

  save_checkpoint(args.out_ckpt, result.checkpoint);
  write_provenance(args.out_ckpt,
                   {{"command", "train"},
                    {"manifest", args.manifest},
                    {"final_step", result.checkpoint.step},
                    {"checkpoint_hash", hex64(fnv1a_file(args.out_ckpt))}},
                   rc);
  std::cout << "checkpoint " << args.out_ckpt << " at step " << result.checkpoint.step
            << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- upsample

struct UpsampleArgs {
  std::string ckpt;
  std::string in_xyz;
  std::string out_xyz;
  double scale = 0;
  double meta_scale = 0;  // 0 = follow --scale
};

int cmd_upsample(const UpsampleArgs& args, const RunConfig& rc) {
  const Checkpoint ckpt = load_checkpoint(args.ckpt);
  const PointCloud raw = read_xyz(args.in_xyz);
  const NormalizeResult norm = normalize_unit_sphere(raw);

  std::optional<double> meta;
  if (args.meta_scale > 0) meta = args.meta_scale;
  const PointCloud up = upsample(norm.cloud, args.scale, ckpt.params, ckpt.net, meta);
  write_xyz(args.out_xyz, denormalize(up, norm.centroid, norm.radius));
  write_provenance(args.out_xyz,
                   {{"command", "upsample"},
                    {"checkpoint", args.ckpt},
                    {"checkpoint_hash", hex64(fnv1a_file(args.ckpt))},
                    {"input", args.in_xyz},
                    {"scale", args.scale},
                    {"meta_scale", args.meta_scale > 0 ? json(args.meta_scale) : json()},
                    {"points", up.n()}},
                   rc);
  std::cout << "wrote " << up.n() << " points to " << args.out_xyz << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::string scales = "2,2.5,4";
  std::string mesh_dir;
  std::string report = "report.json";
  bool with_mesh_metrics = false;
};

TriMesh load_source_mesh(const std::string& source, const std::string& mesh_dir) {
  if (!mesh_dir.empty()) {
    for (const char* ext : {".off", ".ply"}) {
      const fs::path p = fs::path(mesh_dir) / (source + ext);
      if (fs::exists(p)) return read_mesh(p.string());
    }
    throw std::runtime_error("no mesh file for source '" + source + "' in " + mesh_dir);
  }
  return make_builtin_mesh(source);
}

int cmd_eval(const EvalArgs& args, const RunConfig& rc) {
  const Checkpoint ckpt = load_checkpoint(args.ckpt);
  const DatasetManifest manifest = DatasetManifest::load(args.manifest);
  const auto test_patches = manifest.split("test");
  if (test_patches.empty()) throw std::runtime_error("eval: manifest has no test split");

  SinkhornConfig emd_cfg;
  emd_cfg.epsilon = 1e-3;
  emd_cfg.max_iters = 500;

  json report;
  report["config"] = rc.echo();
  report["checkpoint"] = {{"path", args.ckpt}, {"hash", hex64(fnv1a_file(args.ckpt))}};
  report["manifest"] = args.manifest;
  report["scales"] = json::array();

  bool all_converged = true;
  for (double r : parse_scales(args.scales)) {
    json block;
    block["r"] = r;
    block["per_shape"] = json::array();
    double sum_cd = 0, sum_emd = 0, sum_f = 0, sum_nuc = 0, sum_dm = 0, sum_ds = 0;
    int64_t count = 0;
    Rng rng(rc.seed);
    for (const auto& patch : test_patches) {
      const PointCloud dense = read_xyz(patch.path);
      const TrainingPair pair = make_training_pair(dense, r, manifest.n_max, rng);
      const PointCloud out = upsample(pair.input, r, ckpt.params, ckpt.net);

      MetricReport m;
      Rng mesh_rng(rc.seed + 1);
      if (args.with_mesh_metrics) {
        const TriMesh mesh = load_source_mesh(patch.source, args.mesh_dir);
        // mesh metrics live in mesh coordinates
        const PointCloud out_mesh = denormalize(out, patch.centroid, patch.radius);
        m = evaluate_pair(out, pair.target, nullptr, emd_cfg, mesh_rng);
        m.has_mesh_metrics = true;
        m.nuc = nuc(out_mesh, mesh, 0.008, 100, mesh_rng);
        std::tie(m.dev_mean, m.dev_std) = deviation_stats(out_mesh, mesh);
      } else {
        m = evaluate_pair(out, pair.target, nullptr, emd_cfg, mesh_rng);
      }
      if (m.emd_method == "sinkhorn" &&
          std::find(m.flags.begin(), m.flags.end(), "emd_sinkhorn_not_converged") !=
              m.flags.end())
        all_converged = false;

      json shape = json::parse(m.to_json());
      shape["patch"] = patch.path;
      shape["n_in"] = pair.input.n();
      shape["n_out"] = out.n();
      block["per_shape"].push_back(shape);
      sum_cd += m.cd;
      sum_emd += m.emd;
      sum_f += m.fscore;
      sum_nuc += m.nuc;
      sum_dm += m.dev_mean;
      sum_ds += m.dev_std;
      ++count;
      std::cout << "eval r=" << r << " patch=" << patch.path << " cd=" << m.cd
                << " emd=" << m.emd << " fscore=" << m.fscore << "\n";
    }
    const double inv = 1.0 / static_cast<double>(count);
    block["aggregate"] = {{"cd", sum_cd * inv},       {"emd", sum_emd * inv},
                          {"fscore", sum_f * inv},    {"nuc_p008", sum_nuc * inv},
                          {"dev_mean", sum_dm * inv}, {"dev_std", sum_ds * inv}};
    report["scales"].push_back(block);
  }
  report["emd_converged"] = all_converged;

  std::ofstream out(args.report);
  out << report.dump(2) << "\n";
  write_provenance(args.report, {{"command", "eval"}}, rc);
  std::cout << "report " << args.report << "\n";
  if (!all_converged && rc.strict)
    throw NumericError("eval: sinkhorn EMD did not converge (strict mode)");
  return kExitOk;
}

// ------------------------------------------------------------- analyze-rf

struct AnalyzeRfArgs {
  std::string ckpt;
  std::string in_xyz;
  std::string scales = "2,4";
  std::string out_dir = "rf_out";
  int64_t point_index = -1;  // -1: seeded random choice
};

int cmd_analyze_rf(const AnalyzeRfArgs& args, const RunConfig& rc) {
  const Checkpoint ckpt = load_checkpoint(args.ckpt);
  const PointCloud raw = read_xyz(args.in_xyz);
  const PointCloud cloud = normalize_unit_sphere(raw).cloud;
  fs::create_directories(args.out_dir);

  Rng rng(rc.seed);
  const int64_t probe =
      args.point_index >= 0 ? args.point_index : rng.uniform_int(cloud.n());
  if (probe >= cloud.n()) throw std::runtime_error("analyze-rf: point index out of range");

  json summary;
  summary["probe_input_index"] = probe;
  summary["scales"] = json::array();
  for (double r : parse_scales(args.scales)) {
    // the probe's closest dense output is the centroid for this scale
    ForwardResult fwd = metapu_forward(cloud, r, ckpt.params, ckpt.net);
    const PointCloud dense = to_cloud(fwd.dense);
    int64_t centroid = 0;
    for (int64_t i = 1; i < dense.n(); ++i)
      if (dist2(dense[i], cloud[probe]) < dist2(dense[centroid], cloud[probe])) centroid = i;

    const ReceptiveField rf = receptive_field(cloud, r, ckpt.params, ckpt.net, centroid);

    std::ostringstream name;
    name << "rf_scale" << r << ".xyz";
    const std::string path = (fs::path(args.out_dir) / name.str()).string();
    std::ofstream out(path);
    out.precision(17);
    for (int64_t i = 0; i < cloud.n(); ++i) {
      // label: 2 = probe centroid, 1 = in field, 0 = outside
      const int label = i == probe ? 2 : rf.indices.count(i) ? 1 : 0;
      out << cloud[i].x << " " << cloud[i].y << " " << cloud[i].z << " " << label << "\n";
    }
    summary["scales"].push_back({{"r", r},
                                 {"field_size", rf.indices.size()},
                                 {"threshold", rf.threshold},
                                 {"centroid_output_index", centroid},
                                 {"labels", path}});
    std::cout << "rf r=" << r << " field_size=" << rf.indices.size() << " -> " << path
              << "\n";
  }
  const std::string summary_path = (fs::path(args.out_dir) / "summary.json").string();
  std::ofstream out(summary_path);
  out << summary.dump(2) << "\n";
  write_provenance(summary_path,
                   {{"command", "analyze-rf"},
                    {"checkpoint_hash", hex64(fnv1a_file(args.ckpt))}},
                   rc);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arbitrary-scale point cloud upsampling"};
  app.require_subcommand(1);

  RunConfig rc;
  try {
    preload_config(argc, argv, rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }

  MakeDatasetArgs mk;
  auto* mk_cmd = app.add_subcommand("make-dataset", "extract training patches from meshes");
  mk_cmd->add_option("--out", mk.out_dir, "output directory")->required();
  mk_cmd->add_option("--builtin", mk.builtin, "builtin meshes (sphere,torus,plane,cylinder)");
  mk_cmd->add_option("--meshes", mk.meshes_dir, "directory of .off/.ply meshes");
  mk_cmd->add_option("--patches", mk.patches, "patches per model");
  mk_cmd->add_option("--n-max", mk.n_max, "maximum points per training pair");
  mk_cmd->add_option("--dense-factor", mk.dense_factor, "dense samples per n_max");
  mk_cmd->add_option("--split", mk.split_mode, "split granularity: model|patch")
      ->check(CLI::IsMember({"model", "patch"}));
  mk_cmd->add_flag("--force", mk.force, "write into a nonempty directory");
  add_common_options(mk_cmd, rc);

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "variable-scale training loop");
  tr_cmd->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  tr_cmd->add_option("--out", tr.out_ckpt, "output checkpoint path")->required();
  tr_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
  tr_cmd->add_option("--epochs", rc.epochs, "training epochs");
  tr_cmd->add_option("--batch", rc.batch, "batch size");
  tr_cmd->add_option("--steps", rc.steps, "cap on total steps");
  tr_cmd->add_option("--ckpt-every", rc.ckpt_every, "periodic checkpoint stride");
  tr_cmd->add_option("--lr-fc", rc.lr_fc, "learning rate for meta FC layers");
  tr_cmd->add_option("--lr-other", rc.lr_other, "learning rate elsewhere");
  tr_cmd->add_option("--lr-floor", rc.lr_floor, "cosine annealing floor");
  tr_cmd->add_flag("--no-augment", rc.no_augment, "disable data augmentation");
  tr_cmd->add_option("--rec-loss", rc.rec_loss, "reconstruction term: sinkhorn|chamfer")
      ->check(CLI::IsMember({"sinkhorn", "chamfer"}));
  tr_cmd->add_option("--lambda-rec", rc.lambda_rec, "reconstruction weight");
  tr_cmd->add_option("--lambda-uni", rc.lambda_uni, "uniformity weight");
  tr_cmd->add_option("--lambda-rep", rc.lambda_rep, "repulsion weight");
  add_common_options(tr_cmd, rc);

  UpsampleArgs up;
  auto* up_cmd = app.add_subcommand("upsample", "upsample a point cloud");
  up_cmd->add_option("--ckpt", up.ckpt, "checkpoint")->required();
  up_cmd->add_option("--in", up.in_xyz, "input xyz file")->required();
  up_cmd->add_option("--out", up.out_xyz, "output xyz file")->required();
  up_cmd->add_option("--scale", up.scale, "scale factor R")->required();
  up_cmd->add_option("--meta-scale", up.meta_scale,
                     "feed the meta block this scale instead of --scale");
  add_common_options(up_cmd, rc);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "metrics over the test split");
  ev_cmd->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  ev_cmd->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  ev_cmd->add_option("--scales", ev.scales, "comma-separated scale factors");
  ev_cmd->add_option("--report", ev.report, "output report path");
  ev_cmd->add_option("--mesh-dir", ev.mesh_dir, "meshes for NUC/deviation");
  ev_cmd->add_flag("--mesh-metrics", ev.with_mesh_metrics,
                   "include NUC and deviation (builtin sources or --mesh-dir)");
  add_common_options(ev_cmd, rc);

  AnalyzeRfArgs rf;
  auto* rf_cmd = app.add_subcommand("analyze-rf", "gradient receptive-field probe");
  rf_cmd->add_option("--ckpt", rf.ckpt, "checkpoint")->required();
  rf_cmd->add_option("--in", rf.in_xyz, "input xyz file")->required();
  rf_cmd->add_option("--scales", rf.scales, "comma-separated scale factors");
  rf_cmd->add_option("--out", rf.out_dir, "output directory")->required();
  rf_cmd->add_option("--point-index", rf.point_index, "probe input point (default: seeded)");
  add_common_options(rf_cmd, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (mk_cmd->parsed()) return cmd_make_dataset(mk, rc);
    if (tr_cmd->parsed()) return cmd_train(tr, rc);
    if (up_cmd->parsed()) return cmd_upsample(up, rc);
    if (ev_cmd->parsed()) return cmd_eval(ev, rc);
    if (rf_cmd->parsed()) return cmd_analyze_rf(rf, rc);
  } catch (const pcu::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
