// Command-line surface: train / eval / density / export-sdw / gradcheck /
// params. LSANET_THREADS caps worker count for every subcommand.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lsanet/gradcheck.hpp"
#include "lsanet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lsanet;

namespace {

struct DatasetSpecCli {
  std::string kind = "synth";  // "synth" or "off"
  std::string path;            // OFF root (kind == "off")
  std::string test_path;       // optional separate OFF test root
  int n_train = 512;
  int n_test = 128;
  int n_points = 1024;
  float noise_sigma = 0.02f;
  uint64_t seed = 7;
};

json dataset_to_json(const DatasetSpecCli& d) {
  return json{{"kind", d.kind},         {"path", d.path},
              {"test_path", d.test_path}, {"n_train", d.n_train},
              {"n_test", d.n_test},     {"n_points", d.n_points},
              {"noise_sigma", d.noise_sigma}, {"seed", d.seed}};
}

DatasetSpecCli dataset_from_json(const json& j) {
  DatasetSpecCli d;
  d.kind = j.value("kind", "synth");
  d.path = j.value("path", "");
  d.test_path = j.value("test_path", "");
  d.n_train = j.value("n_train", 512);
  d.n_test = j.value("n_test", 128);
  d.n_points = j.value("n_points", 1024);
  d.noise_sigma = j.value("noise_sigma", 0.02f);
  d.seed = j.value("seed", uint64_t{7});
  return d;
}

std::pair<Dataset, Dataset> build_dataset(const DatasetSpecCli& d) {
  if (d.kind == "synth") {
    SyntheticSpec spec;
    spec.n_points = d.n_points;
    spec.noise_sigma = d.noise_sigma;
    return synth_dataset(spec, d.n_train, d.n_test, d.seed);
  }
  LSANET_CHECK(d.kind == "off", "dataset kind must be \"synth\" or \"off\", got " << d.kind);
  Dataset train = load_off_dir(d.path, d.n_points, d.seed);
  Dataset test =
      d.test_path.empty() ? train : load_off_dir(d.test_path, d.n_points, mix_seed(d.seed, 1));
  return {std::move(train), std::move(test)};
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  LSANET_CHECK(is.is_open(), "cannot open " << path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// The config file is the NetworkConfig JSON; optional "dataset" / "train"
/// sections carry run defaults that CLI flags override.
struct LoadedConfig {
  NetworkConfig net;
  DatasetSpecCli dataset;
  int batch_size = 32;
};

LoadedConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  LoadedConfig out;
  out.net = parse_network_config(text);
  json j = json::parse(text);
  if (j.contains("dataset")) out.dataset = dataset_from_json(j["dataset"]);
  if (j.contains("train")) out.batch_size = j["train"].value("batch_size", 32);
  return out;
}

struct RunRecord {
  NetworkConfig net;
  DatasetSpecCli dataset;
  uint64_t seed = 1;
  int epochs = 0;
  int batch_size = 32;
  AugmentOptions aug;
  double target_oa = 0;
  int ckpt_every = 0;
  int next_epoch = 0;
  int64_t adam_step = 0;
};

void write_run_record(const std::string& out_dir, const RunRecord& r) {
  json j;
  j["config"] = json::parse(network_config_to_json(r.net));
  j["dataset"] = dataset_to_json(r.dataset);
  j["train"] = {{"seed", r.seed},
                {"epochs", r.epochs},
                {"batch_size", r.batch_size},
                {"rotate", r.aug.rotate_z},
                {"jitter_sigma", r.aug.jitter_sigma},
                {"jitter_clip", r.aug.jitter_clip},
                {"dropout_max_ratio", r.aug.dropout_max_ratio},
                {"target_oa", r.target_oa},
                {"ckpt_every", r.ckpt_every}};
  j["state"] = {{"next_epoch", r.next_epoch}, {"adam_step", r.adam_step}};
  j["threads"] = max_threads();
  std::ofstream os(out_dir + "/run.json");
  LSANET_CHECK(os.is_open(), "cannot write " << out_dir << "/run.json");
  os << j.dump(2) << "\n";
}

RunRecord read_run_record(const std::string& dir) {
  json j = json::parse(read_file(dir + "/run.json"));
  RunRecord r;
  r.net = parse_network_config(j["config"].dump());
  r.dataset = dataset_from_json(j["dataset"]);
  const json& t = j["train"];
  r.seed = t.value("seed", uint64_t{1});
  r.epochs = t.value("epochs", 0);
  r.batch_size = t.value("batch_size", 32);
  r.aug.rotate_z = t.value("rotate", false);
  r.aug.jitter_sigma = t.value("jitter_sigma", 0.0f);
  r.aug.jitter_clip = t.value("jitter_clip", 0.05f);
  r.aug.dropout_max_ratio = t.value("dropout_max_ratio", 0.0f);
  r.target_oa = t.value("target_oa", 0.0);
  r.ckpt_every = t.value("ckpt_every", 0);
  r.next_epoch = j["state"].value("next_epoch", 0);
  r.adam_step = j["state"].value("adam_step", int64_t{0});
  return r;
}

/// Model + run record from a checkpoint path (run.json sits next to it).
std::pair<LsaNet<float>, RunRecord> load_model(const std::string& ckpt_path) {
  const std::string dir = fs::path(ckpt_path).parent_path().string();
  RunRecord r = read_run_record(dir.empty() ? "." : dir);
  LsaNet<float> net(r.net, r.seed);
  load_model_checkpoint(ckpt_path, net, nullptr);
  return {std::move(net), std::move(r)};
}

Dataset eval_dataset(const RunRecord& r, const std::string& data_arg, int n_points) {
  DatasetSpecCli d = r.dataset;
  if (!data_arg.empty() && data_arg != "synth") {
    d.kind = "off";
    d.path = data_arg;
    d.test_path.clear();
    Dataset ds = load_off_dir(d.path, n_points > 0 ? n_points : d.n_points, d.seed);
    return ds;
  }
  auto [train, test] = build_dataset(d);
  return std::move(test);
}

std::vector<int64_t> parse_point_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    LSANET_CHECK(!item.empty(), "bad --points list \"" << text << "\"");
    out.push_back(std::stoll(item));
  }
  LSANET_CHECK(!out.empty(), "empty --points list");
  return out;
}

int cmd_train(const std::string& config_path, uint64_t seed, int epochs, const std::string& out_dir,
              bool no_sfe, bool no_lsa, bool no_region_encoder, bool no_pool_modulation,
              bool rotate, float dropout_aug, float jitter, int batch_size_override,
              double target_oa, int ckpt_every, bool resume, bool quiet) {
  RunRecord r;
  int start_epoch = 0;
  if (resume) {
    r = read_run_record(out_dir);
    start_epoch = r.next_epoch;
    if (epochs > 0) r.epochs = epochs;
    LSANET_CHECK(start_epoch < r.epochs,
                 "resume: run already finished (" << start_epoch << "/" << r.epochs << " epochs)");
  } else {
    LoadedConfig loaded = load_run_config(config_path);
    r.net = loaded.net;
    r.dataset = loaded.dataset;
    r.batch_size = loaded.batch_size;
    r.seed = seed;
    r.epochs = epochs;
    if (no_sfe) r.net.use_sfe = false;
    if (no_lsa) r.net.use_lsa = false;
    if (no_region_encoder) r.net.use_region_encoder = false;
    if (no_pool_modulation) r.net.use_modulated_pool = false;
    r.aug.rotate_z = rotate;
    r.aug.dropout_max_ratio = dropout_aug;
    r.aug.jitter_sigma = jitter;
    r.target_oa = target_oa;
    r.ckpt_every = ckpt_every;
  }
  if (batch_size_override > 0) r.batch_size = batch_size_override;

  auto [train_ds, test_ds] = build_dataset(r.dataset);
  LsaNet<float> net(r.net, r.seed);
  Adam<float> adam;
  if (resume) {
    load_model_checkpoint(out_dir + "/last.lsan", net, &adam);
    adam.set_step_count(r.adam_step);
  }

  TrainOptions opts;
  opts.epochs = r.epochs;
  opts.batch_size = r.batch_size;
  opts.aug = r.aug;
  opts.seed = r.seed;
  opts.out_dir = out_dir;
  opts.ckpt_every = r.ckpt_every;
  opts.target_oa = r.target_oa;
  opts.verbose = !quiet;
  fs::create_directories(out_dir);
  opts.on_checkpoint = [&](int next_epoch, int64_t adam_step) {
    r.next_epoch = next_epoch;
    r.adam_step = adam_step;
    write_run_record(out_dir, r);
  };
  if (!resume) write_run_record(out_dir, r);

  TrainResult result = train_run(net, adam, train_ds.clouds, test_ds.clouds, opts, start_epoch);
  if (result.aborted) {
    std::cerr << "train aborted: " << result.abort_reason << " (last checkpoint retained)\n";
    return 1;
  }
  if (!result.history.empty()) {
    const EpochRecord& last = result.history.back();
    std::cout << "trained " << result.epochs_run << " epochs, final loss " << last.loss;
    if (last.test_oa >= 0) std::cout << ", test OA " << last.test_oa << ", mA " << last.test_ma;
    std::cout << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, int64_t points) {
  auto [net, record] = load_model(ckpt);
  Dataset ds = eval_dataset(record, data, static_cast<int>(points));
  Metrics m = evaluate(net, ds.clouds, points, mix_seed(record.seed, 0xe7a1ULL));
  std::cout << "clouds " << ds.clouds.size() << " points " << points << " oa " << m.oa << " ma "
            << m.ma << "\n";
  return 0;
}

int cmd_density(const std::string& ckpt, const std::string& points_list, const std::string& data,
                const std::string& out_path) {
  auto [net, record] = load_model(ckpt);
  Dataset ds = eval_dataset(record, data, 0);
  std::vector<int64_t> counts = parse_point_list(points_list);
  auto rows = density_sweep(net, ds.clouds, counts, mix_seed(record.seed, 0xd3a5ULL));
  if (out_path.empty()) {
    write_density_csv(std::cout, rows);
  } else {
    std::ofstream os(out_path);
    LSANET_CHECK(os.is_open(), "cannot write " << out_path);
    write_density_csv(os, rows);
  }
  return 0;
}

int cmd_export_sdw(const std::string& ckpt, int layer, const std::string& out_path,
                   const std::string& data, int index) {
  auto [net, record] = load_model(ckpt);
  Dataset ds = eval_dataset(record, data, 0);
  LSANET_CHECK(index >= 0 && index < static_cast<int>(ds.clouds.size()),
               "cloud index " << index << " out of range (" << ds.clouds.size() << " clouds)");
  std::ofstream os(out_path);
  LSANET_CHECK(os.is_open(), "cannot write " << out_path);
  export_sdw(net, ds.clouds[index], layer, os);
  std::cout << "wrote SDW dump for layer " << layer << " to " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& scope_name, uint64_t seed, int n_seeds) {
  GradCheckScope scope;
  if (scope_name == "op") scope = GradCheckScope::kOp;
  else if (scope_name == "layer") scope = GradCheckScope::kLayer;
  else if (scope_name == "network") scope = GradCheckScope::kNetwork;
  else {
    std::cerr << "unknown --scope " << scope_name << " (want op|layer|network)\n";
    return 2;
  }
  std::vector<uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(mix_seed(seed, static_cast<uint64_t>(i)));
  auto reports = run_gradcheck_suite(scope, seeds);
  // worst relative error per target name
  std::map<std::string, double> worst;
  for (const FdReport& r : reports)
    for (const FdTarget& t : r.targets) {
      auto [it, inserted] = worst.emplace(t.name, t.max_rel_err);
      if (!inserted) it->second = std::max(it->second, t.max_rel_err);
    }
  bool pass = true;
  for (const auto& [name, err] : worst) {
    const bool ok = err < 1e-4;
    pass = pass && ok;
    std::cout << (ok ? "pass" : "FAIL") << "  " << name << "  worst_rel_err " << err << "\n";
  }
  std::cout << (pass ? "gradcheck passed" : "gradcheck FAILED") << " (" << worst.size()
            << " targets, " << n_seeds << " seeds)\n";
  return pass ? 0 : 1;
}

int cmd_params(const std::string& config_path) {
  LoadedConfig loaded = load_run_config(config_path);
  LsaNet<float> net(loaded.net, 0);
  for (const auto& [group, count] : net.parameter_breakdown())
    std::cout << group << "  " << count << "\n";
  const int64_t total = net.count_parameters();
  std::cout << "total  " << total << "  (" << total / 1.0e6 << "M)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSANet point-cloud classification kit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string config_path, out_dir;
  uint64_t seed = 1;
  int epochs = 60;
  bool no_sfe = false, no_lsa = false, no_region_encoder = false, no_pool_modulation = false;
  bool rotate = false, resume = false, quiet = false;
  float dropout_aug = 0.0f, jitter = 0.0f;
  int batch_size = 0, ckpt_every = 0;
  double target_oa = 0;
  train->add_option("--config", config_path, "network config JSON")->required();
  train->add_option("--seed", seed, "run seed");
  train->add_option("--epochs", epochs, "epochs to train");
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_flag("--no-sfe", no_sfe, "disable the SFE branch");
  train->add_flag("--no-lsa", no_lsa, "disable SDW modulation entirely");
  train->add_flag("--no-region-encoder", no_region_encoder, "SDWs from the point term only");
  train->add_flag("--no-pool-modulation", no_pool_modulation, "plain max pooling");
  train->add_flag("--rotate", rotate, "random rotation about the up axis");
  train->add_option("--dropout-aug", dropout_aug, "random input dropout max ratio (e.g. 0.875)");
  train->add_option("--jitter", jitter, "coordinate jitter sigma");
  train->add_option("--batch-size", batch_size, "override batch size");
  train->add_option("--target-oa", target_oa, "stop once test OA reaches this");
  train->add_option("--ckpt-every", ckpt_every, "numbered checkpoint cadence (epochs)");
  train->add_flag("--resume", resume, "resume from --out directory");
  train->add_flag("--quiet", quiet, "suppress per-epoch logging");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, data, out_file;
  int64_t points = 1024;
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "dataset: \"synth\" or an OFF directory");
  eval_cmd->add_option("--points", points, "points per cloud at evaluation");

  // density
  auto* density = app.add_subcommand("density", "accuracy vs point count sweep");
  std::string points_list = "1024,512,256,128,64";
  density->add_option("--ckpt", ckpt, "checkpoint file")->required();
  density->add_option("--points", points_list, "comma-separated point counts");
  density->add_option("--data", data, "dataset override");
  density->add_option("--out", out_file, "CSV output path (default stdout)");

  // export-sdw
  auto* export_cmd = app.add_subcommand("export-sdw", "dump first-level SDWs as CSV");
  int layer = 0, cloud_index = 0;
  export_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  export_cmd->add_option("--layer", layer, "layer index (0-based)");
  export_cmd->add_option("--out", out_file, "CSV output path")->required();
  export_cmd->add_option("--data", data, "dataset override");
  export_cmd->add_option("--index", cloud_index, "cloud index within the dataset");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string scope = "op";
  int n_seeds = 20;
  gradcheck->add_option("--scope", scope, "op|layer|network");
  gradcheck->add_option("--seed", seed, "base seed");
  gradcheck->add_option("--seeds", n_seeds, "number of seeds");

  // params
  auto* params = app.add_subcommand("params", "parameter count for a config");
  params->add_option("--config", config_path, "network config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(config_path, seed, epochs, out_dir, no_sfe, no_lsa, no_region_encoder,
                       no_pool_modulation, rotate, dropout_aug, jitter, batch_size, target_oa,
                       ckpt_every, resume, quiet);
    if (eval_cmd->parsed()) return cmd_eval(ckpt, data, points);
    if (density->parsed()) return cmd_density(ckpt, points_list, data, out_file);
    if (export_cmd->parsed()) return cmd_export_sdw(ckpt, layer, out_file, data, cloud_index);
    if (gradcheck->parsed()) return cmd_gradcheck(scope, seed, n_seeds);
    if (params->parsed()) return cmd_params(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
