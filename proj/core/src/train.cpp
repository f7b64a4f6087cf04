#include "lsanet/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "lsanet/checkpoint.hpp"

namespace lsanet {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

constexpr uint64_t kShuffleTag = 0x73687566ULL;
constexpr uint64_t kAugmentTag = 0x6175676dULL;
constexpr uint64_t kDropoutTag = 0x64726f70ULL;

}  // namespace

PointCloud train_augmented_cloud(const PointCloud& cloud, uint64_t run_seed, int epoch,
                                 int64_t cloud_id, const AugmentOptions& aug) {
  const uint64_t s = mix_seed(mix_seed(run_seed, kAugmentTag),
                              mix_seed(static_cast<uint64_t>(epoch), static_cast<uint64_t>(cloud_id)));
  return augment(cloud, s, aug);
}

TrainResult train_run(LsaNet<float>& net, Adam<float>& adam,
                      std::span<const PointCloud> train_clouds,
                      std::span<const PointCloud> test_clouds, const TrainOptions& opts,
                      int start_epoch) {
  LSANET_CHECK(!train_clouds.empty(), "train: empty training set");
  LSANET_CHECK(opts.batch_size >= 1, "train: batch_size must be >= 1");
  TrainResult result;
  const int64_t n_train = static_cast<int64_t>(train_clouds.size());
  adam.schedule = opts.lr;  // the run options own the schedule

  TensorRegistry<float> reg = net.registry();
  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    metrics.open(opts.out_dir + "/metrics.jsonl", std::ios::app);
    LSANET_CHECK(metrics.is_open(), "train: cannot open metrics file under " << opts.out_dir);
  }

  for (int epoch = start_epoch; epoch < opts.epochs; ++epoch) {
    const double t0 = now_seconds();
    std::vector<int64_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(mix_seed(opts.seed, kShuffleTag), static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0;
    int64_t steps = 0;
    for (int64_t start = 0; start < n_train; start += opts.batch_size) {
      const int64_t end = std::min(n_train, start + static_cast<int64_t>(opts.batch_size));
      std::vector<PointCloud> batch(end - start);
      std::vector<int> labels(end - start);
      parallel_for(end - start, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
          const int64_t id = order[start + i];
          batch[i] = train_augmented_cloud(train_clouds[id], opts.seed, epoch, id, opts.aug);
          labels[i] = train_clouds[id].label;
        }
      }, 1);

      BatchGroupings<float> groupings = compute_groupings<float>(batch, net.config());
      Tape<float> tape;
      Rng drop_rng(mix_seed(mix_seed(opts.seed, kDropoutTag),
                            mix_seed(static_cast<uint64_t>(epoch), static_cast<uint64_t>(steps))));
      FwdCtx<float> ctx;
      ctx.tape = &tape;
      ctx.mode = Mode::kTrain;
      ctx.rng = &drop_rng;
      Tensor<float> logits = net.forward(groupings, ctx);
      Tensor<float> loss = ops::cross_entropy(logits, labels, &tape);
      const double loss_v = static_cast<double>(loss.item());
      if (!std::isfinite(loss_v)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
        result.epochs_run = epoch - start_epoch;
        return result;  // previous epoch's checkpoint stays the last good one
      }
      tape.backward(loss);
      std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg;
      pg.reserve(reg.learnable.size());
      for (auto& [name, t] : reg.learnable) pg.emplace_back(t, &tape.grad(*t));
      if (!adam.step(pg, epoch)) {
        result.aborted = true;
        result.abort_reason = "non-finite gradient at epoch " + std::to_string(epoch);
        result.epochs_run = epoch - start_epoch;
        return result;
      }
      loss_sum += loss_v;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / std::max<int64_t>(1, steps);
    rec.lr = opts.lr.lr_for_epoch(epoch);
    if (opts.eval_every > 0 && !test_clouds.empty() &&
        ((epoch - start_epoch) % opts.eval_every == 0 || epoch + 1 == opts.epochs ||
         opts.target_oa > 0)) {
      Metrics m = evaluate(net, test_clouds, test_clouds[0].size(), mix_seed(opts.seed, 0xe7a1ULL));
      rec.test_oa = m.oa;
      rec.test_ma = m.ma;
    }
    rec.seconds = now_seconds() - t0;
    result.history.push_back(rec);
    result.epochs_run = epoch - start_epoch + 1;

    if (metrics.is_open()) {
      metrics << "{\"epoch\":" << rec.epoch << ",\"loss\":" << rec.loss << ",\"lr\":" << rec.lr
              << ",\"test_oa\":" << rec.test_oa << ",\"test_ma\":" << rec.test_ma
              << ",\"seconds\":" << rec.seconds << "}\n";
      metrics.flush();
    }
    if (opts.verbose) {
      std::cerr << "epoch " << rec.epoch << " loss " << rec.loss << " lr " << rec.lr;
      if (rec.test_oa >= 0) std::cerr << " test_oa " << rec.test_oa << " test_ma " << rec.test_ma;
      std::cerr << " (" << rec.seconds << "s)\n";
    }
    if (!opts.out_dir.empty()) {
      save_model_checkpoint(opts.out_dir + "/last.lsan", net, &adam);
      if (opts.ckpt_every > 0 && (epoch + 1) % opts.ckpt_every == 0)
        save_model_checkpoint(opts.out_dir + "/ckpt_epoch" + std::to_string(epoch + 1) + ".lsan",
                              net, &adam);
      if (opts.on_checkpoint) opts.on_checkpoint(epoch + 1, adam.step_count());
    }
    if (opts.target_oa > 0 && rec.test_oa >= opts.target_oa) {
      result.reached_target = true;
      break;
    }
  }
  return result;
}

void save_model_checkpoint(const std::string& path, LsaNet<float>& net, Adam<float>* adam) {
  TensorRegistry<float> reg = net.registry();
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (auto& [name, t] : reg.learnable) tensors.emplace_back(name, t);
  for (auto& [name, t] : reg.state) tensors.emplace_back(name, t);
  if (adam && !adam->first_moments().empty()) {
    LSANET_CHECK(adam->first_moments().size() == reg.learnable.size(),
                 "checkpoint: optimizer moment count does not match parameter count");
    for (size_t i = 0; i < reg.learnable.size(); ++i) {
      tensors.emplace_back("optim/" + reg.learnable[i].first + "/m", &adam->first_moments()[i]);
      tensors.emplace_back("optim/" + reg.learnable[i].first + "/v", &adam->second_moments()[i]);
    }
  }
  save_checkpoint(path, tensors);
}

void load_model_checkpoint(const std::string& path, LsaNet<float>& net, Adam<float>* adam) {
  auto stored = load_checkpoint<float>(path);
  TensorRegistry<float> reg = net.registry();
  std::vector<std::pair<std::string, Tensor<float>*>> dst;
  for (auto& [name, t] : reg.learnable) dst.emplace_back(name, t);
  for (auto& [name, t] : reg.state) dst.emplace_back(name, t);
  restore_into(stored, dst);
  if (!adam) return;
  bool has_moments = false;
  for (auto& [name, t] : stored)
    if (name.rfind("optim/", 0) == 0) {
      has_moments = true;
      break;
    }
  if (!has_moments) return;
  auto& m = adam->first_moments();
  auto& v = adam->second_moments();
  if (m.empty()) {
    for (auto& [name, t] : reg.learnable) {
      m.push_back(Tensor<float>::zeros(t->shape()));
      v.push_back(Tensor<float>::zeros(t->shape()));
    }
  }
  std::vector<std::pair<std::string, Tensor<float>*>> mdst;
  for (size_t i = 0; i < reg.learnable.size(); ++i) {
    mdst.emplace_back("optim/" + reg.learnable[i].first + "/m", &m[i]);
    mdst.emplace_back("optim/" + reg.learnable[i].first + "/v", &v[i]);
  }
  restore_into(stored, mdst);
}

std::vector<DensityRow> density_sweep(LsaNet<float>& net, std::span<const PointCloud> clouds,
                                      std::span<const int64_t> point_counts, uint64_t seed) {
  std::vector<DensityRow> rows;
  for (int64_t count : point_counts) {
    Metrics m = evaluate(net, clouds, count, mix_seed(seed, static_cast<uint64_t>(count)));
    rows.push_back({count, m.oa, m.ma});
  }
  return rows;
}

void write_density_csv(std::ostream& os, const std::vector<DensityRow>& rows) {
  os << "points,oa,ma\n";
  for (const DensityRow& r : rows) os << r.points << "," << r.oa << "," << r.ma << "\n";
}

void export_sdw(LsaNet<float>& net, const PointCloud& cloud, int layer, std::ostream& os) {
  LSANET_CHECK(layer >= 0 && layer < static_cast<int>(net.config().layers.size()),
               "export_sdw: layer " << layer << " out of range");
  LSANET_CHECK(net.config().use_lsa, "export_sdw: model was built without the SDW branch");
  std::vector<PointCloud> batch = {cloud};
  BatchGroupings<float> groupings = compute_groupings<float>(batch, net.config());
  SdwRecord<float> record;
  FwdCtx<float> ctx;
  ctx.sdw_record = &record;
  net.set_sdw_record_layer(layer);
  (void)net.forward(groupings, ctx);
  LSANET_CHECK(!record.levels.empty(), "export_sdw: no SDW levels captured");
  const Tensor<float>& e1 = record.levels.front();  // (1, M, K, F1)
  const StageTensors<float>& st = groupings.stages[layer];
  const int64_t m = st.m, k = st.k, f = e1.dim(3);
  os << "region,slot,dx,dy,dz";
  for (int64_t j = 0; j < f; ++j) os << ",e" << j;
  os << "\n";
  for (int64_t r = 0; r < m; ++r)
    for (int64_t s = 0; s < k; ++s) {
      const float* rel = st.rel.data() + (r * k + s) * 3;
      os << r << "," << s << "," << rel[0] << "," << rel[1] << "," << rel[2];
      const float* ev = e1.data() + (r * k + s) * f;
      for (int64_t j = 0; j < f; ++j) os << "," << ev[j];
      os << "\n";
    }
}

}  // namespace lsanet
