#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lsanet/dataset.hpp"
#include "lsanet/network.hpp"
#include "lsanet/optim.hpp"

namespace lsanet {

struct TrainOptions {
  int epochs = 60;
  int batch_size = 32;
  AugmentOptions aug;
  LrSchedule lr;
  uint64_t seed = 1;
  std::string out_dir;      // empty: keep everything in memory, write nothing
  int ckpt_every = 0;       // extra numbered checkpoints every N epochs (0 = off)
  int eval_every = 1;       // test-set evaluation cadence in epochs (0 = off)
  double target_oa = 0.0;   // stop once test OA reaches this (0 = run all epochs)
  bool verbose = false;
  /// Called after each epoch's checkpoint lands; lets the caller keep its run
  /// record (next epoch, optimizer step count) in lockstep.
  std::function<void(int next_epoch, int64_t adam_step)> on_checkpoint;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double lr = 0;
  double test_oa = -1;  // -1 when evaluation was skipped this epoch
  double test_ma = -1;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  bool aborted = false;
  std::string abort_reason;
  bool reached_target = false;
  int epochs_run = 0;
};

/// Per-epoch: seeded shuffle, per-cloud augmentation, forward, cross-entropy,
/// backward, Adam at the scheduled lr. Epoch records append to
/// out_dir/metrics.jsonl (one self-describing line each, flushed), model and
/// optimizer land in out_dir/last.lsan after every epoch. A non-finite loss
/// or gradient aborts the run and leaves the previous checkpoint in place.
///
/// All randomness derives from (seed, epoch, cloud id / step), never from
/// run history, so a resume from (checkpoint, start_epoch) reproduces the
/// original schedule bit-identically at a fixed thread count, and flag
/// variants of one seed see identical data streams.
TrainResult train_run(LsaNet<float>& net, Adam<float>& adam,
                      std::span<const PointCloud> train_clouds,
                      std::span<const PointCloud> test_clouds, const TrainOptions& opts,
                      int start_epoch = 0);

/// Augmented view of one training cloud as train_run would see it.
PointCloud train_augmented_cloud(const PointCloud& cloud, uint64_t run_seed, int epoch,
                                 int64_t cloud_id, const AugmentOptions& aug);

// --- checkpoint wiring -------------------------------------------------------

/// Model parameters + batch-norm state (+ Adam moments when adam != nullptr)
/// as one named-tensor checkpoint.
void save_model_checkpoint(const std::string& path, LsaNet<float>& net, Adam<float>* adam);

/// Restores tensors by name; Adam moments are restored when adam != nullptr
/// and the file carries them.
void load_model_checkpoint(const std::string& path, LsaNet<float>& net, Adam<float>* adam);

// --- evaluation tools ---------------------------------------------------------

struct DensityRow {
  int64_t points = 0;
  double oa = 0;
  double ma = 0;
};

/// Accuracy at each requested point count (seeded subsampling), in request
/// order.
std::vector<DensityRow> density_sweep(LsaNet<float>& net, std::span<const PointCloud> clouds,
                                      std::span<const int64_t> point_counts, uint64_t seed);

void write_density_csv(std::ostream& os, const std::vector<DensityRow>& rows);

/// First-level SDW values of one layer for one cloud, as CSV rows
/// (region, slot, relative x/y/z, one column per SDW channel).
void export_sdw(LsaNet<float>& net, const PointCloud& cloud, int layer, std::ostream& os);

}  // namespace lsanet
