#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cfdepth/data/augment.hpp"
#include "cfdepth/data/binning.hpp"
#include "cfdepth/data/dataset.hpp"
#include "cfdepth/data/l0_smooth.hpp"
#include "cfdepth/kvconfig.hpp"
#include "cfdepth/network.hpp"
#include "cfdepth/train/adam.hpp"
#include "cfdepth/train/checkpoint.hpp"

CFDEPTH_BEGIN_NAMESPACE

struct TrainConfig {
  AdamConfig adam;
  std::size_t depth_batch = 10;
  std::size_t semantic_batch = 5;
  /// Total optimizer steps of the run, counted across resumes.
  std::uint64_t iterations = 1000;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 500;
  /// L0 smoothing as deterministic preprocessing of every rgb image.
  bool l0 = true;
  L0Params l0_params;
  bool augment = true;
  AugmentConfig augment_config;
  /// Recompute batch-norm running statistics over the training set once the
  /// run ends, before the final checkpoint. The moving averages kept during
  /// training lag the weights and include dropout noise.
  bool bn_recalibrate = true;
};

void validate_train_config(const TrainConfig& config);
/// Keys under "train." and "augment.".
std::set<std::string> train_config_keys();
TrainConfig read_train_config(const KeyValueConfig& kv);
void write_train_config(const TrainConfig& config, KeyValueConfig& kv);

/// Which dataset and which samples feed each step. Phase 1 alternates
/// depth (even 0-based steps) and semantic (odd) batches; phase 2 and the
/// depth-only baseline use depth batches only. Each dataset walks its own
/// sequence of per-epoch permutations seeded from (seed, dataset, epoch);
/// a batch that runs past the end continues into the next epoch.
class Schedule {
 public:
  Schedule(std::uint64_t seed, std::size_t n_depth, std::size_t depth_batch, std::size_t n_semantic,
           std::size_t semantic_batch);

  Origin origin(std::uint64_t step) const;
  std::vector<std::size_t> indices(std::uint64_t step) const;

 private:
  std::size_t position(Origin origin, std::uint64_t step) const;
  const std::vector<std::size_t>& permutation(Origin origin, std::uint64_t epoch) const;

  std::uint64_t seed_;
  std::size_t n_depth_, depth_batch_, n_semantic_, semantic_batch_;
  mutable std::map<std::pair<int, std::uint64_t>, std::vector<std::size_t>> cache_;
};

/// One conditional-flow update on a phase-1 network. Depth batches run
/// DSC+DC and update only those branches; semantic batches run DSC+SC.
/// Returns the batch cross-entropy. Throws ContractError for a phase-2
/// network or an origin other than Depth/Semantic.
double conditional_step(Network& net, Adam& adam, const Batch& batch, std::uint64_t dropout_seed);

/// One L1 update of DSC+DC+REG on a phase-2 network; returns the masked L1 loss in meters.
double regression_step(Network& net, Adam& adam, const Batch& batch, std::uint64_t dropout_seed);

/// One unaugmented statistics pass over the (preprocessed) training samples:
/// phase 1 runs depth samples through DSC+DC and semantic samples through
/// DSC+SC, phase 2 runs depth samples through everything.
void recalibrate_batch_norm(Network& net, const std::vector<Sample>& depth, const std::vector<Sample>& semantic,
                            const TrainConfig& config);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  int phase = 1;
  Origin origin = Origin::Depth;
  double loss = 0;
};

std::string loss_csv_header();
std::string loss_csv_row(const StepRecord& record);

struct TrainHooks {
  /// Called after every step; returning false stops the run early.
  std::function<bool(const StepRecord&)> on_step;
  /// Called for every periodic checkpoint and once more for the final one.
  std::function<void(const Checkpoint&, bool final)> on_checkpoint;
};

struct TrainOptions {
  TrainHooks hooks;
  /// Continue from this checkpoint (same phase); steps resume at its iteration.
  const Checkpoint* resume = nullptr;
  /// Stored in checkpoints; generated from the configs when empty.
  std::string config_echo;
  /// Phase 1 without semantic supervision (the DRN baseline).
  bool depth_only = false;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  bool stopped_early = false;
};

/// Rgb after the configured preprocessing (L0 smoothing when enabled).
Sample preprocess(const Sample& sample, const TrainConfig& config);

TrainResult train_phase1(const NetworkConfig& net_config, const TrainConfig& config, const std::vector<Sample>& depth,
                         const std::vector<Sample>& semantic, const TrainOptions& options = {});

TrainResult train_phase2(const NetworkConfig& net_config, const TrainConfig& config, const std::vector<Sample>& depth,
                         const Checkpoint& phase1, const TrainOptions& options = {});

/// Rebuild the network stored in a checkpoint (either phase).
Network network_from_checkpoint(const NetworkConfig& net_config, const Checkpoint& checkpoint);

struct ClassificationScore {
  double cross_entropy = 0;
  double pixel_accuracy = 0;
  std::size_t n_pixels = 0;
};

/// Eval-mode depth-class cross-entropy and accuracy of a phase-1 network,
/// pooled over all valid pixels. Samples must already be preprocessed.
ClassificationScore depth_classification_score(const Network& net, const std::vector<Sample>& samples,
                                               std::size_t batch_size = 8);

/// Eval-mode metric depth for N x 3 x H x W images (any H, W). Phase-2
/// networks return the REG output; phase-1 networks decode the DC softmax
/// by expectation over bin centers.
Tensor predict_depth(const Network& net, const Tensor& images);

/// Mean absolute error in meters over valid pixels (depth in (0, d_max)).
double mean_absolute_error(const Network& net, const std::vector<Sample>& samples, std::size_t batch_size = 8);

CFDEPTH_END_NAMESPACE
