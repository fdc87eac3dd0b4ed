#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cfdepth/data/synth.hpp"
#include "cfdepth/eval/metrics.hpp"
#include "cfdepth/kvconfig.hpp"
#include "cfdepth/network.hpp"
#include "cfdepth/train/trainer.hpp"

namespace cfdepth::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kConfig = 3, kData = 4, kNumeric = 5 };

/// Everything a command can read from a config file. Relative paths are
/// resolved against the directory of the file they came from, so the echo
/// written next to the outputs is usable from anywhere.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  bool depth_only = false;

  SceneSpec gen;
  std::size_t gen_count = 100;
  GenMode gen_mode = GenMode::DepthOnly;

  std::filesystem::path depth_dir, semantic_dir, test_dir;
  std::filesystem::path output_dir = "out";

  double cap = 80;
  Aggregation aggregation = Aggregation::PixelPooled;
};

std::set<std::string> run_config_keys();
/// Defaults, then the file. Unknown keys and bad values are ConfigErrors.
RunConfig read_run_config(const KeyValueConfig& kv, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Effective config with every key spelled out and absolute paths.
KeyValueConfig effective_config(const RunConfig& config);

/// Linear colormap over [lo, hi] meters, near is warm and far is cool.
Tensor colorize_depth(const Tensor& depth, double lo = 1.0, double hi = 80.0);

/// argv-style entry point; args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfdepth::cli
