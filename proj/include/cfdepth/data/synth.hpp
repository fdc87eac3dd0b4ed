#pragma once

#include <cstdint>
#include <vector>

#include "cfdepth/data/sample.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Procedural street-like scenes: a textured ground plane with a perspective
/// depth gradient, a far backdrop, and upright rectangles standing on the
/// ground. Class 0 is ground, 1 is backdrop, objects use 2..n_classes-1.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t height = 32;
  std::size_t width = 64;
  int n_classes = 19;
  int min_objects = 1;
  int max_objects = 4;
  double object_depth_min = 2.0;
  double object_depth_max = 40.0;
  /// Object size in meters; projected size shrinks with depth.
  double object_height_min = 1.0, object_height_max = 3.0;
  double object_width_min = 0.8, object_width_max = 4.0;
  double backdrop_depth_min = 50.0;
  double backdrop_depth_max = 79.5;
  /// Horizon row as a fraction of the image height.
  double horizon = 0.4;
  double camera_height = 1.6;
  /// Depth of the bottom image row.
  double near_depth = 2.0;
  /// Amplitude of the additive procedural texture, in [0, 1] color units.
  double texture = 0.03;
};

enum class GenMode { DepthOnly, SemanticOnly, Full };

/// Deterministic in `spec`. The scene content of sample i depends only on
/// (seed, i); `mode` decides which ground truth is kept. Ids encode mode,
/// seed and index so different runs never collide.
std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count, GenMode mode);

/// Base color of a palette class (channel c in 0..2).
double palette_color(int cls, int channel) noexcept;

CFDEPTH_END_NAMESPACE
