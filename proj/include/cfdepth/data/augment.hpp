#pragma once

#include <cstdint>

#include "cfdepth/data/sample.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Probability and magnitude of each transform family. A family whose
/// probability is 0 is never drawn.
struct AugmentConfig {
  // geometric (applied to rgb and ground truth alike)
  double rotation_prob = 0.5;
  double rotation_max_deg = 5.0;
  double flip_prob = 0.5;
  // photometric (rgb only)
  double blur_prob = 0.2;
  double blur_sigma_min = 0.3, blur_sigma_max = 1.0;
  double contrast_prob = 0.3;
  double contrast_min = 0.7, contrast_max = 1.3;
  double salt_pepper_prob = 0.1;
  double salt_pepper_amount = 0.01;
  double gaussian_prob = 0.2;
  double gaussian_sigma = 0.02;
  double poisson_prob = 0.1;
  /// Photon count at intensity 1.
  double poisson_peak = 255.0;
  double speckle_prob = 0.1;
  double speckle_sigma = 0.05;

  /// Every probability 0.
  static AugmentConfig none();
  /// Horizontal flip with probability 1, nothing else.
  static AugmentConfig flip_only();
};

/// Throws ConfigError for probabilities outside [0, 1] or negative magnitudes.
void validate_augment_config(const AugmentConfig& config);

/// Draw and apply a transform pipeline; pure function of (sample, config, seed).
Sample augment(const Sample& sample, const AugmentConfig& config, std::uint64_t seed);

/// Mirror rgb and ground truth left to right.
Sample flip_horizontal(const Sample& sample);
/// Rotate about the image center. rgb is resampled bilinearly with clamped
/// borders; depth and labels use nearest neighbor and pixels mapped from
/// outside the frame become invalid (depth 0, label void).
Sample rotate(const Sample& sample, double degrees);

CFDEPTH_END_NAMESPACE
