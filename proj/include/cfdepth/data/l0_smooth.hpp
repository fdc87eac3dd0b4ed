#pragma once

#include "cfdepth/tensor.hpp"

CFDEPTH_BEGIN_NAMESPACE

struct L0Params {
  double lambda = 0.0213;
  double kappa = 8.0;
  double beta_max = 1e5;
};

/// Image smoothing via L0 gradient minimization (half-quadratic splitting).
/// Alternates a closed-form hard threshold on auxiliary gradients with an
/// exact FFT solve for the image (periodic boundary). beta starts at
/// 2*lambda and is multiplied by kappa while it does not exceed beta_max.
///
/// `rgb` is C x H x W. Throws ParameterError for kappa <= 1 or lambda < 0 and
/// DataError for non-finite pixels.
Tensor l0_smooth(const Tensor& rgb, const L0Params& params = {});

CFDEPTH_END_NAMESPACE
