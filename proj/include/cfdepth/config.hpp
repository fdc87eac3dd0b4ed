#pragma once

// Element precision. The training library is built in single precision; the
// gradient-check build defines CFDEPTH_DOUBLE. Each precision lives in its own
// inline namespace so both libraries can be linked into one binary.
#if defined(CFDEPTH_DOUBLE)
#define CFDEPTH_PRECISION f64
#else
#define CFDEPTH_PRECISION f32
#endif

#define CFDEPTH_BEGIN_NAMESPACE \
  namespace cfdepth {           \
  inline namespace CFDEPTH_PRECISION {
#define CFDEPTH_END_NAMESPACE \
  }                           \
  }

CFDEPTH_BEGIN_NAMESPACE

#if defined(CFDEPTH_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

CFDEPTH_END_NAMESPACE
