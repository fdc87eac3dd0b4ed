#include "cfdepth/data/sample.hpp"

#include <cmath>

#include "cfdepth/errors.hpp"

CFDEPTH_BEGIN_NAMESPACE

const char* origin_name(Origin origin) noexcept {
  switch (origin) {
    case Origin::Depth: return "depth";
    case Origin::Semantic: return "semantic";
    case Origin::Both: return "both";
  }
  return "?";
}

Origin parse_origin(std::string_view text) {
  if (text == "depth") return Origin::Depth;
  if (text == "semantic") return Origin::Semantic;
  if (text == "both") return Origin::Both;
  throw DataError("unknown sample origin '" + std::string(text) + "'");
}

void validate_sample(const Sample& s) {
  const std::string who = "sample '" + s.id + "'";
  if (s.rgb.rank() != 3 || s.rgb.dim(0) != 3) throw DataError(who + ": rgb must be 3 x H x W, got " + shape_str(s.rgb.shape()));
  const bool want_depth = s.origin != Origin::Semantic;
  const bool want_labels = s.origin != Origin::Depth;
  if (want_depth != s.depth.has_value()) {
    throw DataError(who + ": " + origin_name(s.origin) + "-origin sample " + (want_depth ? "lacks" : "carries") +
                    " a depth map");
  }
  if (want_labels != s.labels.has_value()) {
    throw DataError(who + ": " + origin_name(s.origin) + "-origin sample " + (want_labels ? "lacks" : "carries") +
                    " a label map");
  }
  const std::size_t h = s.rgb.dim(1), w = s.rgb.dim(2);
  if (s.depth) {
    if (s.depth->shape() != Shape{1, h, w}) throw DataError(who + ": depth shape " + shape_str(s.depth->shape()) + " does not match rgb");
    for (Real d : s.depth->data())
      if (!(d >= 0) || !std::isfinite(d)) throw DataError(who + ": depth values must be finite and >= 0 (0 = invalid)");
  }
  if (s.labels && (s.labels->height != h || s.labels->width != w)) throw DataError(who + ": label map does not match rgb");
}

CFDEPTH_END_NAMESPACE
