#include "cfdepth/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cfdepth/errors.hpp"
#include "cfdepth/random.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

constexpr double kFogDepth = 160.0;
constexpr double kFog[3] = {0.75, 0.78, 0.82};

struct Object {
  int cls;
  double depth;
  double top, bottom, left, right;  // pixel coordinates
  double color[3];
};

void check_spec(const SceneSpec& s) {
  if (s.n_classes < 1) throw ConfigError("scene spec: empty class palette");
  if (s.n_classes > 255) throw ConfigError("scene spec: at most 255 classes fit an 8-bit label map");
  if (s.height < 2 || s.width < 2) throw ConfigError("scene spec: image must be at least 2x2");
  if (s.min_objects < 0 || s.max_objects < s.min_objects) throw ConfigError("scene spec: need 0 <= min_objects <= max_objects");
  if (!(1.0 <= s.object_depth_min && s.object_depth_min <= s.object_depth_max && s.object_depth_max < 80.0))
    throw ConfigError("scene spec: object depths must satisfy 1 <= min <= max < 80");
  if (!(s.object_depth_max < s.backdrop_depth_min && s.backdrop_depth_min <= s.backdrop_depth_max && s.backdrop_depth_max < 80.0))
    throw ConfigError("scene spec: backdrop depths must lie beyond the objects and below 80");
  if (!(s.horizon > 0.0 && s.horizon < 1.0)) throw ConfigError("scene spec: horizon must be in (0, 1)");
  if (!(s.near_depth >= 1.0 && s.camera_height > 0)) throw ConfigError("scene spec: near_depth >= 1 and camera_height > 0");
  if (!(s.texture >= 0)) throw ConfigError("scene spec: texture amplitude must be >= 0");
}

const char* mode_tag(GenMode m) {
  switch (m) {
    case GenMode::DepthOnly: return "dep";
    case GenMode::SemanticOnly: return "sem";
    case GenMode::Full: return "full";
  }
  return "?";
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Sample render(const SceneSpec& spec, std::size_t index, GenMode mode) {
  const std::size_t H = spec.height, W = spec.width;
  const std::uint64_t scene_seed = derive_seed(spec.seed, {index});
  Rng rng(scene_seed);

  const double yh = spec.horizon * static_cast<double>(H);
  const double k = spec.near_depth * (static_cast<double>(H) - 0.5 - yh);  // depth * (y - yh) on the ground
  const double focal = k / spec.camera_height;
  const double backdrop = rng.uniform(spec.backdrop_depth_min, spec.backdrop_depth_max);

  Tensor depth(Shape{1, H, W});
  LabelImage labels(H, W, 0);
  std::vector<double> color(3 * H * W);
  auto paint = [&](std::size_t y, std::size_t x, double d, int cls, const double* c) {
    depth[y * W + x] = static_cast<Real>(d);
    labels.at(y, x) = static_cast<std::uint8_t>(cls);
    const double a = d / kFogDepth;
    for (int ch = 0; ch < 3; ++ch) color[(ch * H + y) * W + x] = c[ch] * (1 - a) + kFog[ch] * a;
  };

  // Ground and backdrop.
  const int backdrop_cls = spec.n_classes > 1 ? 1 : 0;
  double ground_col[3], backdrop_col[3];
  for (int ch = 0; ch < 3; ++ch) {
    ground_col[ch] = palette_color(0, ch) + rng.uniform(-0.04, 0.04);
    backdrop_col[ch] = palette_color(backdrop_cls, ch) + rng.uniform(-0.04, 0.04);
  }
  for (std::size_t y = 0; y < H; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    const double dg = yc > yh ? std::max(1.0, k / (yc - yh)) : backdrop;
    for (std::size_t x = 0; x < W; ++x) {
      if (dg < backdrop) {
        paint(y, x, dg, 0, ground_col);
      } else {
        paint(y, x, backdrop, backdrop_cls, backdrop_col);
      }
    }
  }

  // Objects standing on the ground, painted far to near.
  std::vector<Object> objects;
  const int n_obj = spec.n_classes > 2 ? static_cast<int>(rng.integer(spec.min_objects, spec.max_objects)) : 0;
  for (int i = 0; i < n_obj; ++i) {
    Object o;
    o.cls = 2 + static_cast<int>(rng.integer(0, spec.n_classes - 3));
    o.depth = rng.uniform(spec.object_depth_min, spec.object_depth_max);
    const double hpx = std::max(1.5, rng.uniform(spec.object_height_min, spec.object_height_max) * focal / o.depth);
    const double wpx = std::max(1.5, rng.uniform(spec.object_width_min, spec.object_width_max) * focal / o.depth);
    const double xc = rng.uniform(0.0, static_cast<double>(W));
    o.bottom = yh + k / o.depth;
    o.top = o.bottom - hpx;
    o.left = xc - wpx / 2;
    o.right = xc + wpx / 2;
    for (int ch = 0; ch < 3; ++ch) o.color[ch] = palette_color(o.cls, ch) + rng.uniform(-0.05, 0.05);
    objects.push_back(o);
  }
  std::stable_sort(objects.begin(), objects.end(), [](const Object& a, const Object& b) { return a.depth > b.depth; });
  for (const auto& o : objects) {
    for (std::size_t y = 0; y < H; ++y) {
      const double yc = static_cast<double>(y) + 0.5;
      if (yc < o.top || yc >= o.bottom) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const double xc = static_cast<double>(x) + 0.5;
        if (xc >= o.left && xc < o.right) paint(y, x, o.depth, o.cls, o.color);
      }
    }
  }

  Sample s;
  char id[64];
  std::snprintf(id, sizeof id, "%s-%016llx-%06zu", mode_tag(mode), static_cast<unsigned long long>(spec.seed), index);
  s.id = id;
  s.rgb = Tensor(Shape{3, H, W});
  const std::uint64_t tex_seed = derive_seed(scene_seed, {0x7e47u});
  for (std::size_t i = 0; i < color.size(); ++i) {
    const double t = spec.texture * (2.0 * uniform01(tex_seed, i) - 1.0);
    s.rgb[i] = static_cast<Real>(quantize(color[i] + t));
  }
  switch (mode) {
    case GenMode::DepthOnly:
      s.origin = Origin::Depth;
      s.depth = std::move(depth);
      break;
    case GenMode::SemanticOnly:
      s.origin = Origin::Semantic;
      s.labels = std::move(labels);
      break;
    case GenMode::Full:
      s.origin = Origin::Both;
      s.depth = std::move(depth);
      s.labels = std::move(labels);
      break;
  }
  return s;
}

}  // namespace

double palette_color(int cls, int channel) noexcept {
  static constexpr double kGround[3] = {0.36, 0.34, 0.31};
  static constexpr double kBackdrop[3] = {0.55, 0.70, 0.90};
  if (cls == 0) return kGround[channel];
  if (cls == 1) return kBackdrop[channel];
  return 0.1 + 0.8 * uniform01(0xC0105ULL, static_cast<std::uint64_t>(cls) * 3 + static_cast<std::uint64_t>(channel));
}

std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count, GenMode mode) {
  check_spec(spec);
  if (count < 1) throw ConfigError("generate_dataset: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(render(spec, i, mode));
  return out;
}

CFDEPTH_END_NAMESPACE
