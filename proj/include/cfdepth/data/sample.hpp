#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfdepth/tensor.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Which ground truth a sample carries. Both is only produced for test oracles.
enum class Origin { Depth, Semantic, Both };

const char* origin_name(Origin origin) noexcept;
/// Accepts "depth", "semantic" or "both"; throws DataError otherwise.
Origin parse_origin(std::string_view text);

/// 8-bit class ids, row-major H x W. kVoid marks unlabeled pixels.
struct LabelImage {
  static constexpr std::uint8_t kVoid = 255;

  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> ids;

  LabelImage() = default;
  LabelImage(std::size_t h, std::size_t w, std::uint8_t fill = kVoid) : height(h), width(w), ids(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) noexcept { return ids[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const noexcept { return ids[y * width + x]; }
  friend bool operator==(const LabelImage&, const LabelImage&) = default;
};

struct Sample {
  std::string id;
  Tensor rgb;                        // 3 x H x W in [0, 1]
  std::optional<Tensor> depth;       // 1 x H x W meters, 0 = invalid
  std::optional<LabelImage> labels;  // H x W
  Origin origin = Origin::Depth;

  std::size_t height() const { return rgb.dim(1); }
  std::size_t width() const { return rgb.dim(2); }
};

/// Throws DataError if the ground truth does not match the origin or the
/// geometry is inconsistent.
void validate_sample(const Sample& sample);

CFDEPTH_END_NAMESPACE
