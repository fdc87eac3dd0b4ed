#pragma once

#include <filesystem>

#include "cfdepth/data/sample.hpp"

CFDEPTH_BEGIN_NAMESPACE

// Netpbm and PFM codecs. Read failures throw DataError naming the file.

/// Binary P6, 8-bit. `rgb` is 3 x H x W in [0, 1] and is rounded to k/255.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_ppm(const std::filesystem::path& path);

/// Binary P5, 8-bit class ids.
void write_pgm(const std::filesystem::path& path, const LabelImage& labels);
LabelImage read_pgm(const std::filesystem::path& path);

/// Single-channel little-endian PFM (scale -1). Rows are stored bottom to top
/// as the format requires. `depth` is 1 x H x W or H x W.
void write_pfm(const std::filesystem::path& path, const Tensor& depth);
/// Returns 1 x H x W.
Tensor read_pfm(const std::filesystem::path& path);

CFDEPTH_END_NAMESPACE
