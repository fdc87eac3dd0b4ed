#include "cfdepth/data/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

struct Header {
  std::string magic;
  std::size_t width = 0, height = 0;
  std::string third;  // maxval for netpbm, scale for PFM
  std::size_t data_offset = 0;
};

// Whitespace-separated tokens with '#' comments; exactly one whitespace byte
// separates the last token from the raster.
Header parse_header(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path, bool comments) {
  Header h;
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (comments && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok += static_cast<char>(bytes[pos++]);
    if (tok.empty()) throw DataError(path.string() + ": truncated header");
    return tok;
  };
  h.magic = next_token();
  try {
    h.width = std::stoul(next_token());
    h.height = std::stoul(next_token());
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed image dimensions");
  }
  h.third = next_token();
  if (pos >= bytes.size()) throw DataError(path.string() + ": missing raster");
  h.data_offset = pos + 1;
  return h;
}

void require_payload(const std::vector<std::uint8_t>& bytes, const Header& h, std::size_t need,
                     const std::filesystem::path& path) {
  if (bytes.size() - h.data_offset < need) {
    throw DataError(path.string() + ": raster is truncated (" + std::to_string(bytes.size() - h.data_offset) +
                    " of " + std::to_string(need) + " bytes)");
  }
}

std::string netpbm_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

std::uint8_t to_byte(Real v) {
  const double x = std::round(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(x);
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm: expected 3 x H x W, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), plane = h * w;
  const std::string header = netpbm_header("P6", w, h);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(rgb[c * plane + i]));
  write_file_atomic(path, out);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Header hd = parse_header(bytes, path, true);
  if (hd.magic != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  if (hd.third != "255") throw DataError(path.string() + ": only 8-bit PPM (maxval 255) is supported");
  const std::size_t plane = hd.width * hd.height;
  require_payload(bytes, hd, 3 * plane, path);
  Tensor rgb(Shape{3, hd.height, hd.width});
  const std::uint8_t* src = bytes.data() + hd.data_offset;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb[c * plane + i] = static_cast<Real>(src[3 * i + c] / 255.0);
  return rgb;
}

void write_pgm(const std::filesystem::path& path, const LabelImage& labels) {
  const std::string header = netpbm_header("P5", labels.width, labels.height);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), labels.ids.begin(), labels.ids.end());
  write_file_atomic(path, out);
}

LabelImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Header hd = parse_header(bytes, path, true);
  if (hd.magic != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  if (hd.third != "255") throw DataError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  LabelImage labels(hd.height, hd.width);
  require_payload(bytes, hd, labels.ids.size(), path);
  std::memcpy(labels.ids.data(), bytes.data() + hd.data_offset, labels.ids.size());
  return labels;
}

void write_pfm(const std::filesystem::path& path, const Tensor& depth) {
  const bool ok = (depth.rank() == 3 && depth.dim(0) == 1) || depth.rank() == 2;
  if (!ok) throw DimensionError("write_pfm: expected 1 x H x W, got " + shape_str(depth.shape()));
  const std::size_t h = depth.dim(depth.rank() - 2), w = depth.dim(depth.rank() - 1);
  const std::string header = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 4 * h * w);
  for (std::size_t row = h; row-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(depth[row * w + x]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  write_file_atomic(path, out);
}

Tensor read_pfm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Header hd = parse_header(bytes, path, false);
  if (hd.magic != "Pf") throw DataError(path.string() + ": not a single-channel PFM (Pf)");
  double scale = 0;
  try {
    scale = std::stod(hd.third);
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed PFM scale");
  }
  if (scale == 0) throw DataError(path.string() + ": PFM scale must be nonzero");
  const bool little = scale < 0;
  const std::size_t h = hd.height, w = hd.width;
  require_payload(bytes, hd, 4 * h * w, path);
  Tensor depth(Shape{1, h, w});
  const std::uint8_t* src = bytes.data() + hd.data_offset;
  for (std::size_t row = 0; row < h; ++row) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t* p = src + 4 * (row * w + x);
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[little ? b : 3 - b]) << (8 * b);
      depth[(h - 1 - row) * w + x] = static_cast<Real>(std::bit_cast<float>(bits));
    }
  }
  return depth;
}

CFDEPTH_END_NAMESPACE
