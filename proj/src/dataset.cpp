#include "cfdepth/data/dataset.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "cfdepth/data/image_io.hpp"
#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace fs = std::filesystem;

namespace {

fs::path image_path(const fs::path& root, const DatasetLayout& l, const std::string& id) { return root / l.images_dir / (id + ".ppm"); }
fs::path depth_path(const fs::path& root, const DatasetLayout& l, const std::string& id) { return root / l.depth_dir / (id + ".pfm"); }
fs::path labels_path(const fs::path& root, const DatasetLayout& l, const std::string& id) { return root / l.labels_dir / (id + ".pgm"); }

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\\t\n") != std::string::npos || id == "." || id == "..")
    throw DataError("invalid sample id '" + id + "'");
}

}  // namespace

void save_dataset(const fs::path& root, const std::vector<Sample>& samples, const DatasetLayout& layout) {
  std::error_code ec;
  const auto make_dir = [&](const std::string& dir) {
    fs::create_directories(root / dir, ec);
    if (ec) throw DataError("cannot create " + (root / dir).string() + ": " + ec.message());
  };
  make_dir(layout.images_dir);
  if (std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.depth.has_value(); }))
    make_dir(layout.depth_dir);
  if (std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.labels.has_value(); }))
    make_dir(layout.labels_dir);
  std::string manifest = "id\torigin\n";
  for (const auto& s : samples) {
    check_id(s.id);
    validate_sample(s);
    write_ppm(image_path(root, layout, s.id), s.rgb);
    if (s.depth) write_pfm(depth_path(root, layout, s.id), *s.depth);
    if (s.labels) write_pgm(labels_path(root, layout, s.id), *s.labels);
    manifest += s.id + "\t" + origin_name(s.origin) + "\n";
  }
  write_file_atomic(root / layout.manifest, manifest);
}

std::vector<Sample> load_dataset_dir(const fs::path& root, const DatasetLayout& layout) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  std::map<std::string, std::optional<Origin>> entries;
  const fs::path manifest = root / layout.manifest;
  if (fs::exists(manifest)) {
    std::istringstream in(read_text_file(manifest));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#' || (lineno == 1 && line == "id\torigin")) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": expected 'id<TAB>origin'");
      const std::string id = line.substr(0, tab);
      check_id(id);
      Origin origin;
      try {
        origin = parse_origin(line.substr(tab + 1));
      } catch (const DataError& e) {
        throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      if (!entries.emplace(id, origin).second) throw DataError(manifest.string() + ": duplicate id '" + id + "'");
    }
  } else {
    const fs::path images = root / layout.images_dir;
    if (!fs::is_directory(images)) throw DataError(images.string() + ": missing images directory");
    for (const auto& e : fs::directory_iterator(images))
      if (e.is_regular_file() && e.path().extension() == ".ppm") entries.emplace(e.path().stem().string(), std::nullopt);
  }
  if (entries.empty()) throw DataError(root.string() + ": dataset is empty");

  std::vector<Sample> out;
  for (const auto& [id, declared] : entries) {
    Sample s;
    s.id = id;
    const fs::path img = image_path(root, layout, id), dep = depth_path(root, layout, id), lab = labels_path(root, layout, id);
    if (!fs::exists(img)) throw DataError(img.string() + ": image missing for sample '" + id + "'");
    const bool has_depth = fs::exists(dep), has_labels = fs::exists(lab);
    if (declared) {
      s.origin = *declared;
      const bool want_depth = s.origin != Origin::Semantic, want_labels = s.origin != Origin::Depth;
      if (want_depth && !has_depth) throw DataError(dep.string() + ": missing for " + origin_name(s.origin) + "-origin sample");
      if (!want_depth && has_depth) throw DataError(dep.string() + ": unexpected depth for semantic-origin sample");
      if (want_labels && !has_labels) throw DataError(lab.string() + ": missing for " + origin_name(s.origin) + "-origin sample");
      if (!want_labels && has_labels) throw DataError(lab.string() + ": unexpected labels for depth-origin sample");
    } else if (has_depth && has_labels) {
      s.origin = Origin::Both;
    } else if (has_depth) {
      s.origin = Origin::Depth;
    } else if (has_labels) {
      s.origin = Origin::Semantic;
    } else {
      throw DataError(img.string() + ": no ground truth found in " + layout.depth_dir + "/ or " + layout.labels_dir + "/");
    }
    s.rgb = read_ppm(img);
    if (s.origin != Origin::Semantic) s.depth = read_pfm(dep);
    if (s.origin != Origin::Depth) s.labels = read_pgm(lab);
    try {
      validate_sample(s);
    } catch (const DataError& e) {
      throw DataError(img.string() + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

Sample downsample(const Sample& sample, std::size_t factor) {
  if (factor == 0) throw ParameterError("downsample: factor must be >= 1");
  if (factor == 1) return sample;
  const std::size_t H = sample.height(), W = sample.width(), h = H / factor, w = W / factor;
  if (h == 0 || w == 0) throw DimensionError("downsample: factor " + std::to_string(factor) + " exceeds the image size");
  const double area = static_cast<double>(factor * factor);
  Sample out;
  out.id = sample.id;
  out.origin = sample.origin;
  out.rgb = Tensor(Shape{3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) acc += sample.rgb[(c * H + y * factor + dy) * W + x * factor + dx];
        out.rgb[(c * h + y) * w + x] = static_cast<Real>(acc / area);
      }
  if (sample.depth) {
    out.depth = Tensor(Shape{1, h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        int n = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) {
            const Real d = (*sample.depth)[(y * factor + dy) * W + x * factor + dx];
            if (d > 0) acc += d, ++n;
          }
        (*out.depth)[y * w + x] = n ? static_cast<Real>(acc / n) : Real(0);
      }
  }
  if (sample.labels) {
    out.labels = LabelImage(h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.labels->at(y, x) = sample.labels->at(y * factor + factor / 2, x * factor + factor / 2);
  }
  return out;
}

Batch make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw EmptyBatchError("make_batch: no samples");
  Batch b;
  b.origin = samples.front()->origin;
  const std::size_t N = samples.size(), H = samples.front()->height(), W = samples.front()->width(), P = H * W;
  b.images = Tensor(Shape{N, 3, H, W});
  if (b.origin != Origin::Semantic) b.depth = Tensor(Shape{N, 1, H, W});
  if (b.origin != Origin::Depth) b.labels = IndexMap(N, H, W);
  for (std::size_t n = 0; n < N; ++n) {
    const Sample& s = *samples[n];
    if (s.origin != b.origin) {
      throw ContractError(std::string("make_batch: mixed origins (") + origin_name(b.origin) + " and " + origin_name(s.origin) + ")");
    }
    if (s.height() != H || s.width() != W) {
      throw DimensionError("make_batch: sample '" + s.id + "' is " + shape_str(s.rgb.shape()) + ", expected 3 x " +
                           std::to_string(H) + " x " + std::to_string(W));
    }
    b.ids.push_back(s.id);
    std::copy(s.rgb.data().begin(), s.rgb.data().end(), b.images.ptr() + n * 3 * P);
    if (b.depth) std::copy(s.depth->data().begin(), s.depth->data().end(), b.depth->ptr() + n * P);
    if (b.labels) {
      for (std::size_t i = 0; i < P; ++i) {
        const std::uint8_t id = s.labels->ids[i];
        b.labels->index[n * P + i] = id;
        b.labels->valid[n * P + i] = id != LabelImage::kVoid;
      }
    }
  }
  return b;
}

CFDEPTH_END_NAMESPACE
