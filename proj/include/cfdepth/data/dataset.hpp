#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfdepth/data/sample.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// root/{images,depth,labels}/<id>.<ext> plus root/manifest.tsv ("id<TAB>origin").
struct DatasetLayout {
  std::string images_dir = "images";
  std::string depth_dir = "depth";
  std::string labels_dir = "labels";
  std::string manifest = "manifest.tsv";
};

/// Write every sample, then the manifest. Ground-truth directories are only
/// created when some sample needs them. Existing files are overwritten.
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples, const DatasetLayout& layout = {});

/// With a manifest, each listed id must have exactly the ground truth its
/// origin declares. Without one, ids come from the images directory and the
/// origin from which ground-truth file exists. Samples are returned sorted
/// by id. Throws DataError naming the offending file.
std::vector<Sample> load_dataset_dir(const std::filesystem::path& root, const DatasetLayout& layout = {});

/// Integer-factor reduction: area average for rgb, area average over valid
/// (nonzero) depths, nearest neighbor (block center) for labels. Trailing
/// rows/columns that do not fill a block are dropped.
Sample downsample(const Sample& sample, std::size_t factor);

/// Stacked samples of one origin.
struct Batch {
  Origin origin = Origin::Depth;
  std::vector<std::string> ids;
  Tensor images;                  // N x 3 x H x W
  std::optional<Tensor> depth;    // N x 1 x H x W meters
  std::optional<IndexMap> labels; // void pixels are invalid
};

/// Throws ContractError when origins differ and DimensionError when the
/// geometry differs.
Batch make_batch(const std::vector<const Sample*>& samples);

CFDEPTH_END_NAMESPACE
