#pragma once

#include "cnet/geometry.hpp"
#include "cnet/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cnet {

enum class ShapeKind { sphere, cube, cylinder, cone, torus };

ShapeKind parse_shape_kind(std::string_view name);
std::string_view to_string(ShapeKind kind);

// Area-weighted uniform samples on the raw surface: unit sphere, cube with
// half-extent 1, cylinder and cone of radius 1 and height 2 (caps included),
// torus with radii 1 and 0.3.
Points sample_surface(ShapeKind kind, int n_points, Rng& rng);

// Surface samples plus Gaussian jitter, constant unit features, normalized.
PointCloud generate_shape(ShapeKind kind, int n_points, double jitter, std::uint64_t seed);

enum class SplitTag { train, test };

struct Instance {
  PointCloud cloud;
  int label = 0;
  std::string id;
};

struct LabeledDataset {
  std::vector<Instance> instances;
  std::vector<std::string> class_names;
  SplitTag split = SplitTag::train;

  std::size_t size() const { return instances.size(); }
  std::vector<PointCloud> clouds() const;
  std::vector<int> labels() const;
};

struct LoadOptions {
  int points = 1024;
  std::uint64_t seed = 0;
  bool normalize = true;
};

// root/<class>/<instance>.<ext>; class ids follow sorted directory names and
// every cloud is resampled to exactly options.points points.
LabeledDataset load_directory(const std::filesystem::path& root, const LoadOptions& options = {});

// Uniform resampling without replacement, or with replacement when the cloud is short.
PointCloud resample(const PointCloud& cloud, int points, Rng& rng);

// Stratified per class, seeded shuffle.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset,
                                                double train_fraction, std::uint64_t seed);

// `count` generated instances spread evenly over the listed shapes (earlier
// shapes take the remainder), labels in list order.
LabeledDataset synthetic_dataset(const std::vector<ShapeKind>& shapes, int count,
                                 int points, double jitter, std::uint64_t seed,
                                 std::string_view id_prefix);

}  // namespace cnet
