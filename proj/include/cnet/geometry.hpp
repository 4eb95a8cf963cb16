#pragma once

#include "cnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cnet {

// N points in 3D with an N x I feature matrix.
struct PointCloud {
  Points points;
  Matrix features;

  PointCloud() = default;
  PointCloud(Points pts, Matrix feats);

  // Cloud carrying the constant feature phi = 1 on every point.
  static PointCloud with_unit_features(Points pts, Eigen::Index width = 1);

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index feature_width() const { return features.cols(); }

  // Throws ShapeError when the invariants (N >= 1, matching rows, finite) fail.
  void validate() const;
};

// For each output point, the indices of its window of nearest input points.
struct WindowSet {
  Points outputs;
  std::vector<std::int32_t> indices;  // Q x W, row-major
  int window_size = 0;

  Eigen::Index count() const { return outputs.rows(); }
  std::span<const std::int32_t> row(Eigen::Index q) const {
    return {indices.data() + q * window_size, static_cast<std::size_t>(window_size)};
  }
};

struct KnnOptions {
  // Drop input points that coincide with the output point.
  bool exclude_center = false;
};

// Exact W-nearest-neighbor windows. Ties go to the lower input index; when the
// cloud holds fewer than W candidates the nearest-first list repeats cyclically.
WindowSet knn_windows(const PointCloud& cloud, const Points& outputs, int window_size,
                      const KnnOptions& options = {});

struct SamplerOptions {
  double attenuation = 0.25;  // weight multiplier applied after each draw
  int neighbors = 8;          // neighbors of the drawn point that are attenuated
};

// Draws `count` output points with replacement, lowering the probability of
// redrawing a point or its neighborhood. Deterministic for a fixed seed.
Points sample_output_points(const PointCloud& cloud, int count, std::uint64_t seed,
                            const SamplerOptions& options = {});

// Centroid to the origin, farthest point at distance 1. Features untouched.
PointCloud normalize(const PointCloud& cloud);

// Text format: "x y z [f1 ... fI]" per line, '#' comments. Rows with fewer
// features than the widest row are padded with the constant 1.
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace cnet
