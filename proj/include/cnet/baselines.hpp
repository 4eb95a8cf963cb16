#pragma once

#include "cnet/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace cnet {

// Global orthographic occupancy descriptor: PCA frame, projections onto the
// (1,2), (1,3) and (2,3) planes, n x n bin counts per plane (row-major).
struct GoodDescriptor {
  int bins = 5;
  std::vector<double> values;  // 3 * bins^2
};

GoodDescriptor good_describe(const PointCloud& cloud, int bins = 5);

// PCA axes of the centered points as columns, ordered by descending variance,
// each signed so the third moment of the projections is non-negative.
Eigen::Matrix3d good_reference_frame(const Points& centered);

struct IsolationForestConfig {
  int trees = 100;
  int subsample = 256;  // capped at the training-set size
  std::uint64_t seed = 0;
};

// Average unsuccessful-search path length of a BST with n nodes:
// c(n) = 2 H(n-1) - 2 (n-1) / n, c(1) = 0.
double average_path_length(std::size_t n);

class IsolationForest {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int size = 0;  // training points reaching the node
  };
  using Tree = std::vector<Node>;  // node 0 is the root

  static IsolationForest fit(std::span<const std::vector<double>> vectors,
                             const IsolationForestConfig& config = {});

  // Path length of x in one tree, including the c(size) leaf correction.
  double path_length(std::size_t tree, std::span<const double> x) const;
  // s(x) = 2^(-E[h(x)] / c(psi)); higher means more anomalous.
  double score(std::span<const double> x) const;

  std::size_t tree_count() const { return trees_.size(); }
  const Tree& tree(std::size_t i) const { return trees_[i]; }
  int subsample() const { return subsample_; }
  int height_limit() const { return height_limit_; }
  std::size_t dimensions() const { return dims_; }

 private:
  std::vector<Tree> trees_;
  int subsample_ = 0;
  int height_limit_ = 0;
  std::size_t dims_ = 0;
};

}  // namespace cnet
