#include "cnet/baselines.hpp"

#include "cnet/error.hpp"
#include "cnet/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cnet {

Eigen::Matrix3d good_reference_frame(const Points& centered) {
  const Eigen::Matrix3d cov = centered.transpose() * centered / static_cast<double>(centered.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) throw ShapeError("degenerate PCA");
  const Eigen::Vector3d values = solver.eigenvalues();  // ascending
  const double scale = std::max(values[2], 0.0);
  if (!(scale > 0.0) || values[1] <= 1e-12 * scale) throw ShapeError("degenerate PCA");

  Eigen::Matrix3d frame;
  for (int a = 0; a < 3; ++a) {
    Eigen::Vector3d axis = solver.eigenvectors().col(2 - a);
    const Eigen::VectorXd proj = centered * axis;
    if (proj.array().cube().sum() < 0.0) axis = -axis;
    frame.col(a) = axis;
  }
  return frame;
}

GoodDescriptor good_describe(const PointCloud& cloud, int bins) {
  if (bins < 1) throw ConfigError("GOOD bin count must be positive");
  if (cloud.size() < 3) throw ShapeError("degenerate PCA: fewer than 3 points");
  Points centered = cloud.points;
  centered.rowwise() -= cloud.points.colwise().mean();
  const Eigen::Matrix3d frame = good_reference_frame(centered);
  const Eigen::Matrix<double, Eigen::Dynamic, 3> local = centered * frame;

  GoodDescriptor d;
  d.bins = bins;
  d.values.assign(static_cast<std::size_t>(3 * bins * bins), 0.0);
  constexpr int planes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int p = 0; p < 3; ++p) {
    double lo[2], extent[2];
    for (int a = 0; a < 2; ++a) {
      const auto col = local.col(planes[p][a]);
      lo[a] = col.minCoeff();
      extent[a] = col.maxCoeff() - lo[a];
    }
    double* block = d.values.data() + static_cast<std::ptrdiff_t>(p * bins * bins);
    for (Eigen::Index r = 0; r < local.rows(); ++r) {
      int cell[2];
      for (int a = 0; a < 2; ++a) {
        const double t = extent[a] > 0.0 ? (local(r, planes[p][a]) - lo[a]) / extent[a] : 0.0;
        // The maximum coordinate belongs to the last bin.
        cell[a] = std::clamp(static_cast<int>(std::floor(t * bins)), 0, bins - 1);
      }
      block[cell[0] * bins + cell[1]] += 1.0;
    }
  }
  return d;
}

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  const double m = static_cast<double>(n - 1);
  double harmonic = 0.0;
  if (n < 100000) {
    for (std::size_t i = 1; i < n; ++i) harmonic += 1.0 / static_cast<double>(i);
  } else {
    harmonic = std::log(m) + 0.5772156649015329 + 0.5 / m;
  }
  return 2.0 * harmonic - 2.0 * m / static_cast<double>(n);
}

namespace {

void grow(IsolationForest::Tree& tree, int node, std::vector<std::size_t>& rows, std::size_t first,
          std::size_t last, int depth, int height_limit,
          std::span<const std::vector<double>> data, Rng& rng) {
  tree[static_cast<std::size_t>(node)].size = static_cast<int>(last - first);
  if (depth >= height_limit || last - first <= 1) return;

  const std::size_t dims = data[0].size();
  std::vector<std::size_t> candidates;
  std::vector<std::pair<double, double>> ranges(dims);
  for (std::size_t f = 0; f < dims; ++f) {
    double lo = data[rows[first]][f], hi = lo;
    for (std::size_t i = first + 1; i < last; ++i) {
      lo = std::min(lo, data[rows[i]][f]);
      hi = std::max(hi, data[rows[i]][f]);
    }
    ranges[f] = {lo, hi};
    if (hi > lo) candidates.push_back(f);
  }
  if (candidates.empty()) return;

  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  const std::size_t feature = candidates[pick(rng)];
  const auto [lo, hi] = ranges[feature];
  std::uniform_real_distribution<double> split(lo, hi);
  double threshold = split(rng);
  if (!(threshold > lo)) threshold = std::nextafter(lo, hi);

  const auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(first),
                                  rows.begin() + static_cast<std::ptrdiff_t>(last),
                                  [&](std::size_t r) { return data[r][feature] < threshold; });
  const auto split_at = static_cast<std::size_t>(mid - rows.begin());

  const int left = static_cast<int>(tree.size());
  tree.push_back({});
  const int right = static_cast<int>(tree.size());
  tree.push_back({});
  auto& n = tree[static_cast<std::size_t>(node)];
  n.feature = static_cast<int>(feature);
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  grow(tree, left, rows, first, split_at, depth + 1, height_limit, data, rng);
  grow(tree, right, rows, split_at, last, depth + 1, height_limit, data, rng);
}

}  // namespace

IsolationForest IsolationForest::fit(std::span<const std::vector<double>> vectors,
                                     const IsolationForestConfig& config) {
  if (vectors.size() < 2) throw ShapeError("isolation forest needs at least 2 vectors");
  if (config.trees < 1 || config.subsample < 1) {
    throw ConfigError("tree count and subsample size must be positive");
  }
  const std::size_t dims = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != dims) throw ShapeError("isolation forest vectors differ in dimension");
  }
  IsolationForest forest;
  forest.dims_ = dims;
  forest.subsample_ = static_cast<int>(std::min<std::size_t>(config.subsample, vectors.size()));
  forest.height_limit_ =
      static_cast<int>(std::ceil(std::log2(static_cast<double>(std::max(forest.subsample_, 2)))));

  const std::uint64_t stream = substream(config.seed, "ifor");
  std::vector<std::size_t> all(vectors.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (int t = 0; t < config.trees; ++t) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> rows = all;
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(forest.subsample_));
    Tree tree(1);
    grow(tree, 0, rows, 0, rows.size(), 0, forest.height_limit_, vectors, rng);
    forest.trees_.push_back(std::move(tree));
  }
  return forest;
}

double IsolationForest::path_length(std::size_t tree, std::span<const double> x) const {
  if (x.size() != dims_) {
    throw ShapeError("expected " + std::to_string(dims_) + "-dimensional vector, got " +
                     std::to_string(x.size()));
  }
  const Tree& t = trees_.at(tree);
  int node = 0;
  int depth = 0;
  while (t[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& n = t[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    ++depth;
  }
  return depth + average_path_length(static_cast<std::size_t>(t[static_cast<std::size_t>(node)].size));
}

double IsolationForest::score(std::span<const double> x) const {
  double total = 0.0;
  for (std::size_t i = 0; i < trees_.size(); ++i) total += path_length(i, x);
  const double mean = total / static_cast<double>(trees_.size());
  const double norm = average_path_length(static_cast<std::size_t>(subsample_));
  return std::pow(2.0, -mean / norm);
}

}  // namespace cnet
