#include "cnet/geometry.hpp"

#include "cnet/error.hpp"
#include "cnet/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

namespace cnet {

PointCloud::PointCloud(Points pts, Matrix feats)
    : points(std::move(pts)), features(std::move(feats)) {}

PointCloud PointCloud::with_unit_features(Points pts, Eigen::Index width) {
  Matrix feats = Matrix::Ones(pts.rows(), width);
  return PointCloud(std::move(pts), std::move(feats));
}

void PointCloud::validate() const {
  if (points.rows() < 1) throw ShapeError("empty point cloud");
  if (features.rows() != points.rows()) {
    throw ShapeError("feature rows " + std::to_string(features.rows()) +
                     " != point count " + std::to_string(points.rows()));
  }
  if (!points.allFinite() || !features.allFinite()) {
    throw ShapeError("point cloud contains non-finite entries");
  }
}

namespace {

using Candidate = std::pair<double, std::int32_t>;  // (squared distance, index)

// Bounded max-heap of the `limit` smallest candidates under (d2, index) order.
// The order is total, so the result does not depend on visiting order.
class NearestSet {
 public:
  explicit NearestSet(int limit) : limit_(static_cast<std::size_t>(limit)) {}

  void offer(const Candidate& c) {
    if (heap_.size() < limit_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (c < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }
  bool full() const { return heap_.size() == limit_; }
  double worst() const { return heap_.front().first; }
  void clear() { heap_.clear(); }

  void sorted_into(std::vector<Candidate>& out) {
    std::sort_heap(heap_.begin(), heap_.end());
    out.assign(heap_.begin(), heap_.end());
  }

 private:
  std::size_t limit_;
  std::vector<Candidate> heap_;
};

// Uniform grid over the cloud's bounding box; queries expand Chebyshev rings of
// cells until no unvisited cell can hold a closer point.
class PointGrid {
 public:
  explicit PointGrid(const Points& pts) : pts_(pts) {
    const Eigen::Index n = pts.rows();
    lo_ = pts.colwise().minCoeff().transpose();
    const Vec3 hi = pts.colwise().maxCoeff().transpose();
    const double extent = std::max((hi - lo_).maxCoeff(), 1e-12);
    const int res = std::clamp(static_cast<int>(std::cbrt(static_cast<double>(n) / 2.0)), 1, 64);
    cell_ = extent / res;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::clamp(static_cast<int>((hi[a] - lo_[a]) / cell_) + 1, 1, res);
    }
    start_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    std::vector<int> cell_of(static_cast<std::size_t>(n));
    for (Eigen::Index p = 0; p < n; ++p) {
      const Vec3 x = pts.row(p).transpose();
      const int c = flat(cell_coord(x, 0), cell_coord(x, 1), cell_coord(x, 2));
      cell_of[static_cast<std::size_t>(p)] = c;
      ++start_[static_cast<std::size_t>(c) + 1];
    }
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    order_.resize(static_cast<std::size_t>(n));
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (Eigen::Index p = 0; p < n; ++p) {
      order_[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell_of[static_cast<std::size_t>(p)])]++)] =
          static_cast<std::int32_t>(p);
    }
  }

  void query(const Vec3& y, bool exclude_center, NearestSet& set) const {
    set.clear();
    const std::array<int, 3> c{cell_coord(y, 0), cell_coord(y, 1), cell_coord(y, 2)};
    const int max_ring = std::max({c[0], dims_[0] - 1 - c[0], c[1], dims_[1] - 1 - c[1], c[2],
                                   dims_[2] - 1 - c[2]});
    for (int r = 0; r <= max_ring; ++r) {
      for (int i = c[0] - r; i <= c[0] + r; ++i) {
        if (i < 0 || i >= dims_[0]) continue;
        for (int j = c[1] - r; j <= c[1] + r; ++j) {
          if (j < 0 || j >= dims_[1]) continue;
          const bool edge_ij = std::abs(i - c[0]) == r || std::abs(j - c[1]) == r;
          for (int k = c[2] - r; k <= c[2] + r; ++k) {
            if (k < 0 || k >= dims_[2]) continue;
            if (!edge_ij && std::abs(k - c[2]) != r) continue;
            scan_cell(flat(i, j, k), y, exclude_center, set);
          }
        }
      }
      if (set.full()) {
        const double bound = unvisited_bound(y, c, r);
        if (set.worst() < bound * bound) return;
      }
    }
  }

 private:
  int cell_coord(const Vec3& x, int a) const {
    const int v = static_cast<int>(std::floor((x[a] - lo_[a]) / cell_));
    return std::clamp(v, 0, dims_[a] - 1);
  }
  int flat(int i, int j, int k) const { return (i * dims_[1] + j) * dims_[2] + k; }

  void scan_cell(int cell, const Vec3& y, bool exclude_center, NearestSet& set) const {
    for (int s = start_[static_cast<std::size_t>(cell)]; s < start_[static_cast<std::size_t>(cell) + 1]; ++s) {
      const std::int32_t p = order_[static_cast<std::size_t>(s)];
      const double dx = pts_(p, 0) - y[0];
      const double dy = pts_(p, 1) - y[1];
      const double dz = pts_(p, 2) - y[2];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (exclude_center && d2 == 0.0) continue;
      set.offer({d2, p});
    }
  }

  // Lower bound on the distance from y to any cell outside ring r.
  double unvisited_bound(const Vec3& y, const std::array<int, 3>& c, int r) const {
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (c[a] - r > 0) bound = std::min(bound, y[a] - (lo_[a] + (c[a] - r) * cell_));
      if (c[a] + r < dims_[a] - 1) bound = std::min(bound, lo_[a] + (c[a] + r + 1) * cell_ - y[a]);
    }
    return std::max(bound, 0.0);
  }

  const Points& pts_;
  Vec3 lo_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<int> start_;
  std::vector<std::int32_t> order_;
};

}  // namespace

WindowSet knn_windows(const PointCloud& cloud, const Points& outputs, int window_size,
                      const KnnOptions& options) {
  if (cloud.size() < 1) throw ShapeError("empty point cloud");
  if (window_size < 1) throw ShapeError("window size must be positive");
  if (outputs.rows() < 1) throw ShapeError("no output points");
  if (!outputs.allFinite()) throw ShapeError("output points must be finite");

  WindowSet windows;
  windows.outputs = outputs;
  windows.window_size = window_size;
  windows.indices.resize(static_cast<std::size_t>(outputs.rows()) * window_size);

  const PointGrid grid(cloud.points);
  NearestSet set(window_size);
  std::vector<Candidate> nearest;
  for (Eigen::Index q = 0; q < outputs.rows(); ++q) {
    const Vec3 y = outputs.row(q).transpose();
    grid.query(y, options.exclude_center, set);
    set.sorted_into(nearest);
    if (nearest.empty()) {
      // Every input coincides with y; fall back to keeping the center.
      grid.query(y, false, set);
      set.sorted_into(nearest);
    }
    std::int32_t* row = windows.indices.data() + q * window_size;
    for (int w = 0; w < window_size; ++w) row[w] = nearest[w % nearest.size()].second;
  }
  return windows;
}

namespace {

// Fenwick tree over non-negative selection weights.
class WeightTree {
 public:
  explicit WeightTree(std::size_t n) : tree_(n + 1, 0.0), weights_(n, 0.0) {}

  void set(std::size_t i, double w) {
    const double delta = w - weights_[i];
    weights_[i] = w;
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += delta;
  }

  double weight(std::size_t i) const { return weights_[i]; }

  double total() const {
    double s = 0.0;
    for (std::size_t k = tree_.size() - 1; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  // Smallest index whose inclusive prefix sum exceeds u.
  std::size_t find(double u) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 < tree_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      if (pos + step < tree_.size() && tree_[pos + step] <= u) {
        pos += step;
        u -= tree_[pos];
      }
    }
    return std::min(pos, weights_.size() - 1);
  }

 private:
  std::vector<double> tree_;
  std::vector<double> weights_;
};

}  // namespace

Points sample_output_points(const PointCloud& cloud, int count, std::uint64_t seed,
                            const SamplerOptions& options) {
  const Eigen::Index n = cloud.size();
  if (n < 1) throw ShapeError("empty point cloud");
  if (count < 1) throw ShapeError("output count must be positive");

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WeightTree weights(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) weights.set(static_cast<std::size_t>(i), 1.0);

  std::vector<std::vector<std::int32_t>> neighbor_cache(static_cast<std::size_t>(n));
  std::vector<Candidate> nearest;
  std::optional<PointGrid> grid;
  NearestSet set(options.neighbors + 1);
  Points out(count, 3);
  for (int q = 0; q < count; ++q) {
    double total = weights.total();
    if (!(total > 0.0)) {
      for (Eigen::Index i = 0; i < n; ++i) weights.set(static_cast<std::size_t>(i), 1.0);
      total = static_cast<double>(n);
    }
    std::size_t pick = weights.find(unit(rng) * total);
    if (weights.weight(pick) <= 0.0) {
      // Rounding pushed the search onto an exhausted point; take the next live one.
      std::size_t k = pick;
      do {
        k = (k + 1) % static_cast<std::size_t>(n);
      } while (weights.weight(k) <= 0.0 && k != pick);
      pick = k;
    }
    out.row(q) = cloud.points.row(static_cast<Eigen::Index>(pick));

    auto& neigh = neighbor_cache[pick];
    if (neigh.empty() && options.neighbors > 0 && n > 1) {
      if (!grid) grid.emplace(cloud.points);
      grid->query(cloud.points.row(static_cast<Eigen::Index>(pick)).transpose(), false, set);
      set.sorted_into(nearest);
      for (const auto& c : nearest) {
        if (static_cast<std::size_t>(c.second) == pick) continue;
        if (static_cast<int>(neigh.size()) == options.neighbors) break;
        neigh.push_back(c.second);
      }
    }
    weights.set(pick, weights.weight(pick) * options.attenuation);
    for (std::int32_t j : neigh) {
      const auto idx = static_cast<std::size_t>(j);
      weights.set(idx, weights.weight(idx) * options.attenuation);
    }
  }
  return out;
}

PointCloud normalize(const PointCloud& cloud) {
  PointCloud out = cloud;
  if (out.size() == 0) return out;
  const Eigen::RowVector3d centroid = out.points.colwise().mean();
  out.points.rowwise() -= centroid;
  const double radius = out.points.rowwise().norm().maxCoeff();
  if (radius > 0.0) out.points /= radius;
  return out;
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open point cloud file " + path.string());
  std::vector<std::array<double, 3>> coords;
  std::vector<std::vector<double>> feats;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::array<double, 3> xyz{};
    if (!(fields >> xyz[0] >> xyz[1] >> xyz[2])) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected at least three coordinates");
    }
    std::vector<double> f;
    std::string token;
    while (fields >> token) {
      try {
        f.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": bad feature value '" + token + "'");
      }
    }
    width = std::max(width, f.size());
    coords.push_back(xyz);
    feats.push_back(std::move(f));
  }
  if (coords.empty()) throw FormatError("no points in " + path.string());
  if (width == 0) width = 1;
  Points pts(static_cast<Eigen::Index>(coords.size()), 3);
  Matrix features = Matrix::Ones(pts.rows(), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < coords.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    pts.row(row) << coords[r][0], coords[r][1], coords[r][2];
    for (std::size_t c = 0; c < feats[r].size(); ++c) {
      features(row, static_cast<Eigen::Index>(c)) = feats[r][c];
    }
  }
  PointCloud cloud(std::move(pts), std::move(features));
  cloud.validate();
  return cloud;
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index r = 0; r < cloud.size(); ++r) {
    out << cloud.points(r, 0) << ' ' << cloud.points(r, 1) << ' ' << cloud.points(r, 2);
    for (Eigen::Index c = 0; c < cloud.feature_width(); ++c) out << ' ' << cloud.features(r, c);
    out << '\n';
  }
}

}  // namespace cnet
