#include "doctest.h"
#include "support.hpp"

#include "cnet/error.hpp"
#include "cnet/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

using namespace cnet;

namespace {

// Exhaustive reference: sort every input by (squared distance, index).
std::vector<std::int32_t> brute_knn(const Points& pts, const Vec3& y, int w, bool exclude_center) {
  std::vector<std::pair<double, std::int32_t>> all;
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    const double d2 = (pts.row(p).transpose() - y).squaredNorm();
    if (exclude_center && d2 == 0.0) continue;
    all.emplace_back(d2, static_cast<std::int32_t>(p));
  }
  std::sort(all.begin(), all.end());
  std::vector<std::int32_t> out;
  for (int i = 0; i < w; ++i) out.push_back(all[static_cast<std::size_t>(i) % all.size()].second);
  return out;
}

// Straightforward weighted draw with linear scans, mirroring the sampler contract.
Points reference_sampler(const Points& pts, int count, std::uint64_t seed, double beta, int neighbors) {
  const auto n = static_cast<std::size_t>(pts.rows());
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> w(n, 1.0);
  Points out(count, 3);
  for (int q = 0; q < count; ++q) {
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
      std::fill(w.begin(), w.end(), 1.0);
      total = static_cast<double>(n);
    }
    const double u = unit(rng) * total;
    std::size_t pick = 0;
    double run = 0.0;
    for (; pick < n; ++pick) {
      run += w[pick];
      if (run > u) break;
    }
    pick = std::min(pick, n - 1);
    out.row(q) = pts.row(static_cast<Eigen::Index>(pick));
    std::vector<std::pair<double, std::size_t>> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != pick) others.emplace_back((pts.row(j) - pts.row(pick)).squaredNorm(), j);
    }
    std::sort(others.begin(), others.end());
    w[pick] *= beta;
    for (std::size_t k = 0; k < others.size() && static_cast<int>(k) < neighbors; ++k) {
      w[others[k].second] *= beta;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("knn: nearest-distance ordering") {
  Points pts(3, 3);
  pts << 0, 0, 0, 1, 0, 0, 5, 0, 0;
  Points out(1, 3);
  out << 0.1, 0, 0;
  const auto ws = knn_windows(PointCloud::with_unit_features(pts), out, 2);
  CHECK(ws.indices == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("knn: fewer points than the window repeat cyclically") {
  Points one(1, 3);
  one << 0.3, -2, 4;
  Points out(1, 3);
  out << 10, 10, 10;
  CHECK(knn_windows(PointCloud::with_unit_features(one), out, 3).indices ==
        std::vector<std::int32_t>{0, 0, 0});

  Points two(2, 3);
  two << 0, 0, 0, 2, 0, 0;
  Points y(1, 3);
  y << 1.5, 0, 0;
  CHECK(knn_windows(PointCloud::with_unit_features(two), y, 5).indices ==
        std::vector<std::int32_t>{1, 0, 1, 0, 1});
}

TEST_CASE("knn: empty cloud is rejected") {
  Points out(1, 3);
  out.setZero();
  CHECK_THROWS_WITH_AS(knn_windows(PointCloud{}, out, 2), "empty point cloud", ShapeError);
}

TEST_CASE("knn: matches exhaustive search, including exact ties") {
  Rng rng(7);
  std::uniform_int_distribution<int> n_dist(1, 256), q_dist(1, 64), w_dist(1, 32), grid(-3, 3);
  for (int trial = 0; trial < 120; ++trial) {
    const int n = n_dist(rng), q = q_dist(rng), w = w_dist(rng);
    Points pts(n, 3);
    const bool lattice = trial % 2 == 0;  // integer lattice produces many equal distances
    if (lattice) {
      for (int i = 0; i < n; ++i) pts.row(i) << grid(rng), grid(rng), grid(rng);
    } else {
      pts = testing::random_points(n, rng, 2.0);
    }
    Points outs(q, 3);
    for (int i = 0; i < q; ++i) {
      if (lattice) {
        outs.row(i) << grid(rng), grid(rng), grid(rng);
      } else if (i % 3 == 0) {
        outs.row(i) = pts.row(i % n);
      } else {
        outs.row(i) = testing::random_points(1, rng, 2.5).row(0);
      }
    }
    const bool exclude = trial % 4 == 1;
    const auto ws = knn_windows(PointCloud::with_unit_features(pts), outs, w, {exclude});
    for (int i = 0; i < q; ++i) {
      const auto expect = brute_knn(pts, outs.row(i).transpose(), w, exclude);
      const auto got = ws.row(i);
      REQUIRE(std::vector<std::int32_t>(got.begin(), got.end()) == expect);
    }
  }
}

TEST_CASE("knn: permuting the cloud permutes the windows") {
  Rng rng(11);
  const Points pts = testing::random_points(80, rng);
  const Points outs = testing::random_points(12, rng);
  std::vector<int> perm(80);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points permuted(80, 3);
  for (int i = 0; i < 80; ++i) permuted.row(i) = pts.row(perm[static_cast<std::size_t>(i)]);
  const auto a = knn_windows(PointCloud::with_unit_features(pts), outs, 10);
  const auto b = knn_windows(PointCloud::with_unit_features(permuted), outs, 10);
  for (int q = 0; q < 12; ++q) {
    std::multiset<int> sa, sb;
    for (auto idx : a.row(q)) sa.insert(idx);
    for (auto idx : b.row(q)) sb.insert(perm[static_cast<std::size_t>(idx)]);
    CHECK(sa == sb);
  }
}

TEST_CASE("knn: exclude_center drops the coincident point") {
  Points pts(3, 3);
  pts << 0, 0, 0, 1, 0, 0, 3, 0, 0;
  Points out(1, 3);
  out << 0, 0, 0;
  CHECK(knn_windows(PointCloud::with_unit_features(pts), out, 2, {true}).indices ==
        std::vector<std::int32_t>{1, 2});
}

TEST_CASE("sampler: single point gives copies") {
  Points one(1, 3);
  one << 1, 2, 3;
  const Points s = sample_output_points(PointCloud::with_unit_features(one), 5, 42);
  REQUIRE(s.rows() == 5);
  for (int i = 0; i < 5; ++i) CHECK(s.row(i) == one.row(0));
}

TEST_CASE("sampler: agrees with a direct simulation of the weighted draws") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10 + trial * 7;
    const Points pts = testing::random_points(n, rng);
    const auto cloud = PointCloud::with_unit_features(pts);
    for (double beta : {0.0, 0.25}) {
      const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
      const Points got = sample_output_points(cloud, 2 * n, seed, {beta, 8});
      const Points want = reference_sampler(pts, 2 * n, seed, beta, 8);
      REQUIRE(got == want);
    }
  }
}

TEST_CASE("sampler: beta = 0 spreads the draws") {
  Rng rng(3);
  const Points pts = testing::random_points(16, rng);
  const Points s = sample_output_points(PointCloud::with_unit_features(pts), 16, 9, {0.0, 8});
  std::set<std::tuple<double, double, double>> distinct;
  for (int i = 0; i < 16; ++i) distinct.insert({s(i, 0), s(i, 1), s(i, 2)});
  CHECK(distinct.size() * 9 >= 16);
}

TEST_CASE("sampler: fixed seed is reproducible, other seeds differ") {
  Rng rng(1);
  const auto cloud = PointCloud::with_unit_features(testing::random_points(200, rng));
  CHECK(sample_output_points(cloud, 64, 77) == sample_output_points(cloud, 64, 77));
  CHECK(sample_output_points(cloud, 64, 77) != sample_output_points(cloud, 64, 78));
  CHECK_THROWS_AS(sample_output_points(PointCloud{}, 3, 1), ShapeError);
}

TEST_CASE("normalize: examples and idempotence") {
  Points two(2, 3);
  two << 1, 1, 1, 3, 1, 1;
  const PointCloud n2 = normalize(PointCloud::with_unit_features(two));
  Points expect(2, 3);
  expect << -1, 0, 0, 1, 0, 0;
  CHECK((n2.points - expect).cwiseAbs().maxCoeff() < 1e-15);

  Points single(1, 3);
  single << 7, 7, 7;
  CHECK(normalize(PointCloud::with_unit_features(single)).points.isZero());

  Rng rng(2);
  const PointCloud c = testing::random_cloud(50, 2, rng, 4.0);
  const PointCloud once = normalize(c);
  const PointCloud twice = normalize(once);
  CHECK((once.points - twice.points).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(once.features == c.features);
  CHECK(once.points.rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("point cloud text IO") {
  const auto dir = testing::scratch_dir("geometry_io");
  {
    std::ofstream f(dir / "a.xyz");
    f << "# comment\n0 0 0\n1 2 3 0.5 0.25\n\n4 5 6 7\n";
  }
  const PointCloud c = read_point_cloud(dir / "a.xyz");
  REQUIRE(c.size() == 3);
  REQUIRE(c.feature_width() == 2);
  CHECK(c.features(0, 0) == 1.0);
  CHECK(c.features(0, 1) == 1.0);
  CHECK(c.features(1, 1) == 0.25);
  CHECK(c.features(2, 0) == 7.0);
  CHECK(c.features(2, 1) == 1.0);

  Rng rng(4);
  const PointCloud r = testing::random_cloud(20, 3, rng);
  write_point_cloud(dir / "b.xyz", r);
  const PointCloud back = read_point_cloud(dir / "b.xyz");
  CHECK(back.points == r.points);
  CHECK(back.features == r.features);

  CHECK_THROWS_AS(read_point_cloud(dir / "missing.xyz"), FormatError);
  {
    std::ofstream f(dir / "bad.xyz");
    f << "1 2\n";
  }
  CHECK_THROWS_AS(read_point_cloud(dir / "bad.xyz"), FormatError);
}

}  // TEST_SUITE
