#pragma once

#include "cnet/geometry.hpp"
#include "cnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace testing {

inline cnet::PointCloud random_cloud(int n, int features, cnet::Rng& rng, double spread = 1.0) {
  std::uniform_real_distribution<double> unit(-spread, spread);
  cnet::Points pts(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) pts(i, a) = unit(rng);
  }
  cnet::Matrix feats(n, features);
  for (int i = 0; i < n; ++i) {
    for (int f = 0; f < features; ++f) feats(i, f) = unit(rng);
  }
  return {pts, feats};
}

inline cnet::Points random_points(int n, cnet::Rng& rng, double spread = 1.0) {
  return random_cloud(n, 1, rng, spread).points;
}

// Relative error with an absolute floor so near-zero entries compare absolutely.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of f at *x, restoring x afterwards.
inline double central_difference(double* x, const std::function<double()>& f, double h = 1e-5) {
  const double saved = *x;
  *x = saved + h;
  const double plus = f();
  *x = saved - h;
  const double minus = f();
  *x = saved;
  return (plus - minus) / (2.0 * h);
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
