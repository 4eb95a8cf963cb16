#include "cnet/datasets.hpp"

#include "cnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cnet {

namespace fs = std::filesystem;

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "cube") return ShapeKind::cube;
  if (name == "cylinder") return ShapeKind::cylinder;
  if (name == "cone") return ShapeKind::cone;
  if (name == "torus") return ShapeKind::torus;
  throw ConfigError("unknown shape kind '" + std::string(name) + "'");
}

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::cone: return "cone";
    case ShapeKind::torus: return "torus";
  }
  return "unknown";
}

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 on_sphere(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Vec3 on_cube(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> face(0, 5);
  const int f = face(rng);
  Vec3 v(u(rng), u(rng), u(rng));
  v[f / 2] = (f % 2 == 0) ? 1.0 : -1.0;
  return v;
}

// Unit disk, uniform by area.
std::pair<double, double> on_disk(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = std::sqrt(u(rng));
  const double a = 2.0 * kPi * u(rng);
  return {r * std::cos(a), r * std::sin(a)};
}

Vec3 on_cylinder(Rng& rng) {
  // Lateral area 4 pi, each cap pi.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pick = u(rng) * 6.0 * kPi;
  if (pick < 4.0 * kPi) {
    const double a = 2.0 * kPi * u(rng);
    return Vec3(std::cos(a), std::sin(a), 2.0 * u(rng) - 1.0);
  }
  const auto [x, y] = on_disk(rng);
  return Vec3(x, y, pick < 5.0 * kPi ? 1.0 : -1.0);
}

Vec3 on_cone(Rng& rng) {
  // Apex at z = 1, base radius 1 at z = -1; slant length sqrt(5).
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lateral = kPi * std::sqrt(5.0);
  const double pick = u(rng) * (lateral + kPi);
  if (pick < lateral) {
    // Radius measured from the apex has density proportional to r.
    const double r = std::sqrt(u(rng));
    const double a = 2.0 * kPi * u(rng);
    return Vec3(r * std::cos(a), r * std::sin(a), 1.0 - 2.0 * r);
  }
  const auto [x, y] = on_disk(rng);
  return Vec3(x, y, -1.0);
}

Vec3 on_torus(Rng& rng) {
  constexpr double major = 1.0;
  constexpr double minor = 0.3;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Area element is proportional to (major + minor cos v); rejection-sample v.
  double v = 0.0;
  do {
    v = 2.0 * kPi * u(rng);
  } while (u(rng) * (major + minor) > major + minor * std::cos(v));
  const double a = 2.0 * kPi * u(rng);
  const double ring = major + minor * std::cos(v);
  return Vec3(ring * std::cos(a), ring * std::sin(a), minor * std::sin(v));
}

// Antithetic pairs (p, -p), plus an equilateral great-circle triangle when n is
// odd, so the sample centroid sits exactly at the center.
Points balanced_sphere(int n_points, Rng& rng) {
  Points pts(n_points, 3);
  const int pairs = n_points % 2 ? (n_points - 3) / 2 : n_points / 2;
  for (int i = 0; i < pairs; ++i) {
    const Vec3 p = on_sphere(rng);
    pts.row(2 * i) = p.transpose();
    pts.row(2 * i + 1) = -p.transpose();
  }
  if (n_points % 2) {
    const Vec3 a = on_sphere(rng);
    Vec3 b;
    do {
      b = on_sphere(rng);
      b -= b.dot(a) * a;
    } while (b.norm() < 1e-6);
    b.normalize();
    const double c = -0.5, s = std::sqrt(3.0) / 2.0;
    pts.row(n_points - 3) = a.transpose();
    pts.row(n_points - 2) = (c * a + s * b).transpose();
    pts.row(n_points - 1) = (c * a - s * b).transpose();
  }
  return pts;
}

}  // namespace

Points sample_surface(ShapeKind kind, int n_points, Rng& rng) {
  if (n_points < 8) throw ConfigError("shapes need at least 8 points");
  if (kind == ShapeKind::sphere) return balanced_sphere(n_points, rng);
  Points pts(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    Vec3 p;
    switch (kind) {
      case ShapeKind::sphere: break;
      case ShapeKind::cube: p = on_cube(rng); break;
      case ShapeKind::cylinder: p = on_cylinder(rng); break;
      case ShapeKind::cone: p = on_cone(rng); break;
      case ShapeKind::torus: p = on_torus(rng); break;
    }
    pts.row(i) = p.transpose();
  }
  return pts;
}

PointCloud generate_shape(ShapeKind kind, int n_points, double jitter, std::uint64_t seed) {
  Rng rng(seed);
  Points pts = sample_surface(kind, n_points, rng);
  if (jitter > 0.0) {
    std::normal_distribution<double> noise(0.0, jitter);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] += noise(rng);
  }
  return normalize(PointCloud::with_unit_features(std::move(pts)));
}

std::vector<PointCloud> LabeledDataset::clouds() const {
  std::vector<PointCloud> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(inst.cloud);
  return out;
}

std::vector<int> LabeledDataset::labels() const {
  std::vector<int> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(inst.label);
  return out;
}

PointCloud resample(const PointCloud& cloud, int points, Rng& rng) {
  if (cloud.size() < 1) throw ShapeError("empty point cloud");
  const auto n = static_cast<std::size_t>(cloud.size());
  std::vector<std::size_t> pick;
  if (n >= static_cast<std::size_t>(points)) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    pick.assign(all.begin(), all.begin() + points);
  } else {
    // Keep every original point once, then fill with uniform duplicates.
    pick.resize(n);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    std::uniform_int_distribution<std::size_t> u(0, n - 1);
    while (pick.size() < static_cast<std::size_t>(points)) pick.push_back(u(rng));
  }
  PointCloud out;
  out.points.resize(points, 3);
  out.features.resize(points, cloud.feature_width());
  for (int i = 0; i < points; ++i) {
    const auto src = static_cast<Eigen::Index>(pick[static_cast<std::size_t>(i)]);
    out.points.row(i) = cloud.points.row(src);
    out.features.row(i) = cloud.features.row(src);
  }
  return out;
}

LabeledDataset load_directory(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw FormatError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw FormatError("dataset root " + root.string() + " has no class directories");

  LabeledDataset ds;
  Rng rng(substream(options.seed, "data"));
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    ds.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      PointCloud cloud;
      try {
        cloud = read_point_cloud(file);
      } catch (const Error& e) {
        throw FormatError("cannot load " + file.string() + ": " + e.what());
      }
      cloud = resample(cloud, options.points, rng);
      if (options.normalize) cloud = normalize(cloud);
      ds.instances.push_back({std::move(cloud), static_cast<int>(c),
                              ds.class_names.back() + "/" + file.stem().string()});
    }
  }
  if (ds.instances.empty()) throw FormatError("dataset root " + root.string() + " holds no files");
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset,
                                                double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  Rng rng(substream(seed, "split"));
  LabeledDataset train, test;
  train.class_names = test.class_names = dataset.class_names;
  train.split = SplitTag::train;
  test.split = SplitTag::test;
  const int classes = static_cast<int>(dataset.class_names.size());
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.instances[i].label == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::lround(train_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < n_train ? train : test).instances.push_back(dataset.instances[members[k]]);
    }
  }
  return {std::move(train), std::move(test)};
}

LabeledDataset synthetic_dataset(const std::vector<ShapeKind>& shapes, int count,
                                 int points, double jitter, std::uint64_t seed,
                                 std::string_view id_prefix) {
  if (shapes.empty()) throw ConfigError("no shapes requested");
  if (count < 0) throw ConfigError("instance count must be non-negative");
  LabeledDataset ds;
  const int classes = static_cast<int>(shapes.size());
  for (std::size_t c = 0; c < shapes.size(); ++c) {
    ds.class_names.emplace_back(to_string(shapes[c]));
    const int per_class = count / classes + (static_cast<int>(c) < count % classes ? 1 : 0);
    for (int i = 0; i < per_class; ++i) {
      const std::uint64_t s = derive_seed(substream(seed, "data"), c, static_cast<std::uint64_t>(i));
      ds.instances.push_back({generate_shape(shapes[c], points, jitter, s), static_cast<int>(c),
                              std::string(id_prefix) + std::string(to_string(shapes[c])) + "_" +
                                  std::to_string(i)});
    }
  }
  return ds;
}

}  // namespace cnet
