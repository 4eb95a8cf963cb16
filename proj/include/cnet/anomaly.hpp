#pragma once

#include "cnet/baselines.hpp"
#include "cnet/network.hpp"
#include "cnet/training.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cnet {

// Rotations about a fixed horizontal axis; angles[0] must be 0 (identity).
struct TransformationSet {
  std::vector<double> angles_deg{0, 45, 90, 135, 210, 240, 300, 330};
  Vec3 axis = Vec3::UnitX();

  std::size_t size() const { return angles_deg.size(); }
  // Throws ConfigError unless angles start at 0 and the axis is a unit vector
  // with no vertical (z) component.
  void validate() const;
};

// Rodrigues rotation about `axis` through the origin. Features are untouched.
PointCloud rotate(const PointCloud& cloud, double angle_deg, const Vec3& axis);

struct SurrogateDataset {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
};

// Item (P, n) is T_n(P) labeled n, for every normal P and every transformation.
SurrogateDataset build_surrogate_dataset(std::span<const PointCloud> normals,
                                         const TransformationSet& ts);

// Mean posterior of the applied transformation over all N transformations.
double normality_score(const Network& net, const PointCloud& cloud, const TransformationSet& ts,
                       std::uint64_t eval_seed, const ForwardOptions& accumulation = {});

// |net(P) - center|^2
double dsvdd_score(const Network& net, const Eigen::VectorXd& center, const PointCloud& cloud,
                   std::uint64_t eval_seed, const ForwardOptions& accumulation = {});

struct ScoredDataset {
  std::vector<std::string> ids;
  std::vector<double> scores;  // higher = more anomalous
  std::vector<int> labels;     // 0 normal, 1 anomalous
};

enum class DetectorKind { self_supervised, dsvdd, good_ifor };

DetectorKind parse_detector_kind(std::string_view name);
std::string_view to_string(DetectorKind kind);

struct DetectConfig {
  DetectorKind detector = DetectorKind::self_supervised;
  LayerKind layer = LayerKind::aggr_composite;
  int j0 = 32;
  int num_centers = 256;
  int spatial_size = 32;
  double sigma = 0.3;
  int latent_dim = 32;
  TransformationSet transformations;
  TrainConfig train;
  std::uint64_t seed = 0;  // network initialization and evaluation sampling
  int good_bins = 5;
  IsolationForestConfig ifor;

  // Defaults for each detector: self-supervised J0=32 M=256 K=32, Deep SVDD J0=8 M=128 K=96.
  static DetectConfig defaults_for(DetectorKind kind);
};

struct TestItem {
  const PointCloud* cloud;
  int label;  // 0 normal, 1 anomalous
  std::string id;
};

ScoredDataset detect(std::span<const PointCloud> train_normals, std::span<const TestItem> test,
                     const DetectConfig& config);

// "instance_id,score,label"
void write_scores_csv(const std::filesystem::path& path, const ScoredDataset& scored);
ScoredDataset read_scores_csv(const std::filesystem::path& path);

}  // namespace cnet
