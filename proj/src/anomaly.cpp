#include "cnet/anomaly.hpp"

#include "cnet/error.hpp"
#include "cnet/parallel.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cnet {

void TransformationSet::validate() const {
  if (angles_deg.empty() || angles_deg.front() != 0.0) {
    throw ConfigError("transformation set must start with the identity (angle 0)");
  }
  if (std::abs(axis.norm() - 1.0) > 1e-9) throw ConfigError("rotation axis must be a unit vector");
  if (std::abs(axis.z()) > 1e-12) throw ConfigError("rotation axis must be horizontal");
}

PointCloud rotate(const PointCloud& cloud, double angle_deg, const Vec3& axis) {
  const double norm = axis.norm();
  if (norm == 0.0) throw ShapeError("rotation axis must be non-zero");
  if (std::abs(norm - 1.0) > 1e-9) throw ShapeError("rotation axis must have unit length");
  const Vec3 k = axis / norm;
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix3d cross;
  cross << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  const Eigen::Matrix3d rot =
      Eigen::Matrix3d::Identity() + s * cross + (1.0 - c) * cross * cross;
  PointCloud out = cloud;
  out.points = cloud.points * rot.transpose();
  return out;
}

SurrogateDataset build_surrogate_dataset(std::span<const PointCloud> normals,
                                         const TransformationSet& ts) {
  if (normals.empty()) throw ShapeError("no normal instances");
  SurrogateDataset ds;
  for (const auto& p : normals) {
    for (std::size_t n = 0; n < ts.size(); ++n) {
      ds.clouds.push_back(ts.angles_deg[n] == 0.0 ? p : rotate(p, ts.angles_deg[n], ts.axis));
      ds.labels.push_back(static_cast<int>(n));
    }
  }
  return ds;
}

double normality_score(const Network& net, const PointCloud& cloud, const TransformationSet& ts,
                       std::uint64_t eval_seed, const ForwardOptions& accumulation) {
  if (static_cast<std::size_t>(net.spec().head_width) != ts.size()) {
    throw ShapeError("network classifies " + std::to_string(net.spec().head_width) +
                     " transformations, set holds " + std::to_string(ts.size()));
  }
  std::vector<PointCloud> views;
  views.reserve(ts.size());
  for (double angle : ts.angles_deg) {
    views.push_back(angle == 0.0 ? cloud : rotate(cloud, angle, ts.axis));
  }
  ForwardConfig config;
  config.training = false;
  config.sampling_seed = eval_seed;
  config.accumulation = accumulation;
  const Matrix probs = softmax_rows(net.forward(views, config));
  double sum = 0.0;
  for (Eigen::Index n = 0; n < probs.rows(); ++n) sum += probs(n, n);
  return sum / static_cast<double>(ts.size());
}

double dsvdd_score(const Network& net, const Eigen::VectorXd& center, const PointCloud& cloud,
                   std::uint64_t eval_seed, const ForwardOptions& accumulation) {
  const Eigen::VectorXd z = net.predict(cloud, eval_seed, accumulation);
  if (z.size() != center.size()) throw ShapeError("embedding and center dimensions differ");
  return (z - center).squaredNorm();
}

DetectorKind parse_detector_kind(std::string_view name) {
  if (name == "self_supervised") return DetectorKind::self_supervised;
  if (name == "dsvdd") return DetectorKind::dsvdd;
  if (name == "good_ifor") return DetectorKind::good_ifor;
  throw ConfigError("unknown detector '" + std::string(name) + "'");
}

std::string_view to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::self_supervised: return "self_supervised";
    case DetectorKind::dsvdd: return "dsvdd";
    case DetectorKind::good_ifor: return "good_ifor";
  }
  return "unknown";
}

DetectConfig DetectConfig::defaults_for(DetectorKind kind) {
  DetectConfig c;
  c.detector = kind;
  if (kind == DetectorKind::dsvdd) {
    c.j0 = 8;
    c.num_centers = 128;
    c.spatial_size = 96;
    c.train.loss = LossKind::dsvdd;
  }
  return c;
}

ScoredDataset detect(std::span<const PointCloud> train_normals, std::span<const TestItem> test,
                     const DetectConfig& config) {
  if (train_normals.empty()) throw ShapeError("empty training set");
  ScoredDataset out;
  out.scores.resize(test.size());
  for (const auto& item : test) {
    out.ids.push_back(item.id);
    out.labels.push_back(item.label);
  }
  const std::uint64_t eval_seed = substream(config.seed, "evaluation");

  switch (config.detector) {
    case DetectorKind::self_supervised: {
      config.transformations.validate();
      if (config.transformations.size() < 2) {
        throw ConfigError("self-supervised detection needs at least two transformations");
      }
      NetworkSpec spec = classification_spec(config.layer, config.j0, config.num_centers,
                                             config.spatial_size,
                                             static_cast<int>(config.transformations.size()));
      spec.sigma = config.sigma;
      Network net(spec, substream(config.seed, "init"));
      const SurrogateDataset surrogate = build_surrogate_dataset(train_normals, config.transformations);
      TrainConfig tc = config.train;
      tc.loss = LossKind::cross_entropy;
      train(net, surrogate.clouds, surrogate.labels, tc);
      parallel_for(test.size(), [&](std::size_t i) {
        out.scores[i] = -normality_score(net, *test[i].cloud, config.transformations, eval_seed,
                                         tc.accumulation);
      });
      break;
    }
    case DetectorKind::dsvdd: {
      NetworkSpec spec = dsvdd_spec(config.layer, config.j0, config.num_centers,
                                    config.spatial_size, config.latent_dim);
      spec.sigma = config.sigma;
      Network net(spec, substream(config.seed, "init"));
      TrainConfig tc = config.train;
      tc.loss = LossKind::dsvdd;
      const TrainResult trained = train(net, train_normals, {}, tc);
      const Eigen::VectorXd center =
          trained.center.size() ? trained.center
                                : dsvdd_center(net, train_normals, substream(tc.seed, "sampling"),
                                               tc.accumulation);
      parallel_for(test.size(), [&](std::size_t i) {
        out.scores[i] = dsvdd_score(net, center, *test[i].cloud, eval_seed, tc.accumulation);
      });
      break;
    }
    case DetectorKind::good_ifor: {
      std::vector<std::vector<double>> descriptors;
      for (const auto& cloud : train_normals) {
        descriptors.push_back(good_describe(cloud, config.good_bins).values);
      }
      IsolationForestConfig ic = config.ifor;
      ic.seed = substream(config.seed, "ifor");
      const IsolationForest forest = IsolationForest::fit(descriptors, ic);
      parallel_for(test.size(), [&](std::size_t i) {
        out.scores[i] = forest.score(good_describe(*test[i].cloud, config.good_bins).values);
      });
      break;
    }
  }
  return out;
}

void write_scores_csv(const std::filesystem::path& path, const ScoredDataset& scored) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "instance_id,score,label\n";
  for (std::size_t i = 0; i < scored.scores.size(); ++i) {
    out << scored.ids[i] << ',' << scored.scores[i] << ','
        << (scored.labels[i] == 1 ? "anomalous" : "normal") << '\n';
  }
}

ScoredDataset read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  ScoredDataset s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    std::string id, score, label;
    if (!std::getline(fields, id, ',') || !std::getline(fields, score, ',') ||
        !std::getline(fields, label)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    }
    if (!label.empty() && label.back() == '\r') label.pop_back();
    s.ids.push_back(id);
    try {
      s.scores.push_back(std::stod(score));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    if (label == "anomalous" || label == "1") {
      s.labels.push_back(1);
    } else if (label == "normal" || label == "0") {
      s.labels.push_back(0);
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad label '" + label + "'");
    }
  }
  return s;
}

}  // namespace cnet
