#pragma once

#include "cnet/network.hpp"
#include "cnet/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace cnet {

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d input, same shape as the input
};

Matrix softmax_rows(const Matrix& logits);

// Mean over the batch of -log softmax(logits)[label]; gradient (softmax - onehot) / B.
LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

// Mean over the batch of |z + eps - center|^2 with eps ~ N(0, noise_sigma^2 I)
// drawn per item. noise_sigma = 0 disables the perturbation.
LossResult dsvdd_loss(const Matrix& embeddings, const Eigen::VectorXd& center,
                      double noise_sigma, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState(std::span<const ParamRef> params, AdamConfig config);

  // Bias-corrected Adam update. Throws DivergenceError naming the first
  // parameter whose gradient is not finite; parameters are then untouched.
  void step(std::span<const ParamRef> params, const Gradients& grads);

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Gradients first_;
  Gradients second_;
  std::uint64_t step_ = 0;
};

enum class LossKind { cross_entropy, dsvdd };

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // NaN for losses without class predictions
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;
  double noise_sigma = 0.01;  // Deep SVDD embedding noise
  ForwardOptions accumulation;
  // After the last epoch, replace the running batch-norm averages with
  // statistics measured at the final weights.
  bool recalibrate_batch_norm = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  Eigen::VectorXd center;  // Deep SVDD center, empty for cross-entropy runs
};

// Deep SVDD center: mean untrained embedding, coordinates with |c| < 0.1 pushed to +-0.1.
Eigen::VectorXd dsvdd_center(const Network& net, std::span<const PointCloud> clouds,
                             std::uint64_t sampling_seed, const ForwardOptions& accumulation = {});

TrainResult train(Network& net, std::span<const PointCloud> clouds, std::span<const int> labels,
                  const TrainConfig& config);

// Sets every batch-norm running mean/variance to the average batch statistics
// (unbiased variances) of one shuffled training-mode pass. Weights are untouched.
void recalibrate_batch_norm(Network& net, std::span<const PointCloud> clouds, int batch_size,
                            std::uint64_t seed, const ForwardOptions& accumulation = {});

// "epoch,loss,accuracy" CSV.
void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> log);

}  // namespace cnet
