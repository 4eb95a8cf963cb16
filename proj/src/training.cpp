#include "cnet/training.hpp"

#include "cnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace cnet {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - top).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index c = logits.cols();
  if (static_cast<std::size_t>(b) != labels.size() || b == 0) {
    throw ShapeError("logit rows and label count differ");
  }
  LossResult result;
  result.grad = softmax_rows(logits);
  for (Eigen::Index r = 0; r < b; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= c) {
      throw ShapeError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
    const double top = logits.row(r).maxCoeff();
    const double log_norm = top + std::log((logits.row(r).array() - top).exp().sum());
    result.loss += log_norm - logits(r, label);
    result.grad(r, label) -= 1.0;
  }
  result.loss /= static_cast<double>(b);
  result.grad /= static_cast<double>(b);
  return result;
}

LossResult dsvdd_loss(const Matrix& embeddings, const Eigen::VectorXd& center,
                      double noise_sigma, Rng& rng) {
  if (embeddings.cols() != center.size() || center.size() < 1) {
    throw ShapeError("embedding width does not match center dimension");
  }
  const double b = static_cast<double>(embeddings.rows());
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  LossResult result;
  result.grad.resize(embeddings.rows(), embeddings.cols());
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      const double eps = noise_sigma > 0.0 ? noise(rng) : 0.0;
      const double diff = embeddings(r, c) + eps - center[c];
      result.loss += diff * diff;
      result.grad(r, c) = 2.0 * diff / b;
    }
  }
  result.loss /= b;
  return result;
}

AdamState::AdamState(std::span<const ParamRef> params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    first_.push_back(p.tensor->zeros_like());
    second_.push_back(p.tensor->zeros_like());
  }
}

void AdamState::step(std::span<const ParamRef> params, const Gradients& grads) {
  if (params.size() != first_.size() || grads.size() != params.size()) {
    throw ShapeError("optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(*params[i].tensor)) {
      throw ShapeError("gradient shape mismatch for " + params[i].name);
    }
    for (double g : grads[i].data) {
      if (!std::isfinite(g)) throw DivergenceError("diverged: non-finite gradient for " + params[i].name);
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].tensor->data;
    auto& m = first_[i].data;
    auto& v = second_[i].data;
    const auto& g = grads[i].data;
    for (std::size_t e = 0; e < value.size(); ++e) {
      m[e] = config_.beta1 * m[e] + (1.0 - config_.beta1) * g[e];
      v[e] = config_.beta2 * v[e] + (1.0 - config_.beta2) * g[e] * g[e];
      const double m_hat = m[e] / correction1;
      const double v_hat = v[e] / correction2;
      value[e] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

Eigen::VectorXd dsvdd_center(const Network& net, std::span<const PointCloud> clouds,
                             std::uint64_t sampling_seed, const ForwardOptions& accumulation) {
  if (clouds.empty()) throw ShapeError("empty training set");
  ForwardConfig config;
  config.training = false;
  config.sampling_seed = sampling_seed;
  config.accumulation = accumulation;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(net.spec().head_width);
  constexpr std::size_t chunk = 16;
  for (std::size_t first = 0; first < clouds.size(); first += chunk) {
    const auto part = clouds.subspan(first, std::min(chunk, clouds.size() - first));
    sum += net.forward(part, config).colwise().sum().transpose();
  }
  Eigen::VectorXd center = sum / static_cast<double>(clouds.size());
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    if (std::abs(center[i]) < 0.1) center[i] = center[i] < 0.0 ? -0.1 : 0.1;
  }
  return center;
}

TrainResult train(Network& net, std::span<const PointCloud> clouds, std::span<const int> labels,
                  const TrainConfig& config) {
  TrainResult result;
  if (config.epochs <= 0) return result;
  if (clouds.empty()) throw ShapeError("empty training set");
  if (config.batch_size < 1) throw ConfigError("batch size must be positive");
  if (config.loss == LossKind::cross_entropy && labels.size() != clouds.size()) {
    throw ShapeError("label count does not match training set");
  }

  const std::uint64_t sampling_stream = substream(config.seed, "sampling");
  if (config.loss == LossKind::dsvdd) {
    result.center = dsvdd_center(net, clouds, sampling_stream, config.accumulation);
  }
  Rng shuffle_rng(substream(config.seed, "shuffle"));
  Rng noise_rng(substream(config.seed, "noise"));
  const auto params = net.parameters();
  AdamState adam(params, config.adam);

  std::vector<std::size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - first);
      // A single-item batch carries no batch statistics for the final stage.
      if (count < 2 && order.size() > 1) continue;
      std::vector<PointCloud> batch;
      std::vector<int> batch_labels;
      for (std::size_t i = first; i < first + count; ++i) {
        batch.push_back(clouds[order[i]]);
        if (!labels.empty()) batch_labels.push_back(labels[order[i]]);
      }
      ForwardConfig fc;
      fc.training = true;
      fc.sampling_seed = derive_seed(sampling_stream, step++);
      fc.accumulation = config.accumulation;
      NetworkCache cache;
      const Matrix out = net.forward(batch, fc, &cache);

      LossResult loss;
      if (config.loss == LossKind::cross_entropy) {
        loss = cross_entropy_loss(out, batch_labels);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
          Eigen::Index arg = 0;
          out.row(r).maxCoeff(&arg);
          if (arg == batch_labels[static_cast<std::size_t>(r)]) ++correct;
        }
      } else {
        loss = dsvdd_loss(out, result.center, config.noise_sigma, noise_rng);
      }
      Gradients grads = net.zero_gradients();
      net.backward(cache, loss.grad, grads);
      adam.step(params, grads);
      net.update_running_stats(cache);
      loss_sum += loss.loss * static_cast<double>(count);
      seen += count;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    record.accuracy = config.loss == LossKind::cross_entropy && seen
                          ? static_cast<double>(correct) / static_cast<double>(seen)
                          : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(record.loss)) throw DivergenceError("diverged: loss is not finite");
    result.log.push_back(record);
    if (config.on_epoch) config.on_epoch(record);
  }
  if (config.recalibrate_batch_norm) {
    recalibrate_batch_norm(net, clouds, config.batch_size, substream(config.seed, "calibration"),
                           config.accumulation);
  }
  return result;
}

void recalibrate_batch_norm(Network& net, std::span<const PointCloud> clouds, int batch_size,
                            std::uint64_t seed, const ForwardOptions& accumulation) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  const std::size_t stages = net.stages().size();
  std::vector<Eigen::RowVectorXd> mean_sum(stages), var_sum(stages);
  for (std::size_t s = 0; s < stages; ++s) {
    mean_sum[s] = Eigen::RowVectorXd::Zero(net.stages()[s].norm.channels());
    var_sum[s] = mean_sum[s];
  }
  Rng rng(seed);
  std::vector<std::size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t batches = 0;
  for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - first);
    if (count < 2) continue;
    std::vector<PointCloud> batch;
    for (std::size_t i = first; i < first + count; ++i) batch.push_back(clouds[order[i]]);
    ForwardConfig fc;
    fc.training = true;
    fc.sampling_seed = derive_seed(seed, batches);
    fc.accumulation = accumulation;
    NetworkCache cache;
    net.forward(batch, fc, &cache);
    for (std::size_t s = 0; s < stages; ++s) {
      const double n = static_cast<double>(cache.stages[s].activated.rows());
      mean_sum[s] += cache.stages[s].norm.mean;
      var_sum[s] += cache.stages[s].norm.var * (n > 1.0 ? n / (n - 1.0) : 1.0);
    }
    ++batches;
  }
  if (batches == 0) return;
  for (std::size_t s = 0; s < stages; ++s) {
    net.stages()[s].norm.running_mean = mean_sum[s] / static_cast<double>(batches);
    net.stages()[s].norm.running_var = var_sum[s] / static_cast<double>(batches);
  }
}

void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> log) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(10);
  out << "epoch,loss,accuracy\n";
  for (const auto& r : log) out << r.epoch << ',' << r.loss << ',' << r.accuracy << '\n';
}

}  // namespace cnet
