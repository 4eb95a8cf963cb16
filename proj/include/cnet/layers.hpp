#pragma once

#include "cnet/geometry.hpp"
#include "cnet/rng.hpp"
#include "cnet/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace cnet {

struct ForwardOptions {
  // Visit window points in ascending input-index order so the result does not
  // depend on the order in which the window lists them.
  bool sorted_accumulation = false;
};

// Radial basis function network mapping an offset x - y to a K-vector:
//   s_k(d) = sum_m v_km * exp(-|d - c_m|^2 / (2 sigma^2)).
// Centers c (M x 3) and mixing weights v (K x M) are learnable; sigma is fixed.
struct RbfSpatialFn {
  Tensor centers;  // M x 3
  Tensor weights;  // K x M
  double sigma = 0.3;

  static RbfSpatialFn create(int num_centers, int output_size, double sigma, Rng& rng);

  int num_centers() const { return static_cast<int>(centers.shape[0]); }
  int output_size() const { return static_cast<int>(weights.shape[0]); }
  std::size_t parameter_count() const { return centers.size() + weights.size(); }

  // offsets: B x W x 3. Returns B x W x K.
  Tensor forward(const Tensor& offsets) const;
};

// Values cached by a point-layer forward pass for the matching backward pass.
struct PointLayerCache {
  std::vector<std::int32_t> visit;  // Q x W input indices in accumulation order
  Matrix offsets;                   // (Q*W) x 3
  Matrix gaussians;                 // (Q*W) x M
  Matrix spatial;                   // (Q*W) x K, composite layers only
  Matrix pooled;                    // Q x (contracted width) fed to the weight tensor
  Matrix theta;                     // aggregate layer: Q x 2K
  Matrix eta;                       // aggregate layer: Q x 2I
};

// psi_j(y) = sum_{x in X_y} sum_i phi_i(x) sum_k w_ijk s_k(x - y)
class ConvCompositeLayer {
 public:
  RbfSpatialFn spatial;
  Tensor weights;  // J x I x K

  ConvCompositeLayer() = default;
  ConvCompositeLayer(int in_features, int out_features, int num_centers, int spatial_size,
                     double sigma, Rng& rng);

  int in_features() const { return static_cast<int>(weights.shape[1]); }
  int out_features() const { return static_cast<int>(weights.shape[0]); }
  std::size_t parameter_count() const { return spatial.parameter_count() + weights.size(); }
  std::vector<ParamRef> parameters();

  Matrix forward(const PointCloud& in, const WindowSet& windows, PointLayerCache* cache,
                 const ForwardOptions& options = {}) const;
  // Accumulates into grads (ordered as parameters()); returns dL/dphi (N x I)
  // or an empty matrix when input_grad is false.
  Matrix backward(const PointCloud& in, const PointLayerCache& cache, const Matrix& grad_out,
                  std::span<Tensor> grads, bool input_grad = true) const;

  PointCloud apply(const PointCloud& in, const WindowSet& windows,
                   const ForwardOptions& options = {}) const;
};

// psi_j(y) = theta(y)^T W_j eta(y), with theta = [mean_s; std_s] over the window
// and eta = [mean_phi; std_phi]. Standard deviations use the (|X_y| - 1) denominator.
class AggrCompositeLayer {
 public:
  RbfSpatialFn spatial;
  Tensor weights;  // J x 2I x 2K

  AggrCompositeLayer() = default;
  AggrCompositeLayer(int in_features, int out_features, int num_centers, int spatial_size,
                     double sigma, Rng& rng);

  int in_features() const { return static_cast<int>(weights.shape[1]) / 2; }
  int out_features() const { return static_cast<int>(weights.shape[0]); }
  std::size_t parameter_count() const { return spatial.parameter_count() + weights.size(); }
  std::vector<ParamRef> parameters();

  Matrix forward(const PointCloud& in, const WindowSet& windows, PointLayerCache* cache,
                 const ForwardOptions& options = {}) const;
  Matrix backward(const PointCloud& in, const PointLayerCache& cache, const Matrix& grad_out,
                  std::span<Tensor> grads, bool input_grad = true) const;

  PointCloud apply(const PointCloud& in, const WindowSet& windows,
                   const ForwardOptions& options = {}) const;
};

// Weight-tensor point convolution with Gaussian correlations:
//   psi_j(y) = sum_{x in X_y} sum_i phi_i(x) sum_m wt_ijm H_m(x - y)
class BaselinePointConvLayer {
 public:
  Tensor centers;  // M x 3
  Tensor weights;  // J x I x M
  double sigma = 0.3;

  BaselinePointConvLayer() = default;
  BaselinePointConvLayer(int in_features, int out_features, int num_centers, double sigma,
                         Rng& rng);

  int in_features() const { return static_cast<int>(weights.shape[1]); }
  int out_features() const { return static_cast<int>(weights.shape[0]); }
  int num_centers() const { return static_cast<int>(centers.shape[0]); }
  std::size_t parameter_count() const { return centers.size() + weights.size(); }
  std::vector<ParamRef> parameters();

  Matrix forward(const PointCloud& in, const WindowSet& windows, PointLayerCache* cache,
                 const ForwardOptions& options = {}) const;
  Matrix backward(const PointCloud& in, const PointLayerCache& cache, const Matrix& grad_out,
                  std::span<Tensor> grads, bool input_grad = true) const;

  PointCloud apply(const PointCloud& in, const WindowSet& windows,
                   const ForwardOptions& options = {}) const;
};

class DenseLayer {
 public:
  Tensor weights;  // out x in
  Tensor bias;     // out, empty when the layer has no bias

  DenseLayer() = default;
  DenseLayer(int in_features, int out_features, bool with_bias, Rng& rng);

  int in_features() const { return static_cast<int>(weights.shape[1]); }
  int out_features() const { return static_cast<int>(weights.shape[0]); }
  bool has_bias() const { return !bias.shape.empty(); }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  std::vector<ParamRef> parameters();

  // x: B x in -> B x out
  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& grad_out, std::span<Tensor> grads) const;
};

struct BatchNormCache {
  Matrix normalized;        // rows x C
  Eigen::RowVectorXd mean;  // batch statistics
  Eigen::RowVectorXd var;   // biased batch variance
  Eigen::RowVectorXd inv_std;
  bool training = false;
};

// Per-channel normalization over feature columns (never coordinates).
class BatchNormLayer {
 public:
  Tensor gamma;  // C
  Tensor beta;   // C
  Eigen::RowVectorXd running_mean;
  Eigen::RowVectorXd running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels);

  int channels() const { return static_cast<int>(gamma.size()); }
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
  std::vector<ParamRef> parameters();

  // Training mode normalizes with batch statistics; evaluation mode with the
  // running averages. The running averages are only changed by update_running.
  Matrix forward(const Matrix& x, bool training, BatchNormCache* cache) const;
  Matrix backward(const BatchNormCache& cache, const Matrix& grad_out,
                  std::span<Tensor> grads) const;
  void update_running(const BatchNormCache& cache, Eigen::Index rows);
};

Matrix relu(const Matrix& x);
// Gradient of relu given its output.
Matrix relu_backward(const Matrix& activated, const Matrix& grad_out);

}  // namespace cnet
