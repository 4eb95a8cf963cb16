#include "cnet/layers.hpp"

#include "cnet/error.hpp"

#include <algorithm>
#include <cmath>

namespace cnet {

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

namespace {

Tensor gaussian_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

Tensor uniform_centers(int m, Rng& rng) {
  Tensor t({static_cast<std::size_t>(m), 3});
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (double& v : t.data) v = dist(rng);
  return t;
}

ConstMatMap as_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(t.ptr(), rows, cols);
}

MatMap as_matrix(Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return MatMap(t.ptr(), rows, cols);
}

void check_input(const PointCloud& in, const WindowSet& windows, int expected_width) {
  if (in.size() < 1) throw ShapeError("empty point cloud");
  if (in.feature_width() != expected_width) {
    throw ShapeError("feature width mismatch: expected I=" + std::to_string(expected_width) +
                     ", got I=" + std::to_string(in.feature_width()));
  }
  if (windows.window_size < 1 || windows.count() < 1 ||
      windows.indices.size() != static_cast<std::size_t>(windows.count()) * windows.window_size) {
    throw ShapeError("malformed window set");
  }
  for (std::int32_t idx : windows.indices) {
    if (idx < 0 || idx >= in.size()) {
      throw ShapeError("window index " + std::to_string(idx) + " outside cloud of size " +
                       std::to_string(in.size()));
    }
  }
}

void check_grads(std::span<Tensor> grads, const std::vector<const Tensor*>& params) {
  if (grads.size() != params.size()) {
    throw ShapeError("expected " + std::to_string(params.size()) + " gradient tensors, got " +
                     std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(*params[i])) {
      throw ShapeError("gradient shape " + shape_string(grads[i].shape) + " != parameter shape " +
                       shape_string(params[i]->shape));
    }
  }
}

// Window indices in accumulation order, offsets x - y and Gaussian responses.
void gather_windows(const PointCloud& in, const WindowSet& windows, const ForwardOptions& options,
                    const Tensor& centers, double sigma, PointLayerCache& cache) {
  const Eigen::Index q_count = windows.count();
  const int w = windows.window_size;
  const auto m = static_cast<Eigen::Index>(centers.shape[0]);
  cache.visit = windows.indices;
  if (options.sorted_accumulation) {
    for (Eigen::Index q = 0; q < q_count; ++q) {
      auto first = cache.visit.begin() + q * w;
      std::sort(first, first + w);
    }
  }
  const Eigen::Index rows = q_count * w;
  cache.offsets.resize(rows, 3);
  cache.gaussians.resize(rows, m);
  const double scale = -1.0 / (2.0 * sigma * sigma);
  const double* c = centers.ptr();
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const double y0 = windows.outputs(q, 0), y1 = windows.outputs(q, 1),
                 y2 = windows.outputs(q, 2);
    for (int t = 0; t < w; ++t) {
      const Eigen::Index r = q * w + t;
      const Eigen::Index p = cache.visit[static_cast<std::size_t>(r)];
      const double d0 = in.points(p, 0) - y0;
      const double d1 = in.points(p, 1) - y1;
      const double d2 = in.points(p, 2) - y2;
      cache.offsets(r, 0) = d0;
      cache.offsets(r, 1) = d1;
      cache.offsets(r, 2) = d2;
      double* h = cache.gaussians.row(r).data();
      for (Eigen::Index k = 0; k < m; ++k) {
        const double e0 = d0 - c[3 * k], e1 = d1 - c[3 * k + 1], e2 = d2 - c[3 * k + 2];
        h[k] = scale * (e0 * e0 + e1 * e1 + e2 * e2);
      }
    }
  }
  cache.gaussians.array() = cache.gaussians.array().exp();
}

// Window features in accumulation order: W x I.
Matrix window_features(const PointCloud& in, const PointLayerCache& cache, Eigen::Index q, int w) {
  Matrix phi(w, in.feature_width());
  for (int t = 0; t < w; ++t) {
    phi.row(t) = in.features.row(cache.visit[static_cast<std::size_t>(q * w + t)]);
  }
  return phi;
}

void scatter_rows(const PointLayerCache& cache, Eigen::Index q, int w, const Matrix& rows,
                  Matrix& target) {
  for (int t = 0; t < w; ++t) {
    target.row(cache.visit[static_cast<std::size_t>(q * w + t)]) += rows.row(t);
  }
}

// dL/dc_m = sum_r dL/dh_rm * h_rm * (d_r - c_m) / sigma^2
void centers_backward(const Tensor& centers, double sigma, const PointLayerCache& cache,
                      const Matrix& grad_gaussians, Tensor& grad_centers) {
  const auto m = static_cast<Eigen::Index>(centers.shape[0]);
  const Matrix weighted = grad_gaussians.cwiseProduct(cache.gaussians);
  const Matrix pulled = weighted.transpose() * cache.offsets;  // M x 3
  const Eigen::VectorXd mass = weighted.colwise().sum().transpose();
  auto dc = as_matrix(grad_centers, m, 3);
  const auto c = as_matrix(centers, m, 3);
  const double inv_var = 1.0 / (sigma * sigma);
  for (Eigen::Index k = 0; k < m; ++k) {
    dc.row(k) += inv_var * (pulled.row(k) - mass[k] * c.row(k));
  }
}

void spatial_backward(const RbfSpatialFn& fn, const PointLayerCache& cache,
                      const Matrix& grad_spatial, Tensor& grad_centers, Tensor& grad_weights) {
  const Eigen::Index m = fn.num_centers();
  const Eigen::Index k = fn.output_size();
  const auto v = as_matrix(fn.weights, k, m);
  as_matrix(grad_weights, k, m).noalias() += grad_spatial.transpose() * cache.gaussians;
  const Matrix grad_gaussians = grad_spatial * v;
  centers_backward(fn.centers, fn.sigma, cache, grad_gaussians, grad_centers);
}

// Column means and (n - 1)-denominator standard deviations of a W x C block.
void window_moments(const Eigen::Ref<const Matrix>& block, double* mean, double* stddev) {
  const Eigen::Index w = block.rows();
  for (Eigen::Index c = 0; c < block.cols(); ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < w; ++r) sum += block(r, c);
    const double mu = sum / static_cast<double>(w);
    double sq = 0.0;
    for (Eigen::Index r = 0; r < w; ++r) {
      const double d = block(r, c) - mu;
      sq += d * d;
    }
    mean[c] = mu;
    stddev[c] = std::sqrt(sq / static_cast<double>(w - 1));
  }
}

// Pulls d/d(mean) and d/d(std) back onto the W rows of the pooled block.
Matrix moments_backward(const Eigen::Ref<const Matrix>& block, const double* mean,
                        const double* stddev, const double* grad_mean, const double* grad_std) {
  const Eigen::Index w = block.rows();
  Matrix grad(w, block.cols());
  for (Eigen::Index c = 0; c < block.cols(); ++c) {
    const double from_mean = grad_mean[c] / static_cast<double>(w);
    const double std_scale =
        stddev[c] > 0.0 ? grad_std[c] / (static_cast<double>(w - 1) * stddev[c]) : 0.0;
    for (Eigen::Index r = 0; r < w; ++r) {
      grad(r, c) = from_mean + std_scale * (block(r, c) - mean[c]);
    }
  }
  return grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// RbfSpatialFn

RbfSpatialFn RbfSpatialFn::create(int num_centers, int output_size, double sigma, Rng& rng) {
  if (num_centers < 1 || output_size < 1) throw ShapeError("RBF sizes must be positive");
  if (!(sigma > 0.0)) throw ShapeError("RBF width sigma must be positive");
  RbfSpatialFn fn;
  fn.centers = uniform_centers(num_centers, rng);
  fn.weights = gaussian_tensor({static_cast<std::size_t>(output_size),
                                static_cast<std::size_t>(num_centers)},
                               1.0 / std::sqrt(static_cast<double>(num_centers)), rng);
  fn.sigma = sigma;
  return fn;
}

Tensor RbfSpatialFn::forward(const Tensor& offsets) const {
  if (offsets.shape.size() != 3 || offsets.shape[2] != 3) {
    throw ShapeError("offsets must be B x W x 3, got " + shape_string(offsets.shape));
  }
  const std::size_t points = offsets.shape[0] * offsets.shape[1];
  const int m = num_centers();
  const int k = output_size();
  Tensor out({offsets.shape[0], offsets.shape[1], static_cast<std::size_t>(k)});
  std::vector<double> h(static_cast<std::size_t>(m));
  const double scale = -1.0 / (2.0 * sigma * sigma);
  for (std::size_t p = 0; p < points; ++p) {
    const double* d = offsets.ptr() + 3 * p;
    for (int c = 0; c < m; ++c) {
      const double e0 = d[0] - centers[3 * c], e1 = d[1] - centers[3 * c + 1],
                   e2 = d[2] - centers[3 * c + 2];
      h[c] = std::exp(scale * (e0 * e0 + e1 * e1 + e2 * e2));
    }
    for (int r = 0; r < k; ++r) {
      double s = 0.0;
      for (int c = 0; c < m; ++c) s += weights[static_cast<std::size_t>(r * m + c)] * h[c];
      out[p * k + r] = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ConvCompositeLayer

ConvCompositeLayer::ConvCompositeLayer(int in_features, int out_features, int num_centers,
                                       int spatial_size, double sigma, Rng& rng)
    : spatial(RbfSpatialFn::create(num_centers, spatial_size, sigma, rng)),
      weights(gaussian_tensor({static_cast<std::size_t>(out_features),
                               static_cast<std::size_t>(in_features),
                               static_cast<std::size_t>(spatial_size)},
                              1.0 / std::sqrt(static_cast<double>(in_features * spatial_size)),
                              rng)) {
  if (in_features < 1 || out_features < 1) throw ShapeError("layer widths must be positive");
}

std::vector<ParamRef> ConvCompositeLayer::parameters() {
  return {{"centers", &spatial.centers}, {"spatial_weights", &spatial.weights},
          {"weights", &weights}};
}

Matrix ConvCompositeLayer::forward(const PointCloud& in, const WindowSet& windows,
                                   PointLayerCache* cache, const ForwardOptions& options) const {
  check_input(in, windows, in_features());
  PointLayerCache local;
  PointLayerCache& c = cache ? *cache : local;
  gather_windows(in, windows, options, spatial.centers, spatial.sigma, c);

  const int w = windows.window_size;
  const Eigen::Index q_count = windows.count();
  const Eigen::Index i_width = in_features();
  const Eigen::Index k_width = spatial.output_size();
  const auto v = as_matrix(spatial.weights, k_width, spatial.num_centers());
  c.spatial.noalias() = c.gaussians * v.transpose();

  c.pooled.resize(q_count, i_width * k_width);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const Matrix phi = window_features(in, c, q, w);
    MatMap(c.pooled.row(q).data(), i_width, k_width).noalias() =
        phi.transpose() * c.spatial.middleRows(q * w, w);
  }
  const auto wt = as_matrix(weights, out_features(), i_width * k_width);
  return c.pooled * wt.transpose();
}

Matrix ConvCompositeLayer::backward(const PointCloud& in, const PointLayerCache& cache,
                                    const Matrix& grad_out, std::span<Tensor> grads,
                                    bool input_grad) const {
  check_grads(grads, {&spatial.centers, &spatial.weights, &weights});
  const Eigen::Index q_count = cache.pooled.rows();
  if (grad_out.rows() != q_count || grad_out.cols() != out_features()) {
    throw ShapeError("upstream gradient shape mismatch");
  }
  const int w = static_cast<int>(cache.visit.size() / static_cast<std::size_t>(q_count));
  const Eigen::Index i_width = in_features();
  const Eigen::Index k_width = spatial.output_size();
  const auto wt = as_matrix(weights, out_features(), i_width * k_width);

  as_matrix(grads[2], out_features(), i_width * k_width).noalias() +=
      grad_out.transpose() * cache.pooled;
  const Matrix grad_pooled = grad_out * wt;

  Matrix grad_spatial(cache.spatial.rows(), k_width);
  Matrix grad_input;
  if (input_grad) grad_input = Matrix::Zero(in.size(), i_width);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const Matrix phi = window_features(in, cache, q, w);
    const ConstMatMap grad_a(grad_pooled.row(q).data(), i_width, k_width);
    grad_spatial.middleRows(q * w, w).noalias() = phi * grad_a;
    if (input_grad) {
      const Matrix grad_phi = cache.spatial.middleRows(q * w, w) * grad_a.transpose();
      scatter_rows(cache, q, w, grad_phi, grad_input);
    }
  }
  spatial_backward(spatial, cache, grad_spatial, grads[0], grads[1]);
  return grad_input;
}

PointCloud ConvCompositeLayer::apply(const PointCloud& in, const WindowSet& windows,
                                     const ForwardOptions& options) const {
  return PointCloud(windows.outputs, forward(in, windows, nullptr, options));
}

// ---------------------------------------------------------------------------
// AggrCompositeLayer

AggrCompositeLayer::AggrCompositeLayer(int in_features, int out_features, int num_centers,
                                       int spatial_size, double sigma, Rng& rng)
    : spatial(RbfSpatialFn::create(num_centers, spatial_size, sigma, rng)),
      weights(gaussian_tensor({static_cast<std::size_t>(out_features),
                               static_cast<std::size_t>(2 * in_features),
                               static_cast<std::size_t>(2 * spatial_size)},
                              1.0 / std::sqrt(static_cast<double>(4 * in_features * spatial_size)),
                              rng)) {
  if (in_features < 1 || out_features < 1) throw ShapeError("layer widths must be positive");
}

std::vector<ParamRef> AggrCompositeLayer::parameters() {
  return {{"centers", &spatial.centers}, {"spatial_weights", &spatial.weights},
          {"weights", &weights}};
}

Matrix AggrCompositeLayer::forward(const PointCloud& in, const WindowSet& windows,
                                   PointLayerCache* cache, const ForwardOptions& options) const {
  check_input(in, windows, in_features());
  if (windows.window_size < 2) {
    throw ShapeError("aggregate layer needs window size >= 2 (standard deviation undefined)");
  }
  PointLayerCache local;
  PointLayerCache& c = cache ? *cache : local;
  gather_windows(in, windows, options, spatial.centers, spatial.sigma, c);

  const int w = windows.window_size;
  const Eigen::Index q_count = windows.count();
  const Eigen::Index i_width = in_features();
  const Eigen::Index k_width = spatial.output_size();
  const auto v = as_matrix(spatial.weights, k_width, spatial.num_centers());
  c.spatial.noalias() = c.gaussians * v.transpose();

  c.theta.resize(q_count, 2 * k_width);
  c.eta.resize(q_count, 2 * i_width);
  c.pooled.resize(q_count, 4 * i_width * k_width);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    double* theta = c.theta.row(q).data();
    double* eta = c.eta.row(q).data();
    window_moments(c.spatial.middleRows(q * w, w), theta, theta + k_width);
    const Matrix phi = window_features(in, c, q, w);
    window_moments(phi, eta, eta + i_width);
    // Row-major (2I x 2K) outer product eta theta^T, matching w_ijk's (i, k) layout.
    MatMap(c.pooled.row(q).data(), 2 * i_width, 2 * k_width).noalias() =
        c.eta.row(q).transpose() * c.theta.row(q);
  }
  const auto wt = as_matrix(weights, out_features(), 4 * i_width * k_width);
  return c.pooled * wt.transpose();
}

Matrix AggrCompositeLayer::backward(const PointCloud& in, const PointLayerCache& cache,
                                    const Matrix& grad_out, std::span<Tensor> grads,
                                    bool input_grad) const {
  check_grads(grads, {&spatial.centers, &spatial.weights, &weights});
  const Eigen::Index q_count = cache.pooled.rows();
  if (grad_out.rows() != q_count || grad_out.cols() != out_features()) {
    throw ShapeError("upstream gradient shape mismatch");
  }
  const int w = static_cast<int>(cache.visit.size() / static_cast<std::size_t>(q_count));
  const Eigen::Index i_width = in_features();
  const Eigen::Index k_width = spatial.output_size();
  const auto wt = as_matrix(weights, out_features(), 4 * i_width * k_width);

  as_matrix(grads[2], out_features(), 4 * i_width * k_width).noalias() +=
      grad_out.transpose() * cache.pooled;
  const Matrix grad_pooled = grad_out * wt;

  Matrix grad_spatial(cache.spatial.rows(), k_width);
  Matrix grad_input;
  if (input_grad) grad_input = Matrix::Zero(in.size(), i_width);
  Eigen::RowVectorXd grad_theta(2 * k_width);
  Eigen::RowVectorXd grad_eta(2 * i_width);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const ConstMatMap grad_outer(grad_pooled.row(q).data(), 2 * i_width, 2 * k_width);
    grad_theta.noalias() = cache.eta.row(q) * grad_outer;
    grad_eta.noalias() = cache.theta.row(q) * grad_outer.transpose();
    const double* theta = cache.theta.row(q).data();
    grad_spatial.middleRows(q * w, w) =
        moments_backward(cache.spatial.middleRows(q * w, w), theta, theta + k_width,
                         grad_theta.data(), grad_theta.data() + k_width);
    if (input_grad) {
      const Matrix phi = window_features(in, cache, q, w);
      const double* eta = cache.eta.row(q).data();
      const Matrix grad_phi = moments_backward(phi, eta, eta + i_width, grad_eta.data(),
                                               grad_eta.data() + i_width);
      scatter_rows(cache, q, w, grad_phi, grad_input);
    }
  }
  spatial_backward(spatial, cache, grad_spatial, grads[0], grads[1]);
  return grad_input;
}

PointCloud AggrCompositeLayer::apply(const PointCloud& in, const WindowSet& windows,
                                     const ForwardOptions& options) const {
  return PointCloud(windows.outputs, forward(in, windows, nullptr, options));
}

// ---------------------------------------------------------------------------
// BaselinePointConvLayer

BaselinePointConvLayer::BaselinePointConvLayer(int in_features, int out_features,
                                               int num_centers, double sigma_, Rng& rng)
    : centers(uniform_centers(num_centers, rng)),
      weights(gaussian_tensor({static_cast<std::size_t>(out_features),
                               static_cast<std::size_t>(in_features),
                               static_cast<std::size_t>(num_centers)},
                              1.0 / std::sqrt(static_cast<double>(in_features * num_centers)),
                              rng)),
      sigma(sigma_) {
  if (in_features < 1 || out_features < 1 || num_centers < 1) {
    throw ShapeError("layer sizes must be positive");
  }
  if (!(sigma > 0.0)) throw ShapeError("sigma must be positive");
}

std::vector<ParamRef> BaselinePointConvLayer::parameters() {
  return {{"centers", &centers}, {"weights", &weights}};
}

Matrix BaselinePointConvLayer::forward(const PointCloud& in, const WindowSet& windows,
                                       PointLayerCache* cache,
                                       const ForwardOptions& options) const {
  check_input(in, windows, in_features());
  PointLayerCache local;
  PointLayerCache& c = cache ? *cache : local;
  gather_windows(in, windows, options, centers, sigma, c);

  const int w = windows.window_size;
  const Eigen::Index q_count = windows.count();
  const Eigen::Index i_width = in_features();
  const Eigen::Index m = num_centers();
  c.pooled.resize(q_count, i_width * m);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const Matrix phi = window_features(in, c, q, w);
    MatMap(c.pooled.row(q).data(), i_width, m).noalias() =
        phi.transpose() * c.gaussians.middleRows(q * w, w);
  }
  const auto wt = as_matrix(weights, out_features(), i_width * m);
  return c.pooled * wt.transpose();
}

Matrix BaselinePointConvLayer::backward(const PointCloud& in, const PointLayerCache& cache,
                                        const Matrix& grad_out, std::span<Tensor> grads,
                                        bool input_grad) const {
  check_grads(grads, {&centers, &weights});
  const Eigen::Index q_count = cache.pooled.rows();
  if (grad_out.rows() != q_count || grad_out.cols() != out_features()) {
    throw ShapeError("upstream gradient shape mismatch");
  }
  const int w = static_cast<int>(cache.visit.size() / static_cast<std::size_t>(q_count));
  const Eigen::Index i_width = in_features();
  const Eigen::Index m = num_centers();
  const auto wt = as_matrix(weights, out_features(), i_width * m);

  as_matrix(grads[1], out_features(), i_width * m).noalias() +=
      grad_out.transpose() * cache.pooled;
  const Matrix grad_pooled = grad_out * wt;

  Matrix grad_gaussians(cache.gaussians.rows(), m);
  Matrix grad_input;
  if (input_grad) grad_input = Matrix::Zero(in.size(), i_width);
  for (Eigen::Index q = 0; q < q_count; ++q) {
    const Matrix phi = window_features(in, cache, q, w);
    const ConstMatMap grad_b(grad_pooled.row(q).data(), i_width, m);
    grad_gaussians.middleRows(q * w, w).noalias() = phi * grad_b;
    if (input_grad) {
      const Matrix grad_phi = cache.gaussians.middleRows(q * w, w) * grad_b.transpose();
      scatter_rows(cache, q, w, grad_phi, grad_input);
    }
  }
  centers_backward(centers, sigma, cache, grad_gaussians, grads[0]);
  return grad_input;
}

PointCloud BaselinePointConvLayer::apply(const PointCloud& in, const WindowSet& windows,
                                         const ForwardOptions& options) const {
  return PointCloud(windows.outputs, forward(in, windows, nullptr, options));
}

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(int in_features, int out_features, bool with_bias, Rng& rng)
    : weights(gaussian_tensor({static_cast<std::size_t>(out_features),
                               static_cast<std::size_t>(in_features)},
                              1.0 / std::sqrt(static_cast<double>(in_features)), rng)) {
  if (in_features < 1 || out_features < 1) throw ShapeError("dense sizes must be positive");
  if (with_bias) bias = Tensor({static_cast<std::size_t>(out_features)});
}

std::vector<ParamRef> DenseLayer::parameters() {
  std::vector<ParamRef> refs{{"weights", &weights}};
  if (has_bias()) refs.push_back({"bias", &bias});
  return refs;
}

Matrix DenseLayer::forward(const Matrix& x) const {
  if (x.cols() != in_features()) {
    throw ShapeError("dense input width mismatch: expected " + std::to_string(in_features()) +
                     ", got " + std::to_string(x.cols()));
  }
  Matrix y = x * as_matrix(weights, out_features(), in_features()).transpose();
  if (has_bias()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.ptr(), out_features());
  }
  return y;
}

Matrix DenseLayer::backward(const Matrix& x, const Matrix& grad_out,
                            std::span<Tensor> grads) const {
  if (grads.size() != (has_bias() ? 2u : 1u) || !grads[0].same_shape(weights)) {
    throw ShapeError("dense gradient buffers do not match parameters");
  }
  if (grad_out.rows() != x.rows() || grad_out.cols() != out_features()) {
    throw ShapeError("dense upstream gradient shape mismatch");
  }
  as_matrix(grads[0], out_features(), in_features()).noalias() += grad_out.transpose() * x;
  if (has_bias()) {
    Eigen::Map<Eigen::RowVectorXd>(grads[1].ptr(), out_features()) += grad_out.colwise().sum();
  }
  return grad_out * as_matrix(weights, out_features(), in_features());
}

// ---------------------------------------------------------------------------
// BatchNormLayer

BatchNormLayer::BatchNormLayer(int channels)
    : gamma({static_cast<std::size_t>(channels)}),
      beta({static_cast<std::size_t>(channels)}),
      running_mean(Eigen::RowVectorXd::Zero(channels)),
      running_var(Eigen::RowVectorXd::Ones(channels)) {
  gamma.fill(1.0);
}

std::vector<ParamRef> BatchNormLayer::parameters() {
  return {{"gamma", &gamma}, {"beta", &beta}};
}

Matrix BatchNormLayer::forward(const Matrix& x, bool training, BatchNormCache* cache) const {
  if (x.cols() != channels()) throw ShapeError("batch norm channel mismatch");
  BatchNormCache local;
  BatchNormCache& c = cache ? *cache : local;
  c.training = training;
  if (training) {
    if (x.rows() < 1) throw ShapeError("batch norm needs at least one row");
    c.mean = x.colwise().mean();
    c.var = (x.rowwise() - c.mean).array().square().colwise().mean();
  } else {
    c.mean = running_mean;
    c.var = running_var;
  }
  c.inv_std = (c.var.array() + epsilon).rsqrt();
  c.normalized = (x.rowwise() - c.mean).array().rowwise() * c.inv_std.array();
  const Eigen::Map<const Eigen::RowVectorXd> g(gamma.ptr(), channels());
  const Eigen::Map<const Eigen::RowVectorXd> b(beta.ptr(), channels());
  Matrix y = c.normalized.array().rowwise() * g.array();
  y.rowwise() += b;
  return y;
}

Matrix BatchNormLayer::backward(const BatchNormCache& cache, const Matrix& grad_out,
                                std::span<Tensor> grads) const {
  if (grads.size() != 2 || grad_out.cols() != channels() ||
      grad_out.rows() != cache.normalized.rows()) {
    throw ShapeError("batch norm gradient shape mismatch");
  }
  const Eigen::Map<const Eigen::RowVectorXd> g(gamma.ptr(), channels());
  const Eigen::RowVectorXd grad_sum = grad_out.colwise().sum();
  const Eigen::RowVectorXd grad_dot = grad_out.cwiseProduct(cache.normalized).colwise().sum();
  Eigen::Map<Eigen::RowVectorXd>(grads[0].ptr(), channels()) += grad_dot;
  Eigen::Map<Eigen::RowVectorXd>(grads[1].ptr(), channels()) += grad_sum;

  const Eigen::RowVectorXd scale = g.cwiseProduct(cache.inv_std);
  if (!cache.training) return grad_out.array().rowwise() * scale.array();
  const double n = static_cast<double>(grad_out.rows());
  Matrix centered = grad_out.rowwise() - grad_sum / n;
  centered -= (cache.normalized.array().rowwise() * (grad_dot / n).array()).matrix();
  return centered.array().rowwise() * scale.array();
}

void BatchNormLayer::update_running(const BatchNormCache& cache, Eigen::Index rows) {
  const double n = static_cast<double>(rows);
  const double correction = rows > 1 ? n / (n - 1.0) : 1.0;
  running_mean = momentum * running_mean + (1.0 - momentum) * cache.mean;
  running_var = momentum * running_var + (1.0 - momentum) * correction * cache.var;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& activated, const Matrix& grad_out) {
  return (activated.array() > 0.0).select(grad_out, 0.0);
}

}  // namespace cnet
