#include "doctest.h"
#include "oracles.hpp"

#include "cnet/error.hpp"
#include "cnet/layers.hpp"

#include <numeric>

using namespace cnet;
using namespace testing;

TEST_SUITE("layers") {

TEST_CASE("spatial function: single-center examples") {
  RbfSpatialFn s;
  s.centers = Tensor({1, 3});
  s.weights = Tensor({1, 1});
  s.weights[0] = 2.0;
  s.sigma = 1.0;
  Tensor offsets({1, 1, 3});
  CHECK(s.forward(offsets)[0] == doctest::Approx(2.0));
  s.weights[0] = 1.0;
  offsets[0] = 1.0;
  CHECK(s.forward(offsets)[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
}

TEST_CASE("spatial function: matches the triple-loop oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const RbfSpatialFn s = RbfSpatialFn::create(4, 3, 0.4, rng);
    Tensor offsets({2, 5, 3});
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : offsets.data) v = u(rng);
    const Tensor out = s.forward(offsets);
    REQUIRE(out.shape == std::vector<std::size_t>{2, 5, 3});
    for (std::size_t r = 0; r < 10; ++r) {
      const Vec3 d(offsets[3 * r], offsets[3 * r + 1], offsets[3 * r + 2]);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(out[3 * r + k] - spatial_oracle(s, d, k)) < 1e-12);
    }
  }
}

TEST_CASE("point layers: forward matches the loop oracles") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Instance inst = random_instance(rng, 12, 2, 4, 5);
    const ConvCompositeLayer conv(2, 3, 2, 2, 0.5, rng);
    const AggrCompositeLayer aggr(2, 2, 3, 2, 0.5, rng);
    const BaselinePointConvLayer base(2, 3, 3, 0.5, rng);
    CHECK(max_abs(conv.forward(inst.cloud, inst.windows, nullptr) - conv_oracle(conv, inst.cloud, inst.windows)) < 1e-12);
    CHECK(max_abs(aggr.forward(inst.cloud, inst.windows, nullptr) - aggr_oracle(aggr, inst.cloud, inst.windows)) < 1e-12);
    CHECK(max_abs(base.forward(inst.cloud, inst.windows, nullptr) - baseline_oracle(base, inst.cloud, inst.windows)) < 1e-12);
  }
}

TEST_CASE("conv composite: window of identical points sums ones") {
  Rng rng(1);
  ConvCompositeLayer l(1, 1, 1, 1, 0.3, rng);
  l.spatial.centers.fill(0.0);
  l.spatial.weights.fill(1.0);
  l.weights.fill(1.0);
  Points pts = Points::Zero(5, 3);
  const auto cloud = PointCloud::with_unit_features(pts);
  const auto ws = knn_windows(cloud, Points::Zero(1, 3), 5);
  CHECK(l.forward(cloud, ws, nullptr)(0, 0) == doctest::Approx(5.0));
  PointCloud zero = cloud;
  zero.features.setZero();
  CHECK(l.forward(zero, ws, nullptr).isZero());
}

TEST_CASE("conv composite: weight gradient is the window sum of phi * s") {
  Rng rng(8);
  Instance inst = random_instance(rng, 6, 2, 1, 6);
  ConvCompositeLayer l(2, 1, 3, 2, 0.5, rng);
  PointLayerCache cache;
  l.forward(inst.cloud, inst.windows, &cache);
  std::vector<Tensor> grads{l.spatial.centers.zeros_like(), l.spatial.weights.zeros_like(), l.weights.zeros_like()};
  l.backward(inst.cloud, cache, Matrix::Ones(1, 1), grads, false);
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      double expect = 0.0;
      for (int t = 0; t < 6; ++t) {
        expect += inst.cloud.features(inst.windows.row(0)[static_cast<std::size_t>(t)], i) *
                  spatial_oracle(l.spatial, offset(inst.cloud, inst.windows, 0, t), k);
      }
      CHECK(grads[2][static_cast<std::size_t>(i * 2 + k)] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregate composite: zero spread and rank-one form") {
  Rng rng(4);
  AggrCompositeLayer l(1, 1, 2, 1, 0.5, rng);
  Points pts(4, 3);
  pts.rowwise() = Eigen::RowVector3d(0.2, -0.1, 0.3);
  PointCloud cloud = PointCloud::with_unit_features(pts);
  cloud.features.setConstant(2.5);
  const auto ws = knn_windows(cloud, pts.topRows(1), 4);
  PointLayerCache cache;
  l.forward(cloud, ws, &cache);
  CHECK(cache.theta(0, 1) == 0.0);
  CHECK(cache.eta(0, 1) == 0.0);
  CHECK(cache.eta(0, 0) == doctest::Approx(2.5));

  l.weights.fill(1.0);
  Instance inst = random_instance(rng, 8, 1, 1, 4);
  const Matrix out = l.forward(inst.cloud, inst.windows, &cache);
  const double a = cache.theta(0, 0), b = cache.theta(0, 1), p = cache.eta(0, 0), q = cache.eta(0, 1);
  CHECK(out(0, 0) == doctest::Approx((a + b) * (p + q)).epsilon(1e-12));

  const auto tiny = knn_windows(cloud, pts.topRows(1), 1);
  CHECK_THROWS_AS(l.forward(cloud, tiny, nullptr), ShapeError);
}

TEST_CASE("baseline: constant correlation") {
  Rng rng(2);
  BaselinePointConvLayer l(1, 1, 1, 1.0, rng);
  l.weights.fill(1.0);
  // offset r with exp(-r^2/2) = 0.5
  const double r = std::sqrt(2.0 * std::log(2.0));
  l.centers.fill(0.0);
  Points pts(3, 3);
  pts.rowwise() = Eigen::RowVector3d(r, 0, 0);
  const auto cloud = PointCloud::with_unit_features(pts);
  Points y = Points::Zero(1, 3);
  const auto ws = knn_windows(cloud, y, 3);
  CHECK(l.forward(cloud, ws, nullptr)(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("point layers: wrong feature width names I") {
  Rng rng(3);
  Instance inst = random_instance(rng, 8, 3, 2, 4);
  const ConvCompositeLayer l(2, 2, 2, 2, 0.3, rng);
  CHECK_THROWS_WITH_AS(l.forward(inst.cloud, inst.windows, nullptr),
                       doctest::Contains("expected I=2, got I=3"), ShapeError);
}

TEST_CASE("point layers: finite-difference gradients") {
  Rng rng(123);
  for (int trial = 0; trial < 3; ++trial) {
    Instance inst = random_instance(rng, 10, 3, 4, 6);
    ConvCompositeLayer conv(3, 4, 4, 3, 0.6, rng);
    AggrCompositeLayer aggr(3, 2, 3, 4, 0.6, rng);
    BaselinePointConvLayer base(3, 4, 4, 0.6, rng);
    CHECK(layer_gradient_error(conv, inst, rng) < 1e-4);
    CHECK(layer_gradient_error(aggr, inst, rng) < 1e-4);
    CHECK(layer_gradient_error(base, inst, rng) < 1e-4);
  }
}

TEST_CASE("point layers: zero upstream gradient gives zero gradients") {
  Rng rng(5);
  Instance inst = random_instance(rng, 10, 2, 3, 4);
  AggrCompositeLayer l(2, 3, 3, 2, 0.5, rng);
  PointLayerCache cache;
  const Matrix out = l.forward(inst.cloud, inst.windows, &cache);
  std::vector<Tensor> grads{l.spatial.centers.zeros_like(), l.spatial.weights.zeros_like(), l.weights.zeros_like()};
  const Matrix gi = l.backward(inst.cloud, cache, Matrix::Zero(out.rows(), out.cols()), grads, true);
  for (const auto& g : grads) CHECK(std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0; }));
  CHECK(gi.isZero());
  std::vector<Tensor> wrong{l.spatial.centers.zeros_like()};
  CHECK_THROWS_AS(l.backward(inst.cloud, cache, out, wrong, true), ShapeError);
}

TEST_CASE("dense, batch norm and relu") {
  Rng rng(6);
  DenseLayer dense(3, 3, true, rng);
  dense.weights.fill(0.0);
  for (int i = 0; i < 3; ++i) dense.weights[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  dense.bias.fill(0.0);
  Matrix x = Matrix::Random(4, 3);
  CHECK(dense.forward(x) == x);
  CHECK_THROWS_AS(dense.forward(Matrix::Zero(2, 2)), ShapeError);

  Matrix r(1, 2);
  r << -1, 3;
  CHECK(relu(r)(0, 0) == 0.0);
  CHECK(relu(r)(0, 1) == 3.0);

  BatchNormLayer bn(3);
  Matrix batch(6, 3);
  std::normal_distribution<double> n(2.0, 3.0);
  for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = n(rng);
  BatchNormCache cache;
  const Matrix y = bn.forward(batch, true, &cache);
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const Eigen::RowVectorXd var = (y.rowwise() - mean).array().square().colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-4);  // epsilon shrinks the variance slightly

  // Running statistics move only through update_running.
  const Eigen::RowVectorXd before = bn.running_mean;
  bn.forward(batch, true, &cache);
  CHECK(bn.running_mean == before);
  bn.update_running(cache, batch.rows());
  const Eigen::RowVectorXd batch_mean = batch.colwise().mean();
  CHECK(((bn.running_mean - (0.9 * before + 0.1 * batch_mean)).cwiseAbs().maxCoeff()) < 1e-12);
}

TEST_CASE("dense and batch norm: finite-difference gradients") {
  Rng rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(5, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  Matrix g(5, 3);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);

  DenseLayer dense(4, 3, true, rng);
  auto params = dense.parameters();
  std::vector<Tensor> grads{dense.weights.zeros_like(), dense.bias.zeros_like()};
  const Matrix gx = dense.backward(x, g, grads);
  auto dense_loss = [&] { return dense.forward(x).cwiseProduct(g).sum(); };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t e = 0; e < params[p].tensor->size(); ++e) {
      worst = std::max(worst, testing::relative_error(grads[p][e], testing::central_difference(params[p].tensor->ptr() + e, dense_loss)));
    }
  }
  for (Eigen::Index e = 0; e < x.size(); ++e) {
    worst = std::max(worst, testing::relative_error(gx.data()[e], testing::central_difference(x.data() + e, dense_loss)));
  }
  CHECK(worst < 1e-6);

  BatchNormLayer bn(4);
  for (double& v : bn.gamma.data) v = 1.0 + 0.3 * normal(rng);
  for (double& v : bn.beta.data) v = normal(rng);
  Matrix gb(5, 4);
  for (Eigen::Index i = 0; i < gb.size(); ++i) gb.data()[i] = normal(rng);
  BatchNormCache cache;
  bn.forward(x, true, &cache);
  std::vector<Tensor> bgrads{bn.gamma.zeros_like(), bn.beta.zeros_like()};
  const Matrix bgx = bn.backward(cache, gb, bgrads);
  auto bn_loss = [&] { return bn.forward(x, true, nullptr).cwiseProduct(gb).sum(); };
  auto bparams = bn.parameters();
  worst = 0.0;
  for (std::size_t p = 0; p < bparams.size(); ++p) {
    for (std::size_t e = 0; e < bparams[p].tensor->size(); ++e) {
      worst = std::max(worst, testing::relative_error(bgrads[p][e], testing::central_difference(bparams[p].tensor->ptr() + e, bn_loss)));
    }
  }
  for (Eigen::Index e = 0; e < x.size(); ++e) {
    worst = std::max(worst, testing::relative_error(bgx.data()[e], testing::central_difference(x.data() + e, bn_loss)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("point layers: invariances") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    Instance inst = random_instance(rng, 40, 2, 8, 7);
    const ConvCompositeLayer conv(2, 3, 5, 3, 0.4, rng);
    const AggrCompositeLayer aggr(2, 3, 5, 3, 0.4, rng);
    const BaselinePointConvLayer base(2, 3, 5, 0.4, rng);
    const ForwardOptions sorted{true};

    // Translation of inputs and outputs together.
    Instance moved = inst;
    const Eigen::RowVector3d t(3.5, -1.25, 0.75);
    moved.cloud.points.rowwise() += t;
    moved.windows.outputs.rowwise() += t;
    CHECK(max_abs(conv.forward(inst.cloud, inst.windows, nullptr) - conv.forward(moved.cloud, moved.windows, nullptr)) < 1e-9);
    CHECK(max_abs(aggr.forward(inst.cloud, inst.windows, nullptr) - aggr.forward(moved.cloud, moved.windows, nullptr)) < 1e-9);
    CHECK(max_abs(base.forward(inst.cloud, inst.windows, nullptr) - base.forward(moved.cloud, moved.windows, nullptr)) < 1e-9);

    // Window permutation in sorted-accumulation mode.
    Instance shuffled = inst;
    for (Eigen::Index q = 0; q < inst.windows.count(); ++q) {
      auto first = shuffled.windows.indices.begin() + q * inst.windows.window_size;
      std::shuffle(first, first + inst.windows.window_size, rng);
    }
    CHECK(max_abs(conv.forward(inst.cloud, inst.windows, nullptr, sorted) - conv.forward(inst.cloud, shuffled.windows, nullptr, sorted)) <= 1e-12);
    CHECK(max_abs(aggr.forward(inst.cloud, inst.windows, nullptr, sorted) - aggr.forward(inst.cloud, shuffled.windows, nullptr, sorted)) <= 1e-12);
    CHECK(max_abs(base.forward(inst.cloud, inst.windows, nullptr, sorted) - base.forward(inst.cloud, shuffled.windows, nullptr, sorted)) <= 1e-12);

    // Linearity in the features for the linear layers.
    PointCloud other = inst.cloud;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index e = 0; e < other.features.size(); ++e) other.features.data()[e] = normal(rng);
    PointCloud mix = inst.cloud;
    const double alpha = -1.7;
    mix.features = alpha * inst.cloud.features + other.features;
    const auto lin = [&](const auto& layer) {
      return max_abs(layer.forward(mix, inst.windows, nullptr) -
                     (alpha * layer.forward(inst.cloud, inst.windows, nullptr) + layer.forward(other, inst.windows, nullptr)));
    };
    CHECK(lin(conv) < 1e-10);
    CHECK(lin(base) < 1e-10);
  }
}

TEST_CASE("parameter counts match the closed forms") {
  Rng rng(1);
  const ConvCompositeLayer conv(64, 128, 64, 16, 0.3, rng);
  CHECK(conv.parameter_count() == 132288u);
  const BaselinePointConvLayer base(64, 128, 64, 0.3, rng);
  CHECK(base.parameter_count() == 524480u);
  const AggrCompositeLayer aggr(3, 5, 7, 4, 0.3, rng);
  CHECK(aggr.parameter_count() == 5u * 6 * 8 + 4 * 7 + 3 * 7);
}

}  // TEST_SUITE
