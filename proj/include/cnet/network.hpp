#pragma once

#include "cnet/geometry.hpp"
#include "cnet/layers.hpp"
#include "cnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cnet {

enum class LayerKind : std::uint8_t { conv_composite = 0, aggr_composite = 1, baseline = 2 };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct StageSpec {
  int features;  // J
  int window;    // |X_y|
  int outputs;   // |Q|
};

struct NetworkSpec {
  LayerKind kind = LayerKind::conv_composite;
  std::vector<StageSpec> stages;
  int j0 = 0;
  int num_centers = 0;   // M
  int spatial_size = 0;  // K
  int head_width = 0;    // class count or latent dimension
  int in_features = 1;   // I of the first stage
  double sigma = 0.3;
  bool head_bias = true;

  void validate() const;
};

// Five composite stages (J0,32,1024) (2J0,32,256) (4J0,16,64) (4J0,16,16)
// (8J0,16,1), each followed by batch norm and ReLU, then a dense head.
NetworkSpec classification_spec(LayerKind kind, int j0, int num_centers, int spatial_size,
                                int num_classes);

// Three composite stages (J0,32,128) (3J0,32,32) (6J0,32,1) and a bias-free
// dense projection to the latent space.
NetworkSpec dsvdd_spec(LayerKind kind, int j0, int num_centers, int spatial_size,
                       int latent_dim);

using PointLayer = std::variant<ConvCompositeLayer, AggrCompositeLayer, BaselinePointConvLayer>;

struct NetworkStage {
  PointLayer layer;
  BatchNormLayer norm;
};

struct ForwardConfig {
  bool training = false;
  // Output-point sampling seed. In training mode every batch item gets its own
  // derived stream; in evaluation mode the stream depends only on the stage,
  // so a cloud is always processed identically.
  std::uint64_t sampling_seed = 0;
  ForwardOptions accumulation;
  KnnOptions knn;
  SamplerOptions sampler;
};

struct NetworkCache {
  struct StageCache {
    std::vector<PointCloud> inputs;
    std::vector<PointLayerCache> layers;
    std::vector<Eigen::Index> row_offsets;  // item b owns rows [off[b], off[b+1])
    BatchNormCache norm;
    Matrix activated;
  };
  std::vector<StageCache> stages;
  Matrix head_input;
};

class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<NetworkStage>& stages() { return stages_; }
  const std::vector<NetworkStage>& stages() const { return stages_; }
  DenseLayer& head() { return head_; }
  const DenseLayer& head() const { return head_; }

  // Every learnable tensor, named "stage<s>.<layer param>", "stage<s>.bn.gamma", "head.weights", ...
  std::vector<ParamRef> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  Gradients zero_gradients() const;

  // Raw logits (or embeddings), one row per batch item.
  Matrix forward(std::span<const PointCloud> batch, const ForwardConfig& config,
                 NetworkCache* cache = nullptr) const;
  // Accumulates parameter gradients of a forward pass into grads.
  void backward(const NetworkCache& cache, const Matrix& grad_output, Gradients& grads) const;
  // Folds the batch statistics of a training-mode forward into the running averages.
  void update_running_stats(const NetworkCache& cache);

  // Evaluation-mode forward of a single cloud.
  Eigen::VectorXd predict(const PointCloud& cloud, std::uint64_t sampling_seed,
                          const ForwardOptions& accumulation = {}) const;

  // Per-stage output cardinalities of the last forward through `cache`.
  std::vector<Eigen::Index> stage_cardinalities(const NetworkCache& cache) const;

 private:
  NetworkSpec spec_;
  std::uint64_t init_seed_ = 0;
  std::vector<NetworkStage> stages_;
  DenseLayer head_;
};

std::size_t count_parameters(const Network& net);
// Same count computed from a NetworkSpec, without allocating the network.
std::size_t count_parameters(const NetworkSpec& spec);
// Closed-form count of one point layer's learnable scalars.
std::size_t point_layer_parameter_count(LayerKind kind, int in_features, int out_features,
                                        int num_centers, int spatial_size);

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const Network& net);
Network deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace cnet
