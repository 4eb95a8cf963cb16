#include "cnet/network.hpp"

#include "cnet/error.hpp"
#include "cnet/parallel.hpp"
#include "cnet/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cnet {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv_composite: return "conv_composite";
    case LayerKind::aggr_composite: return "aggr_composite";
    case LayerKind::baseline: return "baseline";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "conv_composite" || name == "conv") return LayerKind::conv_composite;
  if (name == "aggr_composite" || name == "aggr") return LayerKind::aggr_composite;
  if (name == "baseline") return LayerKind::baseline;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

void NetworkSpec::validate() const {
  if (stages.empty()) throw ConfigError("network needs at least one stage");
  if (j0 < 1 || num_centers < 1 || spatial_size < 1 || head_width < 1 || in_features < 1) {
    throw ConfigError("J0, M, K, output width and input width must be positive");
  }
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  for (const auto& s : stages) {
    if (s.features < 1 || s.window < 1 || s.outputs < 1) {
      throw ConfigError("stage sizes must be positive");
    }
    if (kind == LayerKind::aggr_composite && s.window < 2) {
      throw ConfigError("aggregate layers need windows of at least 2 points");
    }
  }
  if (stages.back().outputs != 1) throw ConfigError("final stage must output a single point");
}

NetworkSpec classification_spec(LayerKind kind, int j0, int num_centers, int spatial_size,
                                int num_classes) {
  NetworkSpec spec;
  spec.kind = kind;
  spec.j0 = j0;
  spec.num_centers = num_centers;
  spec.spatial_size = spatial_size;
  spec.head_width = num_classes;
  spec.stages = {{j0, 32, 1024}, {2 * j0, 32, 256}, {4 * j0, 16, 64}, {4 * j0, 16, 16},
                 {8 * j0, 16, 1}};
  return spec;
}

NetworkSpec dsvdd_spec(LayerKind kind, int j0, int num_centers, int spatial_size,
                       int latent_dim) {
  NetworkSpec spec;
  spec.kind = kind;
  spec.j0 = j0;
  spec.num_centers = num_centers;
  spec.spatial_size = spatial_size;
  spec.head_width = latent_dim;
  spec.head_bias = false;
  spec.stages = {{j0, 32, 128}, {3 * j0, 32, 32}, {6 * j0, 32, 1}};
  return spec;
}

namespace {

PointLayer make_point_layer(const NetworkSpec& spec, int in_features, int out_features,
                            Rng& rng) {
  switch (spec.kind) {
    case LayerKind::conv_composite:
      return ConvCompositeLayer(in_features, out_features, spec.num_centers, spec.spatial_size,
                                spec.sigma, rng);
    case LayerKind::aggr_composite:
      return AggrCompositeLayer(in_features, out_features, spec.num_centers, spec.spatial_size,
                                spec.sigma, rng);
    case LayerKind::baseline:
      return BaselinePointConvLayer(in_features, out_features, spec.num_centers, spec.sigma,
                                    rng);
  }
  throw ConfigError("unknown layer kind");
}

std::size_t layer_param_tensors(const PointLayer& layer) {
  return std::holds_alternative<BaselinePointConvLayer>(layer) ? 2 : 3;
}

}  // namespace

Network::Network(NetworkSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), init_seed_(init_seed) {
  spec_.validate();
  Rng rng(substream(init_seed_, "init"));
  int width = spec_.in_features;
  for (const auto& s : spec_.stages) {
    stages_.push_back({make_point_layer(spec_, width, s.features, rng), BatchNormLayer(s.features)});
    width = s.features;
  }
  head_ = DenseLayer(width, spec_.head_width, spec_.head_bias, rng);
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> refs;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s) + ".";
    auto layer_refs = std::visit([](auto& l) { return l.parameters(); }, stages_[s].layer);
    for (auto& r : layer_refs) refs.push_back({prefix + r.name, r.tensor});
    for (auto& r : stages_[s].norm.parameters()) refs.push_back({prefix + "bn." + r.name, r.tensor});
  }
  for (auto& r : head_.parameters()) refs.push_back({"head." + r.name, r.tensor});
  return refs;
}

std::vector<std::pair<std::string, const Tensor*>> Network::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& r : const_cast<Network*>(this)->parameters()) out.emplace_back(r.name, r.tensor);
  return out;
}

Gradients Network::zero_gradients() const {
  Gradients grads;
  for (const auto& [name, t] : parameters()) grads.push_back(t->zeros_like());
  return grads;
}

Matrix Network::forward(std::span<const PointCloud> batch, const ForwardConfig& config,
                        NetworkCache* cache) const {
  if (batch.empty()) throw ShapeError("empty batch");
  const std::size_t b_count = batch.size();
  NetworkCache local;
  NetworkCache& c = cache ? *cache : local;
  c.stages.assign(stages_.size(), {});

  std::vector<PointCloud> current(batch.begin(), batch.end());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const StageSpec& shape = spec_.stages[s];
    auto& sc = c.stages[s];
    sc.inputs = std::move(current);
    sc.layers.assign(b_count, {});
    std::vector<Matrix> features(b_count);
    std::vector<Points> outputs(b_count);
    parallel_for(b_count, [&](std::size_t b) {
      const std::uint64_t seed = config.training
                                     ? derive_seed(config.sampling_seed, b, s)
                                     : derive_seed(config.sampling_seed, 0x5eed, s);
      outputs[b] = sample_output_points(sc.inputs[b], shape.outputs, seed, config.sampler);
      const WindowSet windows = knn_windows(sc.inputs[b], outputs[b], shape.window, config.knn);
      features[b] = std::visit(
          [&](const auto& l) {
            return l.forward(sc.inputs[b], windows, &sc.layers[b], config.accumulation);
          },
          stages_[s].layer);
    });

    sc.row_offsets.assign(b_count + 1, 0);
    for (std::size_t b = 0; b < b_count; ++b) {
      sc.row_offsets[b + 1] = sc.row_offsets[b] + features[b].rows();
    }
    Matrix stacked(sc.row_offsets.back(), shape.features);
    for (std::size_t b = 0; b < b_count; ++b) {
      stacked.middleRows(sc.row_offsets[b], features[b].rows()) = features[b];
    }
    sc.activated = relu(stages_[s].norm.forward(stacked, config.training, &sc.norm));

    current.resize(b_count);
    for (std::size_t b = 0; b < b_count; ++b) {
      current[b] = PointCloud(std::move(outputs[b]),
                              sc.activated.middleRows(sc.row_offsets[b], features[b].rows()));
    }
  }
  c.head_input = c.stages.back().activated;
  return head_.forward(c.head_input);
}

void Network::backward(const NetworkCache& cache, const Matrix& grad_output,
                       Gradients& grads) const {
  if (cache.stages.size() != stages_.size()) throw ShapeError("cache does not match network");
  std::vector<std::size_t> offsets;  // first gradient slot of each stage
  std::size_t slot = 0;
  for (const auto& st : stages_) {
    offsets.push_back(slot);
    slot += layer_param_tensors(st.layer) + 2;
  }
  const std::size_t head_slots = head_.has_bias() ? 2 : 1;
  if (grads.size() != slot + head_slots) throw ShapeError("gradient buffer count mismatch");

  Matrix upstream =
      head_.backward(cache.head_input, grad_output, std::span(grads).subspan(slot, head_slots));

  for (std::size_t s = stages_.size(); s-- > 0;) {
    const auto& sc = cache.stages[s];
    const auto& stage = stages_[s];
    const std::size_t n_layer = layer_param_tensors(stage.layer);
    const Matrix pre_relu = relu_backward(sc.activated, upstream);
    const Matrix grad_features = stage.norm.backward(
        sc.norm, pre_relu, std::span(grads).subspan(offsets[s] + n_layer, 2));

    const std::size_t b_count = sc.inputs.size();
    std::vector<Gradients> item_grads(b_count);
    std::vector<Matrix> input_grads(b_count);
    const bool need_input = s > 0;
    parallel_for(b_count, [&](std::size_t b) {
      Gradients& g = item_grads[b];
      for (std::size_t i = 0; i < n_layer; ++i) g.push_back(grads[offsets[s] + i].zeros_like());
      const Matrix rows = grad_features.middleRows(
          sc.row_offsets[b], sc.row_offsets[b + 1] - sc.row_offsets[b]);
      input_grads[b] = std::visit(
          [&](const auto& l) {
            return l.backward(sc.inputs[b], sc.layers[b], rows, std::span(g), need_input);
          },
          stage.layer);
    });
    // Fixed item order keeps the reduction independent of scheduling.
    for (std::size_t b = 0; b < b_count; ++b) {
      for (std::size_t i = 0; i < n_layer; ++i) {
        auto& dst = grads[offsets[s] + i].data;
        const auto& src = item_grads[b][i].data;
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      }
    }
    if (need_input) {
      const auto& prev = cache.stages[s - 1];
      upstream.resize(prev.activated.rows(), prev.activated.cols());
      for (std::size_t b = 0; b < b_count; ++b) {
        upstream.middleRows(prev.row_offsets[b], input_grads[b].rows()) = input_grads[b];
      }
    }
  }
}

void Network::update_running_stats(const NetworkCache& cache) {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    stages_[s].norm.update_running(cache.stages[s].norm, cache.stages[s].activated.rows());
  }
}

Eigen::VectorXd Network::predict(const PointCloud& cloud, std::uint64_t sampling_seed,
                                 const ForwardOptions& accumulation) const {
  ForwardConfig config;
  config.training = false;
  config.sampling_seed = sampling_seed;
  config.accumulation = accumulation;
  return forward(std::span(&cloud, 1), config).row(0).transpose();
}

std::vector<Eigen::Index> Network::stage_cardinalities(const NetworkCache& cache) const {
  std::vector<Eigen::Index> out;
  for (const auto& sc : cache.stages) out.push_back(sc.layers.empty() ? 0 : sc.layers[0].pooled.rows());
  return out;
}

std::size_t point_layer_parameter_count(LayerKind kind, int in_features, int out_features,
                                        int num_centers, int spatial_size) {
  const auto i = static_cast<std::size_t>(in_features);
  const auto j = static_cast<std::size_t>(out_features);
  const auto m = static_cast<std::size_t>(num_centers);
  const auto k = static_cast<std::size_t>(spatial_size);
  switch (kind) {
    case LayerKind::conv_composite: return j * i * k + k * m + 3 * m;
    case LayerKind::aggr_composite: return j * (2 * i) * (2 * k) + k * m + 3 * m;
    case LayerKind::baseline: return j * i * m + 3 * m;
  }
  return 0;
}

std::size_t count_parameters(const Network& net) {
  std::size_t total = 0;
  for (const auto& [name, t] : net.parameters()) total += t->size();
  return total;
}

std::size_t count_parameters(const NetworkSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  int width = spec.in_features;
  for (const auto& s : spec.stages) {
    total += point_layer_parameter_count(spec.kind, width, s.features, spec.num_centers,
                                         spec.spatial_size);
    total += 2 * static_cast<std::size_t>(s.features);
    width = s.features;
  }
  const auto head = static_cast<std::size_t>(spec.head_width);
  return total + static_cast<std::size_t>(width) * head + (spec.head_bias ? head : 0);
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "CPNT" | u16 version | spec | u64 init seed
//   | u32 tensor count | { u16 name length | name | u8 rank | u32 dims[rank] | f64 data }
//   | u32 norm count | { u32 channels | f64 running mean[C] | f64 running var[C] }

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated checkpoint: reading " + std::string(what) + " at byte offset " +
                        std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
  ByteWriter w;
  w.put_bytes("CPNT");
  w.put<std::uint16_t>(kCheckpointVersion);
  const NetworkSpec& spec = net.spec();
  w.put<std::uint8_t>(static_cast<std::uint8_t>(spec.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.in_features));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.j0));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.num_centers));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.spatial_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.head_width));
  w.put<double>(spec.sigma);
  w.put<std::uint8_t>(spec.head_bias ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.stages.size()));
  for (const auto& s : spec.stages) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.features));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.window));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.outputs));
  }
  w.put<std::uint64_t>(net.init_seed());

  const auto params = net.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t->shape.size()));
    for (std::size_t d : t->shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t->data) w.put<double>(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.stages().size()));
  for (const auto& st : net.stages()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(st.norm.channels()));
    for (Eigen::Index c = 0; c < st.norm.running_mean.size(); ++c) w.put<double>(st.norm.running_mean[c]);
    for (Eigen::Index c = 0; c < st.norm.running_var.size(); ++c) w.put<double>(st.norm.running_var[c]);
  }
  return w.take();
}

Network deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.get_string(4, "magic") != "CPNT") {
    throw FormatError("bad checkpoint magic at byte offset 0");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  NetworkSpec spec;
  const auto kind = r.get<std::uint8_t>("layer kind");
  if (kind > 2) throw FormatError("bad layer kind at byte offset " + std::to_string(r.offset() - 1));
  spec.kind = static_cast<LayerKind>(kind);
  spec.in_features = static_cast<int>(r.get<std::uint32_t>("input width"));
  spec.j0 = static_cast<int>(r.get<std::uint32_t>("J0"));
  spec.num_centers = static_cast<int>(r.get<std::uint32_t>("M"));
  spec.spatial_size = static_cast<int>(r.get<std::uint32_t>("K"));
  spec.head_width = static_cast<int>(r.get<std::uint32_t>("head width"));
  spec.sigma = r.get<double>("sigma");
  spec.head_bias = r.get<std::uint8_t>("head bias flag") != 0;
  const auto n_stages = r.get<std::uint32_t>("stage count");
  if (n_stages > 1024) throw FormatError("implausible stage count at byte offset " + std::to_string(r.offset() - 4));
  for (std::uint32_t s = 0; s < n_stages; ++s) {
    StageSpec st{};
    st.features = static_cast<int>(r.get<std::uint32_t>("stage features"));
    st.window = static_cast<int>(r.get<std::uint32_t>("stage window"));
    st.outputs = static_cast<int>(r.get<std::uint32_t>("stage outputs"));
    spec.stages.push_back(st);
  }
  const auto seed = r.get<std::uint64_t>("seed");
  Network net;
  try {
    net = Network(spec, seed);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid network description in checkpoint: ") + e.what());
  }

  auto params = net.parameters();
  const auto n_params = r.get<std::uint32_t>("tensor count");
  if (n_params != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(n_params) + " tensors, network expects " +
                      std::to_string(params.size()));
  }
  for (auto& ref : params) {
    const std::size_t at = r.offset();
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    const std::string name = r.get_string(name_len, "tensor name");
    if (name != ref.name) {
      throw FormatError("unexpected tensor '" + name + "' at byte offset " + std::to_string(at));
    }
    const auto rank = r.get<std::uint8_t>("tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>("tensor dim"));
    if (shape != ref.tensor->shape) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(ref.tensor->shape));
    }
    for (double& v : ref.tensor->data) v = r.get<double>("tensor data");
  }
  const auto n_norms = r.get<std::uint32_t>("norm count");
  if (n_norms != net.stages().size()) throw FormatError("batch norm count mismatch");
  for (auto& st : net.stages()) {
    const auto channels = r.get<std::uint32_t>("norm channels");
    if (static_cast<int>(channels) != st.norm.channels()) throw FormatError("batch norm width mismatch");
    for (Eigen::Index c = 0; c < st.norm.running_mean.size(); ++c) st.norm.running_mean[c] = r.get<double>("running mean");
    for (Eigen::Index c = 0; c < st.norm.running_var.size(); ++c) st.norm.running_var[c] = r.get<double>("running var");
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint at byte offset " + std::to_string(r.offset()));
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace cnet
