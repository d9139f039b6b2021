#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchnet/autograd.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/ops.hpp"
#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

inline constexpr std::size_t kNumClasses = 4;

enum class LayerKind { Conv, BatchNorm, Relu, Dropout, GlobalAvgPool, Linear, Softmax };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t kernel = 0;   // conv
    std::size_t stride = 1;   // conv
    std::size_t padding = 0;  // conv
    std::size_t in = 0;       // channels (conv, batchnorm) or features (linear)
    std::size_t out = 0;
    float rate = 0.0f;        // dropout

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class NetworkKind : std::uint8_t { Patchwise = 0, Imagewise = 1 };

const char* network_kind_name(NetworkKind kind);

struct NetworkSpec {
    NetworkKind kind = NetworkKind::Patchwise;
    std::size_t input_channels = 3;
    std::size_t base_width = 0;     // B, patch-wise only
    std::size_t feature_depth = 0;  // C
    std::size_t head_depth = 0;     // D, image-wise only
    std::size_t n_patches = 0;      // image-wise only
    std::vector<LayerSpec> layers;

    std::vector<geometry::LayerGeom> conv_geometry() const;
    std::size_t conv_count() const;
    // Index of the first GlobalAvgPool layer; layers before it form the
    // convolutional trunk whose output is the feature map.
    std::size_t trunk_end() const;
    // Total stride of the trunk.
    std::size_t downsampling() const;

    // Rejects inconsistent channel/feature chains.
    void validate() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

// Patch-wise stack: 16 convs (3x3 pad 1, with 2x2 stride-2 convs at positions
// 3, 6, 9 doubling the width B -> 2B -> 4B -> 8B, a final 1x1 conv to C), each
// followed by batchnorm + relu; then GAP -> linear C->4 -> softmax.
NetworkSpec canonical_patchwise_spec(std::size_t base_width, std::size_t feature_depth);

// Image-wise stack over n_patches*C input channels: 3x3,3x3 (64), 2x2/2 (128),
// 3x3,3x3 (128), 2x2/2 (256), 1x1 (D), each with batchnorm + relu; then
// GAP -> fc D->256 -> relu -> dropout 0.5 -> fc 256->128 -> relu ->
// dropout 0.5 -> fc 128->4 -> softmax.
NetworkSpec canonical_imagewise_spec(std::size_t n_patches, std::size_t feature_depth,
                                     std::size_t head_depth);

// ---- parameters -------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor value;
    bool trainable = true;  // false for batchnorm running statistics

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Ordered named tensors of one network (layer order, then role).
class ParamSet {
public:
    void add(std::string name, Tensor value, bool trainable);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<NamedTensor>& entries() noexcept { return entries_; }
    const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

private:
    std::vector<NamedTensor> entries_;
    std::map<std::string, std::size_t> index_;
};

// Parameter names for layer i: "layer<ii>.weight", ".bias" (conv, linear),
// ".gamma", ".beta", ".running_mean", ".running_var" (batchnorm).
std::string param_name(std::size_t layer, const char* role);

// Glorot-uniform weights, b = sqrt(6 / (fan_in + fan_out)), with each linear
// weight row shifted to zero mean; zero biases; gamma 1, beta 0, running
// mean 0, running var 1. Pure in (spec, seed).
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

// ---- forward ----------------------------------------------------------------

struct ForwardOptions {
    ops::Mode mode = ops::Mode::Eval;
    // Dropout masks are drawn from dropout_rng.split(layer).split(step).
    Rng dropout_rng{0};
    std::uint64_t step = 0;
    // Record parameters as gradient-carrying leaves.
    bool track_params = false;
};

// Leaf ids of the parameters recorded by a forward pass, keyed by name.
using ParamLeaves = std::map<std::string, Tape::Id>;

class Model {
public:
    Model() = default;
    Model(NetworkSpec spec, ParamSet params);

    const NetworkSpec& spec() const noexcept { return spec_; }
    ParamSet& params() noexcept { return params_; }
    const ParamSet& params() const noexcept { return params_; }

    // Records layers [0, end) on the tape, starting from `input`. Train-mode
    // batchnorm updates this model's running statistics.
    Tape::Id forward(Tape& tape, Tape::Id input, std::size_t end, const ForwardOptions& options,
                     ParamLeaves* leaves = nullptr);

    // Class logits [N,4]: every layer except the final softmax.
    Tape::Id logits(Tape& tape, Tape::Id input, const ForwardOptions& options,
                    ParamLeaves* leaves = nullptr);

    // Eval-mode logits without gradient tracking.
    Tensor logits(const Tensor& input) const;

    // Eval-mode trunk output [N,C,h,w] (input of the global average pool).
    Tensor features(const Tensor& input) const;

private:
    std::size_t logits_end() const;

    NetworkSpec spec_;
    ParamSet params_;
};

// Patch-wise logits [N,4]; rejects windows the three stride-2 stages cannot
// halve exactly.
Tensor patchwise_logits(Model& model, const Tensor& patches, ops::Mode mode);

// Feature maps of the last conv layer (after its batchnorm + relu), eval mode.
Tensor extract_features(const Model& patchwise, const Tensor& patches);

// Channel-stacks per-patch feature maps in the given (row-major patch) order.
Tensor stack_features(std::span<const Tensor> features, std::size_t expected_patches);

}  // namespace patchnet
