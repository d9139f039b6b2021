#include "patchnet/network.hpp"

#include <cmath>
#include <cstdio>

#include "patchnet/error.hpp"

namespace patchnet {

using geometry::LayerGeom;

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::Linear: return "linear";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

static LayerKind layer_kind_from_name(const std::string& s) {
    for (auto k : {LayerKind::Conv, LayerKind::BatchNorm, LayerKind::Relu, LayerKind::Dropout,
                   LayerKind::GlobalAvgPool, LayerKind::Linear, LayerKind::Softmax})
        if (s == layer_kind_name(k)) return k;
    fail(ErrorKind::Format, "unknown layer kind '" + s + "'");
}

const char* network_kind_name(NetworkKind kind) {
    return kind == NetworkKind::Patchwise ? "patchwise" : "imagewise";
}

// ---- NetworkSpec ------------------------------------------------------------

std::vector<LayerGeom> NetworkSpec::conv_geometry() const {
    std::vector<LayerGeom> g;
    for (const LayerSpec& l : layers)
        if (l.kind == LayerKind::Conv) g.push_back({l.kernel, l.stride, l.padding});
    return g;
}

std::size_t NetworkSpec::conv_count() const {
    std::size_t n = 0;
    for (const LayerSpec& l : layers) n += l.kind == LayerKind::Conv;
    return n;
}

std::size_t NetworkSpec::trunk_end() const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kind == LayerKind::GlobalAvgPool) return i;
    return layers.size();
}

std::size_t NetworkSpec::downsampling() const {
    return geometry::receptive_field(conv_geometry()).jump;
}

void NetworkSpec::validate() const {
    std::size_t channels = input_channels;
    bool flat = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Conv:
                if (flat) fail(ErrorKind::Config, where + " follows the pooling layer");
                if (l.in != channels || l.out == 0 || l.kernel == 0 || l.stride == 0)
                    fail(ErrorKind::Config, where + ": expects " + std::to_string(channels) +
                                                " input channels, declares " + std::to_string(l.in));
                channels = l.out;
                break;
            case LayerKind::BatchNorm:
                if (flat || l.in != channels)
                    fail(ErrorKind::Config, where + ": channel count " + std::to_string(l.in) +
                                                " does not match " + std::to_string(channels));
                break;
            case LayerKind::GlobalAvgPool:
                if (flat) fail(ErrorKind::Config, where + ": pooling twice");
                flat = true;
                break;
            case LayerKind::Linear:
                if (!flat || l.in != channels || l.out == 0)
                    fail(ErrorKind::Config, where + ": expects " + std::to_string(channels) +
                                                " input features, declares " + std::to_string(l.in));
                channels = l.out;
                break;
            case LayerKind::Dropout:
                if (!(l.rate >= 0.0f && l.rate < 1.0f))
                    fail(ErrorKind::Config, where + ": rate must be in [0, 1)");
                break;
            case LayerKind::Relu:
            case LayerKind::Softmax: break;
        }
    }
    if (!flat || channels != kNumClasses)
        fail(ErrorKind::Config, "network must end in a " + std::to_string(kNumClasses) +
                                    "-way classifier after global average pooling");
}

nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) {
        nlohmann::json j{{"kind", layer_kind_name(l.kind)}};
        switch (l.kind) {
            case LayerKind::Conv:
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["padding"] = l.padding;
                j["in"] = l.in;
                j["out"] = l.out;
                break;
            case LayerKind::Linear:
                j["in"] = l.in;
                j["out"] = l.out;
                break;
            case LayerKind::BatchNorm: j["in"] = l.in; break;
            case LayerKind::Dropout: j["rate"] = l.rate; break;
            default: break;
        }
        layers.push_back(std::move(j));
    }
    return {{"kind", network_kind_name(spec.kind)},
            {"input_channels", spec.input_channels},
            {"base_width", spec.base_width},
            {"feature_depth", spec.feature_depth},
            {"head_depth", spec.head_depth},
            {"n_patches", spec.n_patches},
            {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    try {
        NetworkSpec s;
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "patchwise")
            s.kind = NetworkKind::Patchwise;
        else if (kind == "imagewise")
            s.kind = NetworkKind::Imagewise;
        else
            fail(ErrorKind::Format, "unknown network kind '" + kind + "'");
        s.input_channels = j.at("input_channels").get<std::size_t>();
        s.base_width = j.at("base_width").get<std::size_t>();
        s.feature_depth = j.at("feature_depth").get<std::size_t>();
        s.head_depth = j.at("head_depth").get<std::size_t>();
        s.n_patches = j.at("n_patches").get<std::size_t>();
        for (const auto& lj : j.at("layers")) {
            LayerSpec l;
            l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
            l.kernel = lj.value("kernel", std::size_t{0});
            l.stride = lj.value("stride", std::size_t{1});
            l.padding = lj.value("padding", std::size_t{0});
            l.in = lj.value("in", std::size_t{0});
            l.out = lj.value("out", std::size_t{0});
            l.rate = lj.value("rate", 0.0f);
            if (l.kind == LayerKind::BatchNorm) l.out = l.in;
            s.layers.push_back(l);
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("malformed network spec: ") + e.what());
    }
}

// ---- canonical stacks -------------------------------------------------------

namespace {

void conv_block(NetworkSpec& s, std::size_t kernel, std::size_t stride, std::size_t padding,
                std::size_t in, std::size_t out) {
    s.layers.push_back({LayerKind::Conv, kernel, stride, padding, in, out, 0.0f});
    s.layers.push_back({LayerKind::BatchNorm, 0, 1, 0, out, out, 0.0f});
    s.layers.push_back({LayerKind::Relu});
}

void check_pin(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::Config, "architectural pin violated: " + what);
}

// Conv stack geometry of the patch-wise trunk; independent of widths.
void pin_patchwise(const NetworkSpec& s) {
    std::vector<const LayerSpec*> convs;
    for (const LayerSpec& l : s.layers)
        if (l.kind == LayerKind::Conv) convs.push_back(&l);
    check_pin(convs.size() == 16, "16 conv layers");
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const bool down = i == 2 || i == 5 || i == 8;  // positions 3, 6, 9 (1-based)
        check_pin((convs[i]->stride == 2) == down, "stride-2 convs exactly at positions 3, 6, 9");
        if (down) check_pin(convs[i]->out == 2 * convs[i]->in, "channel doubling at downsampling");
    }
    const auto geom = s.conv_geometry();
    check_pin(geometry::output_size(geom, 512) == 64, "output_size(512) == 64");
    check_pin(geometry::receptive_field(geom) == geometry::RFState{132, 8},
              "patch-wise receptive field (132, jump 8)");
}

}  // namespace

NetworkSpec canonical_patchwise_spec(std::size_t base_width, std::size_t feature_depth) {
    if (base_width == 0 || feature_depth == 0)
        fail(ErrorKind::Config, "base width B and feature depth C must be >= 1");
    const std::size_t B = base_width;
    NetworkSpec s;
    s.kind = NetworkKind::Patchwise;
    s.input_channels = 3;
    s.base_width = B;
    s.feature_depth = feature_depth;

    conv_block(s, 3, 1, 1, 3, B);          // L1
    conv_block(s, 3, 1, 1, B, B);          // L2
    conv_block(s, 2, 2, 0, B, 2 * B);      // L3
    conv_block(s, 3, 1, 1, 2 * B, 2 * B);  // L4
    conv_block(s, 3, 1, 1, 2 * B, 2 * B);  // L5
    conv_block(s, 2, 2, 0, 2 * B, 4 * B);  // L6
    conv_block(s, 3, 1, 1, 4 * B, 4 * B);  // L7
    conv_block(s, 3, 1, 1, 4 * B, 4 * B);  // L8
    conv_block(s, 2, 2, 0, 4 * B, 8 * B);  // L9
    for (int i = 0; i < 6; ++i) conv_block(s, 3, 1, 1, 8 * B, 8 * B);  // L10-L15
    conv_block(s, 1, 1, 0, 8 * B, feature_depth);                       // L16
    s.layers.push_back({LayerKind::GlobalAvgPool});
    s.layers.push_back({LayerKind::Linear, 0, 1, 0, feature_depth, kNumClasses, 0.0f});
    s.layers.push_back({LayerKind::Softmax});

    s.validate();
    pin_patchwise(s);
    return s;
}

NetworkSpec canonical_imagewise_spec(std::size_t n_patches, std::size_t feature_depth,
                                     std::size_t head_depth) {
    if (n_patches == 0 || feature_depth == 0 || head_depth == 0)
        fail(ErrorKind::Config, "n_patches, feature depth C and head depth D must be >= 1");
    NetworkSpec s;
    s.kind = NetworkKind::Imagewise;
    s.input_channels = n_patches * feature_depth;
    s.feature_depth = feature_depth;
    s.head_depth = head_depth;
    s.n_patches = n_patches;

    conv_block(s, 3, 1, 1, s.input_channels, 64);  // M1
    conv_block(s, 3, 1, 1, 64, 64);                // M2
    conv_block(s, 2, 2, 0, 64, 128);               // M3
    conv_block(s, 3, 1, 1, 128, 128);              // M4
    conv_block(s, 3, 1, 1, 128, 128);              // M5
    conv_block(s, 2, 2, 0, 128, 256);              // M6
    conv_block(s, 1, 1, 0, 256, head_depth);       // M7
    s.layers.push_back({LayerKind::GlobalAvgPool});
    s.layers.push_back({LayerKind::Linear, 0, 1, 0, head_depth, 256, 0.0f});
    s.layers.push_back({LayerKind::Relu});
    s.layers.push_back({LayerKind::Dropout, 0, 1, 0, 0, 0, 0.5f});
    s.layers.push_back({LayerKind::Linear, 0, 1, 0, 256, 128, 0.0f});
    s.layers.push_back({LayerKind::Relu});
    s.layers.push_back({LayerKind::Dropout, 0, 1, 0, 0, 0, 0.5f});
    s.layers.push_back({LayerKind::Linear, 0, 1, 0, 128, kNumClasses, 0.0f});
    s.layers.push_back({LayerKind::Softmax});

    s.validate();
    // The two trunks together must see 252 input pixels per unit.
    auto combined = canonical_patchwise_spec(1, 1).conv_geometry();
    const auto mine = s.conv_geometry();
    combined.insert(combined.end(), mine.begin(), mine.end());
    check_pin(geometry::receptive_field(combined) == geometry::RFState{252, 32},
              "combined receptive field (252, jump 32)");
    return s;
}

// ---- parameters -------------------------------------------------------------

void ParamSet::add(std::string name, Tensor value, bool trainable) {
    if (index_.count(name)) fail(ErrorKind::InvalidArgument, "duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), trainable});
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::InvalidArgument, "unknown parameter " + name);
    return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::InvalidArgument, "unknown parameter " + name);
    return entries_[it->second].value;
}

std::string param_name(std::size_t layer, const char* role) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "layer%02zu.%s", layer, role);
    return buf;
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Rng root = Rng(seed).split("init");
    ParamSet p;
    auto glorot = [&](const std::string& name, Shape shape, std::size_t fan_in,
                      std::size_t fan_out) {
        Tensor w(std::move(shape));
        const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
        const Rng r = root.split(name);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = r.uniform(i, -bound, bound);
        p.add(name, std::move(w), true);
    };
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::size_t area = l.kernel * l.kernel;
                glorot(param_name(i, "weight"), {l.out, l.in, l.kernel, l.kernel}, l.in * area,
                       l.out * area);
                p.add(param_name(i, "bias"), Tensor({l.out}), true);
                break;
            }
            case LayerKind::Linear: {
                const std::string name = param_name(i, "weight");
                glorot(name, {l.out, l.in}, l.in, l.out);
                // zero-mean rows: a constant input component contributes nothing
                Tensor& w = p.at(name);
                for (std::size_t r = 0; r < l.out; ++r) {
                    double mean = 0.0;
                    for (std::size_t c = 0; c < l.in; ++c) mean += w[r * l.in + c];
                    mean /= static_cast<double>(l.in);
                    for (std::size_t c = 0; c < l.in; ++c) w[r * l.in + c] -= static_cast<float>(mean);
                }
                p.add(param_name(i, "bias"), Tensor({l.out}), true);
                break;
            }
            case LayerKind::BatchNorm:
                p.add(param_name(i, "gamma"), Tensor({l.in}, 1.0f), true);
                p.add(param_name(i, "beta"), Tensor({l.in}, 0.0f), true);
                p.add(param_name(i, "running_mean"), Tensor({l.in}, 0.0f), false);
                p.add(param_name(i, "running_var"), Tensor({l.in}, 1.0f), false);
                break;
            default: break;
        }
    }
    return p;
}

// ---- Model ------------------------------------------------------------------

Model::Model(NetworkSpec spec, ParamSet params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    // Every parameter the network spec implies must be present with the right shape.
    const ParamSet expected = init_params(spec_, 0);
    if (expected.size() != params_.size())
        fail(ErrorKind::Checkpoint, "parameter count " + std::to_string(params_.size()) +
                                        " does not match network spec (" +
                                        std::to_string(expected.size()) + ")",
             FormatDetail::BadHeader);
    for (const NamedTensor& e : expected.entries()) {
        if (!params_.contains(e.name) || params_.at(e.name).shape() != e.value.shape())
            fail(ErrorKind::Checkpoint, "parameter " + e.name + " missing or mis-shaped",
                 FormatDetail::BadHeader);
    }
}

std::size_t Model::logits_end() const {
    std::size_t end = spec_.layers.size();
    if (end > 0 && spec_.layers[end - 1].kind == LayerKind::Softmax) --end;
    return end;
}

Tape::Id Model::forward(Tape& tape, Tape::Id input, std::size_t end, const ForwardOptions& options,
                        ParamLeaves* leaves) {
    auto param = [&](std::size_t layer, const char* role) {
        const std::string name = param_name(layer, role);
        const Tape::Id id = tape.leaf(params_.at(name), options.track_params);
        if (leaves) (*leaves)[name] = id;
        return id;
    };
    Tape::Id x = input;
    for (std::size_t i = 0; i < end && i < spec_.layers.size(); ++i) {
        const LayerSpec& l = spec_.layers[i];
        switch (l.kind) {
            case LayerKind::Conv:
                x = ag::conv2d(tape, x, param(i, "weight"), param(i, "bias"), {l.stride, l.padding});
                break;
            case LayerKind::BatchNorm:
                x = ag::batchnorm2d(tape, x, param(i, "gamma"), param(i, "beta"),
                                    params_.at(param_name(i, "running_mean")),
                                    params_.at(param_name(i, "running_var")), options.mode);
                break;
            case LayerKind::Relu: x = ag::relu(tape, x); break;
            case LayerKind::Dropout:
                x = ag::dropout(tape, x, l.rate, options.mode, options.dropout_rng.split(i),
                                options.step);
                break;
            case LayerKind::GlobalAvgPool: x = ag::global_avg_pool(tape, x); break;
            case LayerKind::Linear:
                x = ag::linear(tape, x, param(i, "weight"), param(i, "bias"));
                break;
            case LayerKind::Softmax: {
                const Tape::Id ids[] = {x};
                x = tape.record(ops::softmax(tape.value(x)), ids, nullptr);
                require(!tape.requires_grad(x), "softmax layer is inference-only; train on logits");
                break;
            }
        }
    }
    return x;
}

Tape::Id Model::logits(Tape& tape, Tape::Id input, const ForwardOptions& options,
                       ParamLeaves* leaves) {
    return forward(tape, input, logits_end(), options, leaves);
}

namespace {

// Eval-mode pass over layers [0, end) without a tape.
Tensor run_eval(const NetworkSpec& spec, const ParamSet& params, Tensor x, std::size_t end) {
    for (std::size_t i = 0; i < end && i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv:
                x = ops::conv2d(x, params.at(param_name(i, "weight")),
                                params.at(param_name(i, "bias")), {l.stride, l.padding});
                break;
            case LayerKind::BatchNorm: {
                Tensor rm = params.at(param_name(i, "running_mean"));
                Tensor rv = params.at(param_name(i, "running_var"));
                x = ops::batchnorm2d(x, params.at(param_name(i, "gamma")),
                                     params.at(param_name(i, "beta")), rm, rv, ops::Mode::Eval);
                break;
            }
            case LayerKind::Relu: x = ops::relu(x); break;
            case LayerKind::Dropout: break;
            case LayerKind::GlobalAvgPool: x = ops::global_avg_pool(x); break;
            case LayerKind::Linear:
                x = ops::linear(x, params.at(param_name(i, "weight")),
                                params.at(param_name(i, "bias")));
                break;
            case LayerKind::Softmax: x = ops::softmax(x); break;
        }
    }
    return x;
}

}  // namespace

Tensor Model::logits(const Tensor& input) const {
    return run_eval(spec_, params_, input, logits_end());
}

Tensor Model::features(const Tensor& input) const {
    return run_eval(spec_, params_, input, spec_.trunk_end());
}

static void check_patch_input(const Model& model, const Tensor& patches) {
    require(patches.rank() == 4, "patches must be [N,3,k,k], got " + shape_str(patches.shape()));
    if (patches.dim(1) != model.spec().input_channels)
        fail(ErrorKind::InvalidArgument, "patches have " + std::to_string(patches.dim(1)) +
                                             " channels, network expects " +
                                             std::to_string(model.spec().input_channels));
    const std::size_t down = model.spec().downsampling();
    if (patches.dim(2) != patches.dim(3) || patches.dim(2) % down != 0)
        fail(ErrorKind::Config, "patch size " + std::to_string(patches.dim(2)) + "x" +
                                    std::to_string(patches.dim(3)) +
                                    " must be square and divisible by " + std::to_string(down));
}

Tensor patchwise_logits(Model& model, const Tensor& patches, ops::Mode mode) {
    check_patch_input(model, patches);
    if (mode == ops::Mode::Eval) return model.logits(patches);
    Tape tape;
    ForwardOptions opt;
    opt.mode = mode;
    return tape.value(model.logits(tape, tape.leaf(patches, false), opt));
}

Tensor extract_features(const Model& patchwise, const Tensor& patches) {
    check_patch_input(patchwise, patches);
    return patchwise.features(patches);
}

Tensor stack_features(std::span<const Tensor> features, std::size_t expected_patches) {
    if (features.size() != expected_patches)
        fail(ErrorKind::Config, "got feature maps for " + std::to_string(features.size()) +
                                    " patches, image-wise network expects " +
                                    std::to_string(expected_patches));
    return ops::concat_channels(features);
}

}  // namespace patchnet
