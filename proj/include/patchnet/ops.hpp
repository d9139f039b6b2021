#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patchnet/rng.hpp"
#include "patchnet/tensor.hpp"

// Forward and backward kernels for every layer the two networks use.
// All functions are pure except batchnorm2d in train mode, which updates the
// running statistics passed to it.
namespace patchnet::ops {

enum class Mode { Train, Eval };

// ---- convolution (cross-correlation, zero padding) -------------------------

struct ConvGeom {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// floor((n + 2*padding - kernel) / stride) + 1; rejects kernels larger than
// the padded input.
std::size_t conv_output_extent(std::size_t n, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] -> [N,Cout,H',W']
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvGeom geom);

// Tensors the backward pass needs from the forward call.
struct ConvSaved {
    const Tensor* input = nullptr;
    const Tensor* weight = nullptr;
    ConvGeom geom;
    bool input_grad = true;  // false skips grad w.r.t. the input (e.g. raw pixels)
};

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& grad_out, const ConvSaved& saved);

// ---- batch normalization ---------------------------------------------------

struct BatchNormOptions {
    float momentum = 0.1f;
    float eps = 1e-5f;
};

// Per-channel values kept for the backward pass.
struct BatchNormCache {
    Mode mode = Mode::Eval;
    Tensor x_hat;                 // normalized input
    std::vector<float> inv_std;   // 1/sqrt(var + eps) per channel
};

// Train mode normalizes with the batch mean and population variance over
// (N,H,W) and folds them into the running stats; eval mode uses the running
// stats only.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, Mode mode,
                   BatchNormCache* cache = nullptr, BatchNormOptions options = {});

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

BatchNormGrads batchnorm2d_backward(const Tensor& grad_out, const Tensor& gamma,
                                    const BatchNormCache& cache);

// ---- elementwise ------------------------------------------------------------

Tensor relu(const Tensor& input);
// Passes the gradient where input > 0; the subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

// Inverted dropout. `scale` receives the per-element multiplier (0 or
// 1/(1-p)) needed by the backward pass. The mask depends only on
// (rng, call_index, element index).
Tensor dropout(const Tensor& input, float p, Mode mode, const Rng& rng, std::uint64_t call_index,
               Tensor* scale = nullptr);

// ---- dense ------------------------------------------------------------------

// input [N,F], weight [G,F], bias [G] -> [N,G]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight);

// ---- classifier -------------------------------------------------------------

// Row-wise softmax over [N,K] with max subtraction. Non-finite logits rejected.
Tensor softmax(const Tensor& logits);

// Mean over the batch of -log softmax(logits)[n, labels[n]]. When grad is
// non-null it receives (softmax - onehot) / N.
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape);

// ---- layout -----------------------------------------------------------------

// Ordered list of [C_i,H,W] -> [sum C_i,H,W]; block i holds input i.
Tensor concat_channels(std::span<const Tensor> inputs);

// [N,C,H,W] slice of batch entry n as [C,H,W], and the inverse assembly.
Tensor batch_item(const Tensor& batch, std::size_t n);
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace patchnet::ops
