#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "patchnet/ops.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Reverse-mode record of executed primitives. Values live on the tape and are
// addressed by index; `backward` replays the recorded rules in reverse
// execution order, summing gradients into every node once per use.
class Tape {
public:
    using Id = std::size_t;
    // Receives the gradient of the node being replayed and routes it to the
    // node's inputs via Tape::accumulate.
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Id leaf(Tensor value, bool requires_grad = true);
    Id record(Tensor value, std::span<const Id> inputs, BackwardFn backward);

    const Tensor& value(Id id) const { return nodes_.at(id).value; }
    bool requires_grad(Id id) const { return nodes_.at(id).requires_grad; }
    // Empty tensor when no gradient reached the node.
    const Tensor& grad(Id id) const { return nodes_.at(id).grad; }

    void accumulate(Id id, const Tensor& g);

    // Seeds d(root)/d(root) = 1; root must hold a single element.
    void backward(Id root);
    void backward(Id root, const Tensor& seed);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// Differentiable wrappers over the ops:: kernels.
namespace ag {

Tape::Id conv2d(Tape& tape, Tape::Id input, Tape::Id weight, Tape::Id bias, ops::ConvGeom geom);
Tape::Id batchnorm2d(Tape& tape, Tape::Id input, Tape::Id gamma, Tape::Id beta,
                     Tensor& running_mean, Tensor& running_var, ops::Mode mode,
                     ops::BatchNormOptions options = {});
Tape::Id relu(Tape& tape, Tape::Id input);
Tape::Id dropout(Tape& tape, Tape::Id input, float p, ops::Mode mode, const Rng& rng,
                 std::uint64_t call_index);
Tape::Id linear(Tape& tape, Tape::Id input, Tape::Id weight, Tape::Id bias);
Tape::Id global_avg_pool(Tape& tape, Tape::Id input);
// Scalar mean cross-entropy over the batch.
Tape::Id cross_entropy(Tape& tape, Tape::Id logits, std::vector<int> labels);
// Scalar sum_i weights[i] * input[i] (weights fixed, same shape as input).
Tape::Id weighted_sum(Tape& tape, Tape::Id input, Tensor weights);
// [N,C,H,W] inputs of matching N,H,W concatenated along channels.
Tape::Id concat_channels(Tape& tape, std::span<const Tape::Id> inputs);

}  // namespace ag

}  // namespace patchnet
