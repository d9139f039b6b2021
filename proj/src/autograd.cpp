#include "patchnet/autograd.hpp"

#include <algorithm>
#include <memory>

#include "patchnet/error.hpp"

namespace patchnet {

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor(), nullptr, requires_grad});
    return nodes_.size() - 1;
}

Tape::Id Tape::record(Tensor value, std::span<const Id> inputs, BackwardFn backward) {
    bool needs = false;
    for (Id in : inputs) needs = needs || requires_grad(in);
    nodes_.push_back(Node{std::move(value), Tensor(), needs ? std::move(backward) : nullptr, needs});
    return nodes_.size() - 1;
}

void Tape::accumulate(Id id, const Tensor& g) {
    Node& node = nodes_.at(id);
    if (!node.requires_grad) return;
    if (g.shape() != node.value.shape())
        fail(ErrorKind::InvalidArgument, "gradient shape " + shape_str(g.shape()) +
                                             " does not match value shape " +
                                             shape_str(node.value.shape()));
    if (node.grad.empty()) {
        node.grad = g;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::backward(Id root) {
    require(value(root).size() == 1, "backward(root) needs a scalar root, got " +
                                         shape_str(value(root).shape()));
    backward(root, Tensor(value(root).shape(), 1.0f));
}

void Tape::backward(Id root, const Tensor& seed) {
    accumulate(root, seed);
    for (Id i = root + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.backward || node.grad.empty()) continue;
        node.backward(*this, node.grad);
        // Intermediate gradients are not needed once routed to the inputs.
        node.grad = Tensor();
    }
}

namespace ag {

Tape::Id conv2d(Tape& tape, Tape::Id input, Tape::Id weight, Tape::Id bias, ops::ConvGeom geom) {
    Tensor out = ops::conv2d(tape.value(input), tape.value(weight), tape.value(bias), geom);
    const Tape::Id ids[] = {input, weight, bias};
    return tape.record(std::move(out), ids, [=](Tape& t, const Tensor& g) {
        ops::ConvSaved saved{&t.value(input), &t.value(weight), geom, t.requires_grad(input)};
        ops::ConvGrads grads = ops::conv2d_backward(g, saved);
        if (saved.input_grad) t.accumulate(input, grads.input);
        t.accumulate(weight, grads.weight);
        t.accumulate(bias, grads.bias);
    });
}

Tape::Id batchnorm2d(Tape& tape, Tape::Id input, Tape::Id gamma, Tape::Id beta,
                     Tensor& running_mean, Tensor& running_var, ops::Mode mode,
                     ops::BatchNormOptions options) {
    auto cache = std::make_shared<ops::BatchNormCache>();
    Tensor out = ops::batchnorm2d(tape.value(input), tape.value(gamma), tape.value(beta),
                                  running_mean, running_var, mode, cache.get(), options);
    const Tape::Id ids[] = {input, gamma, beta};
    return tape.record(std::move(out), ids, [=](Tape& t, const Tensor& g) {
        ops::BatchNormGrads grads = ops::batchnorm2d_backward(g, t.value(gamma), *cache);
        t.accumulate(input, grads.input);
        t.accumulate(gamma, grads.gamma);
        t.accumulate(beta, grads.beta);
    });
}

Tape::Id relu(Tape& tape, Tape::Id input) {
    const Tape::Id ids[] = {input};
    return tape.record(ops::relu(tape.value(input)), ids, [=](Tape& t, const Tensor& g) {
        t.accumulate(input, ops::relu_backward(g, t.value(input)));
    });
}

Tape::Id dropout(Tape& tape, Tape::Id input, float p, ops::Mode mode, const Rng& rng,
                 std::uint64_t call_index) {
    auto scale = std::make_shared<Tensor>();
    Tensor out = ops::dropout(tape.value(input), p, mode, rng, call_index, scale.get());
    const Tape::Id ids[] = {input};
    return tape.record(std::move(out), ids, [=](Tape& t, const Tensor& g) {
        Tensor gi(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] = g[i] * (*scale)[i];
        t.accumulate(input, gi);
    });
}

Tape::Id linear(Tape& tape, Tape::Id input, Tape::Id weight, Tape::Id bias) {
    Tensor out = ops::linear(tape.value(input), tape.value(weight), tape.value(bias));
    const Tape::Id ids[] = {input, weight, bias};
    return tape.record(std::move(out), ids, [=](Tape& t, const Tensor& g) {
        ops::LinearGrads grads = ops::linear_backward(g, t.value(input), t.value(weight));
        t.accumulate(input, grads.input);
        t.accumulate(weight, grads.weight);
        t.accumulate(bias, grads.bias);
    });
}

Tape::Id global_avg_pool(Tape& tape, Tape::Id input) {
    const Tape::Id ids[] = {input};
    return tape.record(ops::global_avg_pool(tape.value(input)), ids,
                       [=](Tape& t, const Tensor& g) {
                           t.accumulate(input,
                                        ops::global_avg_pool_backward(g, t.value(input).shape()));
                       });
}

Tape::Id cross_entropy(Tape& tape, Tape::Id logits, std::vector<int> labels) {
    auto grad = std::make_shared<Tensor>();
    const double loss = ops::cross_entropy(tape.value(logits), labels, grad.get());
    const Tape::Id ids[] = {logits};
    return tape.record(Tensor({1}, static_cast<float>(loss)), ids,
                       [=](Tape& t, const Tensor& g) {
                           Tensor gl = *grad;
                           for (float& v : gl.values()) v *= g[0];
                           t.accumulate(logits, gl);
                       });
}

Tape::Id weighted_sum(Tape& tape, Tape::Id input, Tensor weights) {
    const Tensor& x = tape.value(input);
    require(weights.shape() == x.shape(), "weighted_sum: weight shape " +
                                              shape_str(weights.shape()) + " != input shape " +
                                              shape_str(x.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(weights[i]) * x[i];
    const Tape::Id ids[] = {input};
    auto w = std::make_shared<Tensor>(std::move(weights));
    return tape.record(Tensor({1}, static_cast<float>(s)), ids, [=](Tape& t, const Tensor& g) {
        Tensor gi = *w;
        for (float& v : gi.values()) v *= g[0];
        t.accumulate(input, gi);
    });
}

Tape::Id concat_channels(Tape& tape, std::span<const Tape::Id> inputs) {
    require(!inputs.empty(), "concat_channels: empty input list");
    const Shape& s0 = tape.value(inputs[0]).shape();
    require(s0.size() == 4, "concat_channels expects [N,C,H,W] inputs");
    std::vector<std::size_t> channels;
    std::size_t total = 0;
    for (Tape::Id id : inputs) {
        const Shape& s = tape.value(id).shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            fail(ErrorKind::InvalidArgument, "concat_channels: spatial mismatch " + shape_str(s) +
                                                 " vs " + shape_str(s0));
        channels.push_back(s[1]);
        total += s[1];
    }
    const std::size_t N = s0[0], HW = s0[2] * s0[3];
    Tensor out({N, total, s0[2], s0[3]});
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            const Tensor& v = tape.value(inputs[k]);
            const float* src = v.data() + n * channels[k] * HW;
            std::copy(src, src + channels[k] * HW, out.data() + (n * total + c0) * HW);
            c0 += channels[k];
        }
    }
    std::vector<Tape::Id> ids(inputs.begin(), inputs.end());
    return tape.record(std::move(out), inputs, [=](Tape& t, const Tensor& g) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor gk(t.value(ids[k]).shape());
            for (std::size_t n = 0; n < N; ++n) {
                const float* src = g.data() + (n * total + c0) * HW;
                std::copy(src, src + channels[k] * HW, gk.data() + n * channels[k] * HW);
            }
            t.accumulate(ids[k], gk);
            c0 += channels[k];
        }
    });
}

}  // namespace ag

}  // namespace patchnet
