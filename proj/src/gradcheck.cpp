#include "patchnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "patchnet/error.hpp"
#include "patchnet/rng.hpp"

namespace patchnet {

namespace {

double probe_loss_f32(const OpUnderTest& op, const std::vector<Tensor>& inputs,
                      const Tensor& weights) {
    Tape tape;
    std::vector<Tape::Id> ids;
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
    const Tensor& out = tape.value(op.build(tape, ids));
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(weights[i]) * out[i];
    return s;
}

double probe_loss_ref(const OpUnderTest& op, const std::vector<std::vector<double>>& inputs,
                      const Tensor& weights) {
    const std::vector<double> out = op.reference(inputs);
    require(out.size() == weights.size(), "grad_check: reference output has " +
                                              std::to_string(out.size()) + " elements, op has " +
                                              std::to_string(weights.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(weights[i]) * out[i];
    return s;
}

}  // namespace

GradCheckReport grad_check(const OpUnderTest& op, std::span<const Shape> input_shapes,
                           std::uint64_t seed, GradCheckOptions options) {
    const Rng rng = Rng(seed).split("gradcheck");
    std::vector<Tensor> inputs;
    for (std::size_t k = 0; k < input_shapes.size(); ++k) {
        Tensor t(input_shapes[k]);
        RngCursor cur(rng.split(k));
        for (float& v : t.values()) {
            do {
                v = cur.uniform(options.low, options.high);
            } while (std::fabs(v) < options.kink_margin);
        }
        inputs.push_back(std::move(t));
    }

    Tape tape;
    std::vector<Tape::Id> ids;
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
    const Tape::Id out = op.build(tape, ids);
    Tensor weights(tape.value(out).shape());
    {
        RngCursor cur(rng.split("probe"));
        for (float& v : weights.values()) v = cur.uniform(-1.0f, 1.0f);
    }
    tape.backward(ag::weighted_sum(tape, out, weights));

    std::vector<std::vector<double>> ref_inputs;
    if (op.reference)
        for (const Tensor& t : inputs) ref_inputs.emplace_back(t.values().begin(), t.values().end());

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& analytic = tape.grad(ids[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            double n;
            if (op.reference) {
                // Fourth-order central stencil at the same base step.
                const double x = inputs[k][i], h = options.step;
                auto at = [&](double v) {
                    ref_inputs[k][i] = v;
                    return probe_loss_ref(op, ref_inputs, weights);
                };
                n = (at(x - 2 * h) - 8 * at(x - h) + 8 * at(x + h) - at(x + 2 * h)) / (12 * h);
                ref_inputs[k][i] = x;
            } else {
                const float saved = inputs[k][i];
                const float up = saved + options.step;
                const float down = saved - options.step;
                inputs[k][i] = up;
                const double lp = probe_loss_f32(op, inputs, weights);
                inputs[k][i] = down;
                const double lm = probe_loss_f32(op, inputs, weights);
                inputs[k][i] = saved;
                n = (lp - lm) / (static_cast<double>(up) - down);
            }
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max({std::fabs(a), std::fabs(n), 1e-6});
            const double rel = std::fabs(a - n) / denom;
            if (rel > report.max_rel_error) report = {rel, k, i, a, n};
        }
    }
    return report;
}

}  // namespace patchnet
