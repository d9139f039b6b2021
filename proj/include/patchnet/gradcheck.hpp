#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "patchnet/autograd.hpp"

namespace patchnet {

// An op to check. `build` records the f32 op on a tape from leaf inputs and
// returns its output id; its backward is what gets verified. `reference`, if
// set, evaluates the same function in double precision on flat row-major
// inputs and is used for the central differences (fourth-order stencil
// f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h) over 12h). Without it the f32 forward
// is differenced, whose output rounding caps the attainable agreement near
// 1e-5 absolute.
struct OpUnderTest {
    std::function<Tape::Id(Tape&, std::span<const Tape::Id>)> build;
    std::function<std::vector<double>(const std::vector<std::vector<double>>&)> reference;
};

struct GradCheckOptions {
    float step = 1e-2f;
    float low = -1.0f;
    float high = 1.0f;
    // Inputs closer than this to zero are redrawn (for ops with a kink at 0).
    float kink_margin = 0.0f;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares the analytic gradient of L = sum_i r_i * out_i (r fixed, drawn
// from the seed in [-1, 1]) against central differences on every input
// element. Relative error per element is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport grad_check(const OpUnderTest& op, std::span<const Shape> input_shapes,
                           std::uint64_t seed, GradCheckOptions options = {});

}  // namespace patchnet
