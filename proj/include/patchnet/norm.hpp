#pragma once

#include <array>

#include "patchnet/tensor.hpp"

namespace patchnet {

// Per-channel input standardization, x' = (x - mean) / std.
struct NormStats {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> std{1.0f, 1.0f, 1.0f};

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline constexpr float kStdFloor = 1e-6f;

// In place on a [3,H,W] image or a [N,3,H,W] batch.
void normalize(Tensor& images, const NormStats& stats);

}  // namespace patchnet
