#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchnet/tensor.hpp"

// Sliding-window arithmetic shared by data loading, the networks and the CLI.
namespace patchnet::geometry {

// Sliding-window decomposition of an image_width x image_height image into
// window x window patches at the given stride.
struct PatchGrid {
    std::size_t image_width = 0;
    std::size_t image_height = 0;
    std::size_t window = 0;
    std::size_t stride = 0;
    std::size_t nx = 0;
    std::size_t ny = 0;
    // False when the right or bottom border is not reached by any patch,
    // i.e. (I - k) mod s != 0 on some axis.
    bool coverage_exact = true;

    std::size_t total() const noexcept { return nx * ny; }
};

// n = 1 + floor((I - k) / s) per axis. Rejects k larger than either image
// dimension, k = 0 and s = 0 (ErrorKind::Config).
PatchGrid patch_count(std::size_t image_width, std::size_t image_height, std::size_t window,
                      std::size_t stride);

struct PatchOrigin {
    std::size_t x = 0;
    std::size_t y = 0;
    friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

// Row-major patch origins: y outer, x inner. This order is also the channel
// block order of stacked feature maps.
std::vector<PatchOrigin> patch_coords(const PatchGrid& grid);

// Exact [C,k,k] crop of a [C,H,W] image at (x, y).
Tensor extract_patch(const Tensor& image, std::size_t x, std::size_t y, std::size_t window);

// Geometry of one conv-like layer.
struct LayerGeom {
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// Spatial extent after each layer, n' = floor((n + 2p - k) / s) + 1. Fails
// with the offending layer index if the extent would collapse.
std::vector<std::size_t> output_sizes(std::span<const LayerGeom> layers, std::size_t input);
std::size_t output_size(std::span<const LayerGeom> layers, std::size_t input);

// Receptive field r and jump j (input pixels between adjacent units).
struct RFState {
    std::size_t r = 1;
    std::size_t jump = 1;
    friend bool operator==(const RFState&, const RFState&) = default;
};

// Folds r += (k - 1) * j; j *= s over the layers. Padding only shifts the
// field and does not enter.
RFState receptive_field(std::span<const LayerGeom> layers);
// State after each layer (same fold, every intermediate kept).
std::vector<RFState> receptive_field_trace(std::span<const LayerGeom> layers);

// Largest patch stride that leaves no input pixel outside every unit's field:
// the receptive field itself.
std::size_t max_stride_for_coverage(const RFState& rf);

// Non-fatal note when a chosen stride exceeds max_stride_for_coverage.
std::optional<std::string> stride_advisory(std::size_t stride, const RFState& rf);

}  // namespace patchnet::geometry
