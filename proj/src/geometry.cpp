#include "patchnet/geometry.hpp"

#include <algorithm>

#include "patchnet/error.hpp"

namespace patchnet::geometry {

PatchGrid patch_count(std::size_t image_width, std::size_t image_height, std::size_t window,
                      std::size_t stride) {
    if (window == 0) fail(ErrorKind::Config, "window k must be >= 1");
    if (stride == 0) fail(ErrorKind::Config, "stride s must be >= 1");
    if (window > image_width || window > image_height)
        fail(ErrorKind::Config, "window k=" + std::to_string(window) +
                                    " exceeds image dimension (k <= min(I_W, I_H) violated for " +
                                    std::to_string(image_width) + "x" +
                                    std::to_string(image_height) + ")");
    PatchGrid g{image_width, image_height, window, stride, 0, 0, true};
    g.nx = 1 + (image_width - window) / stride;
    g.ny = 1 + (image_height - window) / stride;
    g.coverage_exact =
        (image_width - window) % stride == 0 && (image_height - window) % stride == 0;
    return g;
}

std::vector<PatchOrigin> patch_coords(const PatchGrid& grid) {
    std::vector<PatchOrigin> coords;
    coords.reserve(grid.total());
    for (std::size_t j = 0; j < grid.ny; ++j)
        for (std::size_t i = 0; i < grid.nx; ++i)
            coords.push_back({i * grid.stride, j * grid.stride});
    return coords;
}

Tensor extract_patch(const Tensor& image, std::size_t x, std::size_t y, std::size_t window) {
    require(image.rank() == 3, "extract_patch expects [C,H,W], got " + shape_str(image.shape()));
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (window == 0 || x + window > W || y + window > H)
        fail(ErrorKind::InvalidArgument,
             "patch at (" + std::to_string(x) + "," + std::to_string(y) + ") size " +
                 std::to_string(window) + " out of bounds for image " + shape_str(image.shape()));
    Tensor patch({C, window, window});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < window; ++r) {
            const float* src = image.data() + (c * H + y + r) * W + x;
            std::copy(src, src + window, patch.data() + (c * window + r) * window);
        }
    return patch;
}

std::vector<std::size_t> output_sizes(std::span<const LayerGeom> layers, std::size_t input) {
    std::vector<std::size_t> sizes;
    sizes.reserve(layers.size());
    std::size_t n = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerGeom& l = layers[i];
        if (l.kernel == 0 || l.stride == 0)
            fail(ErrorKind::Config, "layer " + std::to_string(i) + ": kernel and stride must be >= 1");
        if (n + 2 * l.padding < l.kernel)
            fail(ErrorKind::Config, "layer " + std::to_string(i) + ": input extent " +
                                        std::to_string(n) + " collapses under kernel " +
                                        std::to_string(l.kernel));
        n = (n + 2 * l.padding - l.kernel) / l.stride + 1;
        sizes.push_back(n);
    }
    return sizes;
}

std::size_t output_size(std::span<const LayerGeom> layers, std::size_t input) {
    const auto sizes = output_sizes(layers, input);
    return sizes.empty() ? input : sizes.back();
}

std::vector<RFState> receptive_field_trace(std::span<const LayerGeom> layers) {
    std::vector<RFState> trace;
    trace.reserve(layers.size());
    RFState s;
    for (const LayerGeom& l : layers) {
        s.r += (l.kernel - 1) * s.jump;
        s.jump *= l.stride;
        trace.push_back(s);
    }
    return trace;
}

RFState receptive_field(std::span<const LayerGeom> layers) {
    const auto trace = receptive_field_trace(layers);
    return trace.empty() ? RFState{} : trace.back();
}

std::size_t max_stride_for_coverage(const RFState& rf) { return rf.r; }

std::optional<std::string> stride_advisory(std::size_t stride, const RFState& rf) {
    const std::size_t limit = max_stride_for_coverage(rf);
    if (stride <= limit) return std::nullopt;
    return "stride " + std::to_string(stride) + " exceeds the receptive field " +
           std::to_string(limit) + "; some input pixels lie outside every unit's field";
}

}  // namespace patchnet::geometry
