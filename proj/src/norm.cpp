#include "patchnet/norm.hpp"

#include "patchnet/error.hpp"

namespace patchnet {

void normalize(Tensor& images, const NormStats& stats) {
    const std::size_t r = images.rank();
    require((r == 3 || r == 4) && images.dim(r - 3) == 3,
            "normalize expects [3,H,W] or [N,3,H,W], got " + shape_str(images.shape()));
    const std::size_t plane = images.dim(r - 2) * images.dim(r - 1);
    const std::size_t n = r == 4 ? images.dim(0) : 1;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            float* p = images.data() + (b * 3 + c) * plane;
            const float m = stats.mean[c], inv = 1.0f / stats.std[c];
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
        }
}

}  // namespace patchnet
