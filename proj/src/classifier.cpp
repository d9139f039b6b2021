#include "patchnet/classifier.hpp"

#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/ops.hpp"

namespace patchnet {

int argmax(std::span<const float> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

Classifier make_classifier(const Checkpoint& patchwise, const Checkpoint& imagewise) {
    if (patchwise.kind() != NetworkKind::Patchwise)
        fail(ErrorKind::Checkpoint, "first checkpoint must hold the patch-wise network",
             FormatDetail::KindMismatch);
    if (imagewise.kind() != NetworkKind::Imagewise)
        fail(ErrorKind::Checkpoint, "second checkpoint must hold the image-wise network",
             FormatDetail::KindMismatch);
    const std::size_t C = patchwise.spec.feature_depth;
    if (imagewise.spec.feature_depth != C ||
        imagewise.spec.input_channels != imagewise.spec.n_patches * C)
        fail(ErrorKind::Config, "image-wise network expects C=" +
                                    std::to_string(imagewise.spec.feature_depth) +
                                    ", patch-wise network produces C=" + std::to_string(C));
    if (patchwise.meta.window == 0 || !patchwise.meta.norm)
        fail(ErrorKind::Checkpoint, "patch-wise checkpoint lacks window/normalization metadata",
             FormatDetail::BadHeader);
    return Classifier{Model(patchwise.spec, patchwise.params), Model(imagewise.spec, imagewise.params),
                      *patchwise.meta.norm, patchwise.meta.window};
}

Tensor image_feature_stack(const Model& patchwise, const Tensor& normalized_image,
                           std::size_t window, std::size_t expected_patches) {
    require(normalized_image.rank() == 3, "image must be [3,H,W]");
    const auto grid = geometry::patch_count(normalized_image.dim(2), normalized_image.dim(1),
                                            window, window);
    if (grid.total() != expected_patches)
        fail(ErrorKind::Config, "image " + std::to_string(normalized_image.dim(2)) + "x" +
                                    std::to_string(normalized_image.dim(1)) + " tiles into " +
                                    std::to_string(grid.total()) + " patches of " +
                                    std::to_string(window) + ", image-wise network expects " +
                                    std::to_string(expected_patches));
    std::vector<Tensor> patches;
    for (const auto& o : geometry::patch_coords(grid))
        patches.push_back(geometry::extract_patch(normalized_image, o.x, o.y, window));
    const Tensor maps = extract_features(patchwise, ops::stack_batch(patches));
    std::vector<Tensor> per_patch;
    for (std::size_t i = 0; i < maps.dim(0); ++i) per_patch.push_back(ops::batch_item(maps, i));
    return stack_features(per_patch, expected_patches);
}

Prediction infer_image(const Classifier& classifier, const Tensor& image) {
    Tensor x = image;
    normalize(x, classifier.norm);
    const Tensor stacked = image_feature_stack(classifier.patchwise, x, classifier.window,
                                               classifier.imagewise.spec().n_patches);
    const Tensor batch = ops::stack_batch(std::span<const Tensor>(&stacked, 1));
    const Tensor prob = ops::softmax(classifier.imagewise.logits(batch));
    Prediction p;
    for (std::size_t k = 0; k < kNumClasses; ++k) p.probabilities[k] = prob[k];
    p.label = argmax(p.probabilities);
    return p;
}

}  // namespace patchnet
