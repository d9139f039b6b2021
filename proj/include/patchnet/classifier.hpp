#pragma once

#include <array>
#include <string>

#include "patchnet/checkpoint.hpp"
#include "patchnet/network.hpp"
#include "patchnet/norm.hpp"

namespace patchnet {

// Class names in label order.
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "normal tissue", "benign tissue", "in situ carcinoma", "invasive carcinoma"};

struct Prediction {
    int label = 0;
    std::array<float, kNumClasses> probabilities{};
};

// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const float> values);

// Both trained stages plus the input preprocessing they were trained with.
struct Classifier {
    Model patchwise;
    Model imagewise;
    NormStats norm;
    std::size_t window = 0;
};

// Checks kinds and that the image-wise input depth equals n_patches * C of
// the patch-wise network.
Classifier make_classifier(const Checkpoint& patchwise, const Checkpoint& imagewise);

// Tiles a normalized [3,H,W] image with non-overlapping window x window
// patches (row-major), extracts each patch's feature maps and channel-stacks
// them: [n_patches*C, k/8, k/8].
Tensor image_feature_stack(const Model& patchwise, const Tensor& normalized_image,
                           std::size_t window, std::size_t expected_patches);

// Raw [3,H,W] image with values in [0,1] -> class and softmax probabilities.
Prediction infer_image(const Classifier& classifier, const Tensor& image);

}  // namespace patchnet
