#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchnet/checkpoint.hpp"
#include "patchnet/data_io.hpp"
#include "patchnet/network.hpp"

namespace patchnet {

enum class Stage { Patchwise, Imagewise };

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 20;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    float dropout = 0.5f;       // image-wise head only
    bool dropout_active = true; // false runs the dropout layers in eval mode while training
    Stage stage = Stage::Patchwise;

    // lr > 0, patience >= 1, batch size >= 2, max_epochs >= 1, dropout in [0,1).
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);

// v <- momentum * v + g; w <- w - lr * v.
void sgd_step(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
};

struct Metrics {
    // rows = true class, cols = predicted class
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};
    std::vector<EpochRecord> epochs;

    void add(int truth, int predicted);
    std::uint64_t total() const;
    double accuracy() const;          // trace / total, 0 when empty
    double precision(std::size_t k) const;  // 0 when nothing was predicted as k
    double recall(std::size_t k) const;     // 0 when class k is absent
};

nlohmann::json to_json(const Metrics& metrics);

struct EarlyStop {
    bool stop = false;
    std::size_t best_epoch = 0;
};

// Stops once `patience` consecutive epochs fail to beat the best accuracy so
// far (strictly); best_epoch is the first epoch reaching the best accuracy.
EarlyStop early_stop(std::span<const double> history, std::size_t patience);

struct PatchwiseSetup {
    std::size_t window = 64;
    std::size_t stride = 32;
    std::size_t base_width = 16;
    std::size_t feature_depth = 16;
};

struct TrainResult {
    Checkpoint checkpoint;  // parameters of the best validation epoch
    Metrics metrics;        // history plus the best epoch's validation confusion
};

// Called after each epoch's validation; may inspect but not modify training.
using EpochHook = std::function<void(const EpochRecord&)>;

// Trains on overlapping patches of the train split with image labels;
// validation is patch-level accuracy on the val split's overlapping patches.
// The manifest must carry normalization stats.
TrainResult train_patchwise(const DatasetManifest& manifest, const PatchwiseSetup& setup,
                            const TrainConfig& config, const nlohmann::json& run_config = {},
                            const EpochHook& hook = {});

// Trains the image-wise network on channel-stacked feature maps of the frozen
// patch-wise trunk (non-overlapping tiles). Validation is image-level accuracy.
TrainResult train_imagewise(const DatasetManifest& manifest, const Checkpoint& patchwise,
                            std::size_t head_depth, const TrainConfig& config,
                            const nlohmann::json& run_config = {}, const EpochHook& hook = {});

// Patch-level metrics of a patch-wise checkpoint over a split (overlapping
// patches at the given stride), exactly as computed during training.
Metrics evaluate_patchwise(const Checkpoint& patchwise, const DatasetManifest& manifest,
                           Split split, std::size_t stride);

// Image-level metrics of the two-stage classifier over a split.
Metrics evaluate_imagewise(const Checkpoint& patchwise, const Checkpoint& imagewise,
                           const DatasetManifest& manifest, Split split);

// Mean cross-entropy of an untrained network's logits; batchnorm runs in
// train mode (batch statistics) on a copy of the parameters.
double initial_loss(const NetworkSpec& spec, std::uint64_t seed, const Tensor& inputs,
                    std::span<const int> labels);

}  // namespace patchnet
