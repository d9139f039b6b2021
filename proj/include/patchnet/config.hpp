#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "patchnet/trainer.hpp"

namespace patchnet {

// Fully resolved settings of one command. Built from defaults, then a JSON
// config file, then individual overrides ("geometry.window" = 64, ...).
struct RunConfig {
    struct Geometry {
        std::size_t image_w = 2048;
        std::size_t image_h = 1536;
        std::size_t window = 512;
        std::size_t stride = 256;
    } geometry;
    struct ModelDims {
        std::size_t base_width = 16;
        std::size_t feature_depth = 16;
        std::size_t head_depth = 64;
    } model;
    struct Trainer {
        double lr = 0.01;
        double momentum = 0.9;
        std::size_t batch_size = 32;
        std::size_t max_epochs = 20;
        std::size_t patience = 5;
        double dropout = 0.5;
    } trainer;
    struct Synth {
        std::size_t n_per_class = 40;
        double val_fraction = 0.25;
    } synth;
    struct Paths {
        std::string manifest;
        std::string patch_checkpoint;
        std::string image_checkpoint;
        std::string out;
        std::string image;
        std::string spec;
    } paths;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    TrainConfig train_config(Stage stage) const;
};

nlohmann::json to_json(const RunConfig& config);

// Merges the keys present in j over config; unknown keys and wrongly typed
// values are ErrorKind::Config.
void merge_config(RunConfig& config, const nlohmann::json& j);

// Dotted key ("trainer.lr", "seed") set from a JSON literal or, failing
// that, a bare string.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

RunConfig load_config_file(const std::string& path);

}  // namespace patchnet
