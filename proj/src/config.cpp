#include "patchnet/config.hpp"

#include "patchnet/data_io.hpp"
#include "patchnet/error.hpp"

namespace patchnet {

TrainConfig RunConfig::train_config(Stage stage) const {
    TrainConfig c;
    c.lr = trainer.lr;
    c.momentum = trainer.momentum;
    c.batch_size = trainer.batch_size;
    c.max_epochs = trainer.max_epochs;
    c.patience = trainer.patience;
    c.dropout = static_cast<float>(trainer.dropout);
    c.seed = seed;
    c.stage = stage;
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    return {
        {"geometry",
         {{"image_w", c.geometry.image_w},
          {"image_h", c.geometry.image_h},
          {"window", c.geometry.window},
          {"stride", c.geometry.stride}}},
        {"model",
         {{"base_width", c.model.base_width},
          {"feature_depth", c.model.feature_depth},
          {"head_depth", c.model.head_depth}}},
        {"trainer",
         {{"lr", c.trainer.lr},
          {"momentum", c.trainer.momentum},
          {"batch_size", c.trainer.batch_size},
          {"max_epochs", c.trainer.max_epochs},
          {"patience", c.trainer.patience},
          {"dropout", c.trainer.dropout}}},
        {"synth", {{"n_per_class", c.synth.n_per_class}, {"val_fraction", c.synth.val_fraction}}},
        {"paths",
         {{"manifest", c.paths.manifest},
          {"patch_checkpoint", c.paths.patch_checkpoint},
          {"image_checkpoint", c.paths.image_checkpoint},
          {"out", c.paths.out},
          {"image", c.paths.image},
          {"spec", c.paths.spec}}},
        {"seed", c.seed},
        {"threads", c.threads},
    };
}

namespace {

template <class T>
void take(const nlohmann::json& j, const std::string& key, T& field) {
    try {
        if constexpr (std::is_integral_v<T>) {
            if (!j.is_number_integer() || (j.is_number_integer() && j.get<long long>() < 0))
                fail(ErrorKind::Config, "config key " + key + " must be a non-negative integer");
            field = j.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) fail(ErrorKind::Config, "config key " + key + " must be a number");
            field = j.get<T>();
        } else {
            if (!j.is_string()) fail(ErrorKind::Config, "config key " + key + " must be a string");
            field = j.get<T>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, "config key " + key + ": " + e.what());
    }
}

template <class Fn>
void section(const nlohmann::json& j, const std::string& name, Fn&& fn) {
    if (!j.is_object()) fail(ErrorKind::Config, "config section " + name + " must be an object");
    for (const auto& [k, v] : j.items()) fn(name + "." + k, k, v);
}

[[noreturn]] void unknown(const std::string& key) {
    fail(ErrorKind::Config, "unknown config key " + key);
}

}  // namespace

void merge_config(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    for (const auto& [name, value] : j.items()) {
        if (name == "geometry") {
            section(value, name, [&](const std::string& full, const std::string& k, const nlohmann::json& v) {
                if (k == "image_w") take(v, full, c.geometry.image_w);
                else if (k == "image_h") take(v, full, c.geometry.image_h);
                else if (k == "window") take(v, full, c.geometry.window);
                else if (k == "stride") take(v, full, c.geometry.stride);
                else unknown(full);
            });
        } else if (name == "model") {
            section(value, name, [&](const std::string& full, const std::string& k, const nlohmann::json& v) {
                if (k == "base_width") take(v, full, c.model.base_width);
                else if (k == "feature_depth") take(v, full, c.model.feature_depth);
                else if (k == "head_depth") take(v, full, c.model.head_depth);
                else unknown(full);
            });
        } else if (name == "trainer") {
            section(value, name, [&](const std::string& full, const std::string& k, const nlohmann::json& v) {
                if (k == "lr") take(v, full, c.trainer.lr);
                else if (k == "momentum") take(v, full, c.trainer.momentum);
                else if (k == "batch_size") take(v, full, c.trainer.batch_size);
                else if (k == "max_epochs") take(v, full, c.trainer.max_epochs);
                else if (k == "patience") take(v, full, c.trainer.patience);
                else if (k == "dropout") take(v, full, c.trainer.dropout);
                else unknown(full);
            });
        } else if (name == "synth") {
            section(value, name, [&](const std::string& full, const std::string& k, const nlohmann::json& v) {
                if (k == "n_per_class") take(v, full, c.synth.n_per_class);
                else if (k == "val_fraction") take(v, full, c.synth.val_fraction);
                else unknown(full);
            });
        } else if (name == "paths") {
            section(value, name, [&](const std::string& full, const std::string& k, const nlohmann::json& v) {
                if (k == "manifest") take(v, full, c.paths.manifest);
                else if (k == "patch_checkpoint") take(v, full, c.paths.patch_checkpoint);
                else if (k == "image_checkpoint") take(v, full, c.paths.image_checkpoint);
                else if (k == "out") take(v, full, c.paths.out);
                else if (k == "image") take(v, full, c.paths.image);
                else if (k == "spec") take(v, full, c.paths.spec);
                else unknown(full);
            });
        } else if (name == "seed") {
            take(value, name, c.seed);
        } else if (name == "threads") {
            take(value, name, c.threads);
        } else {
            unknown(name);
        }
    }
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    nlohmann::json patch;
    const auto dot = key.find('.');
    if (dot == std::string::npos)
        patch[key] = v;
    else
        patch[key.substr(0, dot)][key.substr(dot + 1)] = v;
    // Path-like values stay strings even when they parse as JSON numbers.
    if (key.rfind("paths.", 0) == 0) patch["paths"][key.substr(dot + 1)] = value;
    merge_config(c, patch);
}

RunConfig load_config_file(const std::string& path) {
    const auto bytes = read_file(path);
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::Config, "config file " + path + " is not valid JSON");
    RunConfig c;
    merge_config(c, j);
    return c;
}

}  // namespace patchnet
