#include "patchnet/c_api.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "patchnet/checkpoint.hpp"
#include "patchnet/classifier.hpp"
#include "patchnet/config.hpp"
#include "patchnet/data_io.hpp"
#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/parallel.hpp"
#include "patchnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchnet;

struct pn_config {
    RunConfig config;
};

struct pn_classifier {
    Classifier clf;
};

namespace {

thread_local std::string g_last_error;
pn_log_fn g_log = nullptr;
void* g_log_user = nullptr;

void log_line(const std::string& line) {
    if (g_log) g_log(line.c_str(), g_log_user);
}

pn_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument:
        case ErrorKind::Config: return PN_ERR_CONFIG;
        case ErrorKind::Io:
        case ErrorKind::Format: return PN_ERR_IO;
        case ErrorKind::Checkpoint: return PN_ERR_CHECKPOINT;
    }
    return PN_ERR_INTERNAL;
}

template <class Fn>
pn_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return PN_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const json::exception& e) {
        g_last_error = std::string("bad JSON value: ") + e.what();
        return PN_ERR_CONFIG;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return PN_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PN_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void need(const void* p, const char* what) {
    if (!p) fail(ErrorKind::InvalidArgument, std::string(what) + " is NULL");
}

json report(const RunConfig& c, const char* command) {
    return {{"command", command},
            {"config", to_json(c)},
            {"versions", {{"patchnet", PATCHNET_VERSION}, {"checkpoint", kCheckpointVersion}}}};
}

template <class Fn>
pn_status command(const pn_config* cfg, char** out_json, const char* name, Fn&& body) {
    return guarded([&] {
        need(cfg, "config");
        need(out_json, "out_json");
        const RunConfig& c = cfg->config;
        set_thread_count(c.threads == 0 ? 1 : c.threads);
        json j = report(c, name);
        body(c, j);
        *out_json = dup_string(j.dump(2));
    });
}

std::string require_path(const std::string& value, const char* flag, const char* purpose) {
    if (value.empty())
        fail(ErrorKind::Config, std::string("missing ") + flag + " PATH (" + purpose + ")");
    return value;
}

std::string output_path(const std::string& explicit_path, const std::string& out_dir,
                        const char* file, const char* flag) {
    if (!explicit_path.empty()) return explicit_path;
    if (out_dir.empty())
        fail(ErrorKind::Config, std::string("no output location: pass ") + flag + " PATH or --out DIR");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    return (fs::path(out_dir) / file).string();
}

void write_json_file(const std::string& dir, const char* file, const json& j) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const std::string text = j.dump(2) + "\n";
    write_file((fs::path(dir) / file).string(),
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json rf_table(std::span<const geometry::LayerGeom> layers, std::size_t input) {
    const auto trace = geometry::receptive_field_trace(layers);
    const auto sizes = geometry::output_sizes(layers, input);
    json rows = json::array();
    for (std::size_t i = 0; i < layers.size(); ++i)
        rows.push_back({{"layer", i + 1},
                        {"kernel", layers[i].kernel},
                        {"stride", layers[i].stride},
                        {"padding", layers[i].padding},
                        {"r", trace[i].r},
                        {"jump", trace[i].jump},
                        {"output_size", sizes[i]}});
    const auto rf = geometry::receptive_field(layers);
    return {{"input_size", input}, {"layers", rows}, {"r", rf.r}, {"jump", rf.jump}};
}

std::vector<geometry::LayerGeom> layers_from_spec_file(const std::string& path) {
    const auto bytes = read_file(path);
    const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::Config, "spec file " + path + " is not valid JSON");
    if (j.is_object()) return network_spec_from_json(j).conv_geometry();
    if (!j.is_array()) fail(ErrorKind::Config, "spec file must be a layer array or a network spec");
    std::vector<geometry::LayerGeom> layers;
    for (const auto& l : j)
        layers.push_back({l.at("kernel").get<std::size_t>(), l.value("stride", std::size_t{1}),
                          l.value("padding", std::size_t{0})});
    return layers;
}

// Config echo stored in checkpoints; paths are left out so identical runs in
// different directories produce identical files.
json run_echo(const RunConfig& c) {
    json j = to_json(c);
    j.erase("paths");
    return j;
}

EpochHook epoch_logger(const char* stage) {
    return [stage](const EpochRecord& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s epoch %zu train_loss %.6f val_acc %.6f", stage, e.epoch,
                      e.train_loss, e.val_acc);
        log_line(buf);
    };
}

std::size_t checkpoint_stride(const Checkpoint& pw, std::size_t fallback) {
    const auto& c = pw.meta.config;
    if (c.is_object() && c.contains("stride") && c["stride"].is_number_unsigned())
        return c["stride"].get<std::size_t>();
    return fallback;
}

}  // namespace

extern "C" {

const char* pn_last_error(void) { return g_last_error.c_str(); }
const char* pn_version(void) { return PATCHNET_VERSION; }
unsigned pn_checkpoint_format_version(void) { return kCheckpointVersion; }

void pn_set_log(pn_log_fn fn, void* user) {
    g_log = fn;
    g_log_user = user;
}

pn_status pn_config_new(pn_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = new pn_config();
    });
}

pn_status pn_config_load(pn_config* cfg, const char* path) {
    return guarded([&] {
        need(cfg, "config");
        need(path, "path");
        const auto bytes = read_file(path);
        const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (j.is_discarded()) fail(ErrorKind::Config, std::string("config file ") + path + " is not valid JSON");
        merge_config(cfg->config, j);
    });
}

pn_status pn_config_set(pn_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        need(value, "value");
        set_config_value(cfg->config, key, value);
    });
}

pn_status pn_config_json(const pn_config* cfg, char** out_json) {
    return guarded([&] {
        need(cfg, "config");
        need(out_json, "out_json");
        *out_json = dup_string(to_json(cfg->config).dump(2));
    });
}

void pn_config_free(pn_config* cfg) { delete cfg; }

void pn_string_free(char* s) { std::free(s); }

pn_status pn_geometry(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "geometry", [](const RunConfig& c, json& j) {
        const auto g = geometry::patch_count(c.geometry.image_w, c.geometry.image_h,
                                             c.geometry.window, c.geometry.stride);
        const auto coords = geometry::patch_coords(g);
        j["patch_count"] = {{"nx", g.nx}, {"ny", g.ny}, {"total", g.total()}};
        j["coverage_exact"] = g.coverage_exact;
        j["coords"] = {{"first", {coords.front().x, coords.front().y}},
                       {"last", {coords.back().x, coords.back().y}},
                       {"step", g.stride},
                       {"count", coords.size()}};
    });
}

pn_status pn_rf(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "rf", [](const RunConfig& c, json& j) {
        if (!c.paths.spec.empty()) {
            const auto layers = layers_from_spec_file(c.paths.spec);
            const auto rf = geometry::receptive_field(layers);
            j["custom"] = rf_table(layers, c.geometry.window);
            j["max_stride_for_coverage"] = geometry::max_stride_for_coverage(rf);
            return;
        }
        const auto pw = canonical_patchwise_spec(c.model.base_width, c.model.feature_depth);
        const auto tiles = geometry::patch_count(c.geometry.image_w, c.geometry.image_h,
                                                 c.geometry.window, c.geometry.window);
        const auto iw = canonical_imagewise_spec(tiles.total(), c.model.feature_depth,
                                                 c.model.head_depth);
        const auto pl = pw.conv_geometry();
        const auto il = iw.conv_geometry();
        std::vector<geometry::LayerGeom> combined = pl;
        combined.insert(combined.end(), il.begin(), il.end());
        j["patchwise"] = rf_table(pl, c.geometry.window);
        const std::size_t feature_size = geometry::output_size(pl, c.geometry.window);
        j["imagewise"] = rf_table(il, feature_size);
        j["combined"] = rf_table(combined, c.geometry.window);
        const auto rf = geometry::receptive_field(combined);
        j["max_stride_for_coverage"] = geometry::max_stride_for_coverage(rf);
        if (auto advice = geometry::stride_advisory(c.geometry.stride, rf)) {
            j["advisory"] = *advice;
            log_line("warning: " + *advice);
        }
    });
}

pn_status pn_synth(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "synth", [](const RunConfig& c, json& j) {
        const std::string dir = require_path(c.paths.out, "--out", "dataset directory");
        const auto images =
            synth_dataset(c.synth.n_per_class, c.geometry.image_w, c.geometry.image_h, c.seed);
        const auto m = write_synth_dataset(dir, images, c.synth.val_fraction, c.seed);
        std::array<std::size_t, kNumClasses> per_class{};
        std::array<double, kNumClasses> blobs{};
        for (const auto& s : images) {
            ++per_class[static_cast<std::size_t>(s.image.label)];
            blobs[static_cast<std::size_t>(s.image.label)] += static_cast<double>(s.blob_count);
        }
        for (std::size_t k = 0; k < kNumClasses; ++k)
            if (per_class[k]) blobs[k] /= static_cast<double>(per_class[k]);
        j["out"] = dir;
        j["manifest"] = (fs::path(dir) / "manifest.json").string();
        j["files"] = images.size();
        j["per_class"] = per_class;
        j["mean_blob_count"] = blobs;
        j["split"] = {{"train", m.split(Split::Train).size()}, {"val", m.split(Split::Val).size()}};
    });
}

pn_status pn_stats(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "stats", [](const RunConfig& c, json& j) {
        const std::string path = require_path(c.paths.manifest, "--manifest", "dataset manifest");
        DatasetManifest m = load_manifest(path);
        m.stats = compute_norm_stats(m);
        save_manifest(path, m);
        j["manifest"] = path;
        j["train_images"] = m.split(Split::Train).size();
        j["stats"] = to_json(*m.stats);
    });
}

pn_status pn_train_patch(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "train-patch", [](const RunConfig& c, json& j) {
        const std::string path = require_path(c.paths.manifest, "--manifest", "dataset manifest");
        const std::string ckpt =
            output_path(c.paths.patch_checkpoint, c.paths.out, "patchwise.ckpt", "--patch-checkpoint");
        const DatasetManifest m = load_manifest(path);
        PatchwiseSetup setup{c.geometry.window, c.geometry.stride, c.model.base_width,
                             c.model.feature_depth};
        const auto r = train_patchwise(m, setup, c.train_config(Stage::Patchwise), run_echo(c),
                                       epoch_logger("patchwise"));
        save_checkpoint(ckpt, r.checkpoint);
        j["checkpoint"] = ckpt;
        j["best_epoch"] = r.checkpoint.meta.epoch;
        j["best_val_accuracy"] = r.checkpoint.meta.best_val_accuracy;
        j["metrics"] = to_json(r.metrics);
        write_json_file(c.paths.out, "patchwise_metrics.json", j);
    });
}

pn_status pn_train_image(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "train-image", [](const RunConfig& c, json& j) {
        if (c.paths.patch_checkpoint.empty())
            fail(ErrorKind::Config,
                 "train-image requires --patch-checkpoint PATH (the checkpoint written by "
                 "train-patch)\nusage: patchnet train-image --manifest PATH --patch-checkpoint PATH "
                 "[--image-checkpoint PATH | --out DIR]");
        const std::string path = require_path(c.paths.manifest, "--manifest", "dataset manifest");
        const std::string ckpt =
            output_path(c.paths.image_checkpoint, c.paths.out, "imagewise.ckpt", "--image-checkpoint");
        const DatasetManifest m = load_manifest(path);
        const Checkpoint pw = load_checkpoint(c.paths.patch_checkpoint, NetworkKind::Patchwise);
        if (pw.spec.feature_depth != c.model.feature_depth)
            fail(ErrorKind::Config, "patch-wise checkpoint has C=" +
                                        std::to_string(pw.spec.feature_depth) + " but config asks C=" +
                                        std::to_string(c.model.feature_depth));
        const auto r = train_imagewise(m, pw, c.model.head_depth, c.train_config(Stage::Imagewise),
                                       run_echo(c), epoch_logger("imagewise"));
        save_checkpoint(ckpt, r.checkpoint);
        j["checkpoint"] = ckpt;
        j["best_epoch"] = r.checkpoint.meta.epoch;
        j["best_val_accuracy"] = r.checkpoint.meta.best_val_accuracy;
        j["metrics"] = to_json(r.metrics);
        write_json_file(c.paths.out, "imagewise_metrics.json", j);
    });
}

pn_status pn_infer(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "infer", [](const RunConfig& c, json& j) {
        const auto pw = load_checkpoint(
            require_path(c.paths.patch_checkpoint, "--patch-checkpoint", "patch-wise checkpoint"),
            NetworkKind::Patchwise);
        const auto iw = load_checkpoint(
            require_path(c.paths.image_checkpoint, "--image-checkpoint", "image-wise checkpoint"),
            NetworkKind::Imagewise);
        const std::string image = require_path(c.paths.image, "--image", "PPM image to classify");
        const Prediction p = infer_image(make_classifier(pw, iw), read_ppm(image));
        j["image"] = image;
        j["class"] = p.label;
        j["class_name"] = kClassNames[static_cast<std::size_t>(p.label)];
        j["probabilities"] = p.probabilities;
    });
}

pn_status pn_eval(const pn_config* cfg, char** out_json) {
    return command(cfg, out_json, "eval", [](const RunConfig& c, json& j) {
        const DatasetManifest m =
            load_manifest(require_path(c.paths.manifest, "--manifest", "dataset manifest"));
        const auto pw = load_checkpoint(
            require_path(c.paths.patch_checkpoint, "--patch-checkpoint", "patch-wise checkpoint"),
            NetworkKind::Patchwise);
        Metrics metrics;
        if (c.paths.image_checkpoint.empty()) {
            j["stage"] = "patchwise";
            metrics = evaluate_patchwise(pw, m, Split::Val, checkpoint_stride(pw, c.geometry.stride));
        } else {
            j["stage"] = "imagewise";
            const auto iw = load_checkpoint(c.paths.image_checkpoint, NetworkKind::Imagewise);
            metrics = evaluate_imagewise(pw, iw, m, Split::Val);
        }
        j["split"] = "val";
        j["metrics"] = to_json(metrics);
    });
}

pn_status pn_classifier_open(const char* patch_checkpoint, const char* image_checkpoint,
                             pn_classifier** out) {
    return guarded([&] {
        need(patch_checkpoint, "patch_checkpoint");
        need(image_checkpoint, "image_checkpoint");
        need(out, "out");
        const auto pw = load_checkpoint(patch_checkpoint, NetworkKind::Patchwise);
        const auto iw = load_checkpoint(image_checkpoint, NetworkKind::Imagewise);
        auto h = std::make_unique<pn_classifier>();
        h->clf = make_classifier(pw, iw);
        *out = h.release();
    });
}

pn_status pn_classifier_predict(const pn_classifier* clf, const unsigned char* rgb, size_t width,
                                size_t height, int* label, float* probabilities) {
    return guarded([&] {
        need(clf, "classifier");
        need(rgb, "rgb");
        need(label, "label");
        require(width > 0 && height > 0, "image dimensions must be positive");
        Tensor img({3, height, width});
        const std::size_t plane = width * height;
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + i] = rgb[3 * i + ch] / 255.0f;
        const Prediction p = infer_image(clf->clf, img);
        *label = p.label;
        if (probabilities)
            for (std::size_t k = 0; k < kNumClasses; ++k) probabilities[k] = p.probabilities[k];
    });
}

const char* pn_class_name(int label) {
    if (label < 0 || label >= static_cast<int>(kNumClasses)) return nullptr;
    return kClassNames[static_cast<std::size_t>(label)];
}

void pn_classifier_free(pn_classifier* clf) { delete clf; }

}  // extern "C"
