#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchnet/c_api.h"

using nlohmann::json;

namespace {

struct Config {
    pn_config* cfg = nullptr;
    Config() { REQUIRE(pn_config_new(&cfg) == PN_OK); }
    ~Config() { pn_config_free(cfg); }
    void set(const char* key, const std::string& value) {
        INFO(key << " = " << value);
        REQUIRE(pn_config_set(cfg, key, value.c_str()) == PN_OK);
    }
};

using Command = pn_status (*)(const pn_config*, char**);

json run(Command cmd, const pn_config* cfg, pn_status expect = PN_OK) {
    char* out = nullptr;
    const pn_status st = cmd(cfg, &out);
    INFO("error: " << pn_last_error());
    CHECK(st == expect);
    json j;
    if (out) {
        j = json::parse(out);
        pn_string_free(out);
    }
    return j;
}

std::string scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("patchnet_capi_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// Tiny pipeline: 128x96 images, 32 px windows, a couple of epochs.
void small_pipeline(Config& c, const std::string& dir) {
    c.set("geometry.image_w", "128");
    c.set("geometry.image_h", "96");
    c.set("geometry.window", "32");
    c.set("geometry.stride", "16");
    c.set("model.base_width", "4");
    c.set("model.feature_depth", "4");
    c.set("model.head_depth", "8");
    c.set("trainer.batch_size", "16");
    c.set("trainer.max_epochs", "2");
    c.set("synth.n_per_class", "4");
    c.set("seed", "9");
    c.set("paths.out", dir);
}

}  // namespace

TEST_CASE("versions and class names") {
    CHECK(std::string(pn_version()).size() > 0);
    CHECK(pn_checkpoint_format_version() == 1);
    CHECK(std::string(pn_class_name(0)) == "normal tissue");
    CHECK(std::string(pn_class_name(3)) == "invasive carcinoma");
}

TEST_CASE("config keys") {
    Config c;
    c.set("trainer.lr", "0.05");
    c.set("paths.manifest", "/data/m.json");
    char* out = nullptr;
    REQUIRE(pn_config_json(c.cfg, &out) == PN_OK);
    const json j = json::parse(out);
    pn_string_free(out);
    CHECK(j["trainer"]["lr"].get<double>() == 0.05);
    CHECK(j["paths"]["manifest"] == "/data/m.json");

    CHECK(pn_config_set(c.cfg, "trainer.nope", "1") == PN_ERR_CONFIG);
    CHECK(std::string(pn_last_error()).find("trainer.nope") != std::string::npos);
    CHECK(pn_config_set(c.cfg, "geometry.window", "\"big\"") == PN_ERR_CONFIG);
    CHECK(pn_config_load(c.cfg, "/nonexistent/cfg.json") == PN_ERR_IO);
    CHECK(pn_config_new(nullptr) != PN_OK);
}

TEST_CASE("geometry and receptive field reports") {
    Config c;
    const json g = run(pn_geometry, c.cfg);
    CHECK(g["command"] == "geometry");
    CHECK(g["patch_count"]["total"] == 35);
    CHECK(g.contains("config"));
    CHECK(g["versions"]["checkpoint"] == 1);

    const json rf = run(pn_rf, c.cfg);
    CHECK(rf["combined"]["r"] == 252);
    CHECK(rf["patchwise"]["r"] == 132);
    CHECK(rf["patchwise"]["jump"] == 8);

    c.set("geometry.stride", "512");
    CHECK(run(pn_geometry, c.cfg)["patch_count"]["total"] == 12);
    c.set("geometry.window", "4096");
    run(pn_geometry, c.cfg, PN_ERR_CONFIG);
}

TEST_CASE("status codes for missing inputs") {
    Config c;
    run(pn_stats, c.cfg, PN_ERR_CONFIG);
    run(pn_train_image, c.cfg, PN_ERR_CONFIG);
    CHECK(std::string(pn_last_error()).find("usage") != std::string::npos);
    c.set("paths.manifest", "/nonexistent/manifest.json");
    run(pn_stats, c.cfg, PN_ERR_IO);

    const std::string dir = scratch("bad");
    std::ofstream(dir + "/junk.ckpt") << "not a checkpoint at all";
    pn_classifier* clf = nullptr;
    CHECK(pn_classifier_open((dir + "/junk.ckpt").c_str(), (dir + "/junk.ckpt").c_str(), &clf) ==
          PN_ERR_CHECKPOINT);
    CHECK(clf == nullptr);
}

TEST_CASE("full pipeline through the C API") {
    const std::string dir = scratch("pipeline");
    Config c;
    small_pipeline(c, dir);

    const json synth = run(pn_synth, c.cfg);
    CHECK(synth["files"] == 16);
    c.set("paths.manifest", dir + "/manifest.json");
    const json stats = run(pn_stats, c.cfg);
    CHECK(stats["stats"]["mean"].size() == 3);

    std::vector<std::string> lines;
    pn_set_log([](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); },
               &lines);
    const json tp = run(pn_train_patch, c.cfg);
    pn_set_log(nullptr, nullptr);
    CHECK(lines.size() == 2);
    CHECK(tp["metrics"]["epochs"].size() == 2);
    CHECK(std::filesystem::exists(dir + "/patchwise.ckpt"));
    CHECK(std::filesystem::exists(dir + "/patchwise_metrics.json"));

    c.set("paths.patch_checkpoint", dir + "/patchwise.ckpt");
    const json ep = run(pn_eval, c.cfg);
    CHECK(ep["stage"] == "patchwise");
    CHECK(ep["metrics"]["accuracy"].get<double>() == tp["best_val_accuracy"].get<double>());

    // train-image with the wrong C is a config error
    c.set("model.feature_depth", "5");
    run(pn_train_image, c.cfg, PN_ERR_CONFIG);
    c.set("model.feature_depth", "4");
    const json ti = run(pn_train_image, c.cfg);
    CHECK(ti["checkpoint"] == dir + "/imagewise.ckpt");

    c.set("paths.image_checkpoint", dir + "/imagewise.ckpt");
    const json ei = run(pn_eval, c.cfg);
    CHECK(ei["stage"] == "imagewise");
    CHECK(ei["metrics"]["accuracy"].get<double>() == ti["best_val_accuracy"].get<double>());

    c.set("paths.image", dir + "/class2_001.ppm");
    const json inf = run(pn_infer, c.cfg);
    double sum = 0.0;
    for (const auto& p : inf["probabilities"]) sum += p.get<double>();
    CHECK(std::fabs(sum - 1.0) < 1e-5);
    CHECK(inf["class_name"] == pn_class_name(inf["class"].get<int>()));

    // same image through the handle
    pn_classifier* clf = nullptr;
    REQUIRE(pn_classifier_open((dir + "/patchwise.ckpt").c_str(), (dir + "/imagewise.ckpt").c_str(), &clf) ==
            PN_OK);
    std::ifstream f(dir + "/class2_001.ppm", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), {});
    const std::vector<unsigned char> rgb(bytes.end() - 128 * 96 * 3, bytes.end());
    int label = -1;
    float probs[4];
    REQUIRE(pn_classifier_predict(clf, rgb.data(), 128, 96, &label, probs) == PN_OK);
    CHECK(label == inf["class"].get<int>());
    for (int k = 0; k < 4; ++k) CHECK(probs[k] == inf["probabilities"][k].get<float>());
    CHECK(pn_classifier_predict(clf, rgb.data(), 100, 96, &label, probs) != PN_OK);
    pn_classifier_free(clf);

    // swapped checkpoints are rejected
    CHECK(pn_classifier_open((dir + "/imagewise.ckpt").c_str(), (dir + "/patchwise.ckpt").c_str(), &clf) ==
          PN_ERR_CHECKPOINT);
}
