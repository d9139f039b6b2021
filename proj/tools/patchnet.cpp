// patchnet command-line front end. Reports go to stdout as JSON, progress and
// errors to stderr. Exit codes: 0 ok, 1 internal, 2 config, 3 I/O, 4 checkpoint.

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchnet/c_api.h"

namespace {

struct Flag {
    const char* name;
    const char* key;
    const char* help;
};

const Flag kFlags[] = {
    {"--seed", "seed", "RNG seed"},
    {"--window", "geometry.window", "patch size k"},
    {"--stride", "geometry.stride", "patch stride s"},
    {"--image-w", "geometry.image_w", "image width"},
    {"--image-h", "geometry.image_h", "image height"},
    {"--base-width", "model.base_width", "patch-wise base width B"},
    {"--feature-depth", "model.feature_depth", "feature depth C"},
    {"--head-depth", "model.head_depth", "image-wise head depth D"},
    {"--epochs", "trainer.max_epochs", "maximum epochs"},
    {"--batch-size", "trainer.batch_size", "minibatch size"},
    {"--lr", "trainer.lr", "learning rate"},
    {"--patience", "trainer.patience", "early-stopping patience"},
    {"--n-per-class", "synth.n_per_class", "synthetic images per class"},
    {"--val-fraction", "synth.val_fraction", "validation fraction"},
    {"--manifest", "paths.manifest", "dataset manifest"},
    {"--patch-checkpoint", "paths.patch_checkpoint", "patch-wise checkpoint"},
    {"--image-checkpoint", "paths.image_checkpoint", "image-wise checkpoint"},
    {"--out", "paths.out", "output directory"},
    {"--image", "paths.image", "PPM image"},
    {"--spec", "paths.spec", "layer stack JSON for rf"},
    {"--threads", "threads", "worker threads (results are identical for any count)"},
};

using Command = pn_status (*)(const pn_config*, char**);

void to_stderr(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

int fail_with(pn_status st, const std::string& context) {
    std::fprintf(stderr, "error: %s%s\n", context.c_str(), pn_last_error());
    return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage patch-wise / image-wise image classifier"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");
    std::map<std::string, std::string> values;
    std::vector<std::pair<const Flag*, CLI::Option*>> options;
    for (const Flag& f : kFlags) options.emplace_back(&f, app.add_option(f.name, values[f.key], f.help));

    const std::pair<const char*, Command> commands[] = {
        {"geometry", pn_geometry},       {"rf", pn_rf},
        {"synth", pn_synth},             {"stats", pn_stats},
        {"train-patch", pn_train_patch}, {"train-image", pn_train_image},
        {"infer", pn_infer},             {"eval", pn_eval},
    };
    const std::map<std::string, std::string> help = {
        {"geometry", "sliding-window patch grid report"},
        {"rf", "receptive-field table of the conv stacks"},
        {"synth", "write a synthetic four-class dataset"},
        {"stats", "compute normalization stats into the manifest"},
        {"train-patch", "train the patch-wise network"},
        {"train-image", "train the image-wise network on frozen patch features"},
        {"infer", "classify one image"},
        {"eval", "validation metrics of trained checkpoints"},
    };
    Command chosen = nullptr;
    for (const auto& [name, fn] : commands) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->callback([&chosen, fn = fn] { chosen = fn; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    pn_set_log(to_stderr, nullptr);
    pn_config* cfg = nullptr;
    if (pn_status st = pn_config_new(&cfg); st != PN_OK) return fail_with(st, "");
    if (!config_path.empty())
        if (pn_status st = pn_config_load(cfg, config_path.c_str()); st != PN_OK) {
            pn_config_free(cfg);
            return fail_with(st, "");
        }
    for (const auto& [flag, opt] : options) {
        if (opt->count() == 0) continue;
        if (pn_status st = pn_config_set(cfg, flag->key, values[flag->key].c_str()); st != PN_OK) {
            pn_config_free(cfg);
            return fail_with(st, std::string(flag->name) + ": ");
        }
    }

    char* out = nullptr;
    const pn_status st = chosen(cfg, &out);
    pn_config_free(cfg);
    if (st != PN_OK) return fail_with(st, "");
    std::printf("%s\n", out);
    pn_string_free(out);
    return 0;
}
