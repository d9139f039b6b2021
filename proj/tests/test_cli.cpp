#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "test_util.hpp"

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const std::string cmd = std::string(PATCHNET_CLI) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    Result r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace

TEST_CASE("geometry subcommand") {
    const Result r = cli("geometry");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["patch_count"]["total"] == 35);
    CHECK(j["config"]["geometry"]["window"] == 512);
    CHECK(j["versions"].contains("patchnet"));
    CHECK(j["versions"]["checkpoint"] == 1);

    const auto tiles = nlohmann::json::parse(cli("geometry --stride 512").out);
    CHECK(tiles["patch_count"]["total"] == 12);
    const auto desk = nlohmann::json::parse(cli("--image-w 256 --image-h 192 --window 64 --stride 32 geometry").out);
    CHECK(desk["patch_count"]["total"] == 35);
}

TEST_CASE("rf subcommand") {
    const auto j = nlohmann::json::parse(cli("rf").out);
    CHECK(j["combined"]["r"] == 252);
    CHECK(j["patchwise"]["r"] == 132);
}

TEST_CASE("exit codes") {
    CHECK(cli("geometry --window 4096").code == 2);
    CHECK(cli("no-such-command").code == 2);
    CHECK(cli("geometry --bogus-flag").code == 2);
    CHECK(cli("train-image").code == 2);
    CHECK(cli("stats --manifest /nonexistent/manifest.json").code == 3);
    const std::string dir = testutil::scratch_dir("cli");
    const std::string junk = dir + "/junk.ckpt";
    FILE* f = std::fopen(junk.c_str(), "wb");
    std::fputs("HPCKxxxxxxxxxxxxxxxx", f);
    std::fclose(f);
    CHECK(cli("infer --patch-checkpoint " + junk + " --image-checkpoint " + junk + " --image x.ppm").code == 4);
}

TEST_CASE("config file and flag overrides") {
    const std::string dir = testutil::scratch_dir("cli_cfg");
    const std::string path = dir + "/c.json";
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs(R"({"geometry": {"image_w": 256, "image_h": 192, "window": 64, "stride": 64}})", f);
    std::fclose(f);
    auto j = nlohmann::json::parse(cli("--config " + path + " geometry").out);
    CHECK(j["patch_count"]["total"] == 12);
    j = nlohmann::json::parse(cli("--config " + path + " --stride 32 geometry").out);
    CHECK(j["patch_count"]["total"] == 35);
    CHECK(j["config"]["geometry"]["stride"] == 32);

}
