#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "patchnet/data_io.hpp"
#include "patchnet/error.hpp"
#include "test_util.hpp"

using namespace patchnet;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

FormatDetail decode_detail(const std::vector<std::uint8_t>& b) {
    try {
        decode_ppm(b);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
        return e.detail();
    }
    FAIL("decode accepted bad input");
    return FormatDetail::None;
}

std::vector<ManifestRecord> records(std::size_t per_class) {
    std::vector<ManifestRecord> r;
    for (int c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < per_class; ++i)
            r.push_back({"c" + std::to_string(c) + "_" + std::to_string(i) + ".ppm", c, Split::Train});
    return r;
}

}  // namespace

TEST_CASE("2x2 red PPM") {
    std::vector<std::uint8_t> b = bytes_of("P6\n2 2\n255\n");
    for (int i = 0; i < 4; ++i) b.insert(b.end(), {255, 0, 0});
    const Tensor t = decode_ppm(b);
    REQUIRE(t.shape() == Shape{3, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(t[i] == 1.0f);
        CHECK(t[4 + i] == 0.0f);
        CHECK(t[8 + i] == 0.0f);
    }
    CHECK(encode_ppm(t) == b);
}

TEST_CASE("PPM header comments and whitespace") {
    std::vector<std::uint8_t> b = bytes_of("P6 # made by hand\n# another\n 3\t1\n255\n");
    b.insert(b.end(), {10, 20, 30, 40, 50, 60, 70, 80, 90});
    const Tensor t = decode_ppm(b);
    REQUIRE(t.shape() == Shape{3, 1, 3});
    CHECK(t[0] == 10.0f / 255.0f);
    CHECK(t[3 + 1] == 50.0f / 255.0f);
    CHECK(decode_ppm(encode_ppm(t)) == t);
}

TEST_CASE("PPM round trip through a file") {
    const Tensor img = testutil::random_tensor({3, 7, 5}, 2, 0.0f, 1.0f);
    const std::string dir = testutil::scratch_dir("ppm");
    write_ppm(dir + "/x.ppm", img);
    const Tensor back = read_ppm(dir + "/x.ppm");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::fabs(back[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);
    CHECK(encode_ppm(back) == encode_ppm(img));
}

TEST_CASE("malformed PPMs") {
    std::vector<std::uint8_t> short_payload = bytes_of("P6\n2 2\n255\n");
    short_payload.resize(short_payload.size() + 11, 0);
    CHECK(decode_detail(short_payload) == FormatDetail::Truncated);
    CHECK(decode_detail(bytes_of("P3\n1 1\n255\n1 2 3")) == FormatDetail::BadMagic);
    CHECK(decode_detail(bytes_of("P6\n1 1\n65535\n\0\0\0\0\0\0")) == FormatDetail::BadMaxval);
    CHECK(decode_detail(bytes_of("P6\n1 x\n255\n")) == FormatDetail::BadHeader);
    try {
        read_ppm("/nonexistent/a.ppm");
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
}

TEST_CASE("normalization statistics") {
    {
        const Tensor flat[] = {Tensor({3, 4, 4}, 0.5f)};
        const NormStats s = compute_norm_stats(flat);
        for (int c = 0; c < 3; ++c) {
            CHECK(s.mean[c] == doctest::Approx(0.5));
            CHECK(s.std[c] == kStdFloor);
        }
    }
    {
        const Tensor two[] = {Tensor({3, 2, 2}, 0.0f), Tensor({3, 2, 2}, 1.0f)};
        const NormStats s = compute_norm_stats(two);
        for (int c = 0; c < 3; ++c) {
            CHECK(s.mean[c] == doctest::Approx(0.5));
            CHECK(s.std[c] == doctest::Approx(0.5));
        }
    }
    std::vector<Tensor> imgs;
    for (std::uint64_t i = 0; i < 5; ++i) imgs.push_back(testutil::random_tensor({3, 6, 9}, i, 0.0f, 1.0f));
    const NormStats s = compute_norm_stats(imgs);
    for (std::size_t c = 0; c < 3; ++c) {
        // two-pass oracle
        double sum = 0.0, n = 0.0;
        for (const auto& t : imgs)
            for (std::size_t i = 0; i < 54; ++i) sum += t[c * 54 + i], n += 1.0;
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& t : imgs)
            for (std::size_t i = 0; i < 54; ++i) ss += (t[c * 54 + i] - mean) * (t[c * 54 + i] - mean);
        CHECK(std::fabs(s.mean[c] - mean) < 1e-6);
        CHECK(std::fabs(s.std[c] - std::sqrt(ss / n)) < 1e-6);
    }
}

TEST_CASE("stats use the train split only") {
    const std::string dir = testutil::scratch_dir("stats");
    write_ppm(dir + "/a.ppm", Tensor({3, 2, 2}, 0.2f));
    write_ppm(dir + "/b.ppm", Tensor({3, 2, 2}, 1.0f));
    DatasetManifest m;
    m.base_dir = dir;
    m.records = {{"a.ppm", 0, Split::Train}, {"b.ppm", 1, Split::Val}};
    const NormStats s = compute_norm_stats(m);
    CHECK(s.mean[0] == doctest::Approx(51.0 / 255.0));
}

TEST_CASE("manifest JSON round trip") {
    DatasetManifest m;
    m.records = {{"a.ppm", 0, Split::Train}, {"sub/b.ppm", 3, Split::Val}};
    m.stats = NormStats{{0.1f, 0.2f, 0.3f}, {0.5f, 0.6f, 0.7f}};
    const DatasetManifest back = manifest_from_json(manifest_to_json(m), "/data");
    CHECK(back.records == m.records);
    CHECK(back.stats == m.stats);
    CHECK(back.resolve(back.records[1]) == "/data/sub/b.ppm");
    CHECK(back.split(Split::Val).size() == 1);
    CHECK_THROWS_AS(manifest_from_json("{}", "."), Error);
    CHECK_THROWS_AS(manifest_from_json(R"([{"path":"a","label":7,"split":"train"}])", ".").validate(false),
                    Error);
    CHECK_THROWS_AS(manifest_from_json(R"([{"path":"a","label":1,"split":"test"}])", "."), Error);
}

TEST_CASE("stratified split") {
    const auto split = split_manifest(records(10), 0.25, 3);
    std::map<int, int> val;
    std::size_t total = 0;
    for (const auto& r : split)
        if (r.split == Split::Val) ++val[r.label], ++total;
    CHECK(total == 10);
    for (int c = 0; c < 4; ++c) {
        CHECK(val[c] >= 2);
        CHECK(val[c] <= 3);
    }
    CHECK(split_manifest(records(10), 0.25, 3) == split);
    CHECK_FALSE(split_manifest(records(10), 0.25, 4) == split);
    CHECK_THROWS_AS(split_manifest(records(10), 0.0, 3), Error);
    CHECK_THROWS_AS(split_manifest(records(10), 1.0, 3), Error);
    auto thin = records(3);
    thin.erase(thin.begin(), thin.begin() + 2);  // class 0 left with one image
    CHECK_THROWS_AS(split_manifest(thin, 0.25, 3), Error);
    // every class keeps at least one image on each side
    for (const auto& r : split_manifest(records(2), 0.9, 1)) CHECK((r.label >= 0 && r.label < 4));
    std::map<int, int> tr;
    for (const auto& r : split_manifest(records(2), 0.9, 1)) tr[r.label] += r.split == Split::Train;
    for (int c = 0; c < 4; ++c) CHECK(tr[c] == 1);
}

TEST_CASE("synthetic data is reproducible") {
    const auto a = synth_dataset(2, 96, 64, 5);
    const auto b = synth_dataset(2, 96, 64, 5);
    const auto c = synth_dataset(2, 96, 64, 6);
    REQUIRE(a.size() == 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image.label == static_cast<int>(i / 2));
        CHECK(a[i].image.pixels.shape() == Shape{3, 64, 96});
        CHECK(bitwise_equal(a[i].image.pixels, b[i].image.pixels));
        CHECK_FALSE(bitwise_equal(a[i].image.pixels, c[i].image.pixels));
        for (float v : a[i].image.pixels.values()) CHECK((v >= 0.0f && v <= 1.0f));
    }
    CHECK(a[0].image.id == "class0_000");
    CHECK_THROWS_AS(synth_dataset(1, 16, 16, 1), Error);
}

TEST_CASE("blob counts follow the class densities") {
    const SynthParams p = default_synth_params();
    const std::size_t n = 100, w = 128, h = 128;
    const auto set = synth_dataset(n, w, h, 21);
    for (int c = 0; c < 4; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(set[c * n + i].blob_count);
        const double expected = p.classes[c].density * w * h / 1e4;
        INFO("class " << c);
        CHECK(std::fabs(sum / n - expected) <= 0.1 * expected);
    }
}

TEST_CASE("patch stream") {
    const std::string dir = testutil::scratch_dir("stream");
    const auto imgs = synth_dataset(4, 256, 192, 3);
    DatasetManifest m = write_synth_dataset(dir, imgs, 0.25, 3);
    CHECK(load_manifest(dir + "/manifest.json").records == m.records);

    PatchStream overlap(m, Split::Train, 64, 32, PatchMode::Overlap);
    CHECK(overlap.patches_per_image() == 35);
    std::size_t count = 0;
    std::string parent;
    int label = -1;
    while (auto s = overlap.next()) {
        CHECK(s->patch.shape() == Shape{3, 64, 64});
        if (count % 35 == 0) {
            parent = s->parent;
            label = s->label;
        }
        CHECK(s->parent == parent);
        CHECK(s->label == label);
        ++count;
    }
    CHECK(count == 35 * m.split(Split::Train).size());

    PatchStream tile(m, Split::Val, 64, 32, PatchMode::Tile);
    CHECK(tile.patches_per_image() == 12);
    count = 0;
    while (tile.next()) ++count;
    CHECK(count == 12 * m.split(Split::Val).size());

    // with stats, patches come out normalized
    m.stats = NormStats{{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}};
    PatchStream norm(m, Split::Val, 64, 64, PatchMode::Tile);
    const auto first = norm.next();
    const Tensor raw = read_ppm(m.resolve(m.split(Split::Val).front()));
    CHECK((*first).patch[0] == doctest::Approx((raw[0] - 0.5f) / 0.25f));
}

TEST_CASE("unwritable synth directory is an I/O error") {
    const auto imgs = synth_dataset(2, 64, 64, 1);
    try {
        write_synth_dataset("/proc/nope/data", imgs, 0.25, 1);
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
}
