#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixture.hpp"
#include "patchnet/error.hpp"
#include "patchnet/trainer.hpp"

using namespace patchnet;

namespace {

const PatchwiseSetup kSetup{32, 16, 4, 4};

TrainConfig small_config(std::size_t epochs, Stage stage) {
    TrainConfig c;
    c.batch_size = 16;
    c.max_epochs = epochs;
    c.patience = epochs;
    c.seed = 5;
    c.stage = stage;
    return c;
}

struct Fixture {
    DatasetManifest manifest = fixture::small_dataset("trainer", 10);
    TrainResult pw = train_patchwise(manifest, kSetup, small_config(4, Stage::Patchwise));
};

Fixture& shared() {
    static Fixture f;
    return f;
}

double mean(std::span<const EpochRecord> r, std::size_t from, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = from; i < from + n; ++i) s += r[i].train_loss;
    return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("sgd_step") {
    Tensor w({1}, 1.0f), g({1}, 0.5f), v({1});
    sgd_step(w, g, v, 0.1, 0.0);
    CHECK(w[0] == doctest::Approx(0.95));

    Tensor w2({1}), g2({1}, 1.0f), v2({1});
    sgd_step(w2, g2, v2, 0.1, 0.9);
    CHECK(v2[0] == doctest::Approx(1.0));
    CHECK(w2[0] == doctest::Approx(-0.1));
    sgd_step(w2, g2, v2, 0.1, 0.9);
    CHECK(v2[0] == doctest::Approx(1.9));
    CHECK(w2[0] == doctest::Approx(-0.29));

    Tensor w3 = testutil::random_tensor({4, 3}, 1), z({4, 3}), v3({4, 3});
    const Tensor before = w3;
    sgd_step(w3, z, v3, 0.1, 0.9);
    CHECK(bitwise_equal(w3, before));
    CHECK_THROWS_AS(sgd_step(w3, Tensor({3, 4}), v3, 0.1, 0.9), Error);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.patience = 0;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("early stopping traces") {
    const std::vector<double> a{0.5, 0.6, 0.6, 0.6};
    CHECK_FALSE(early_stop(std::span(a).first(3), 2).stop);
    const EarlyStop sa = early_stop(a, 2);
    CHECK(sa.stop);
    CHECK(sa.best_epoch == 1);

    std::vector<double> up;
    for (int i = 0; i < 30; ++i) {
        up.push_back(0.1 + 0.01 * i);
        CHECK_FALSE(early_stop(up, 1).stop);
    }
    CHECK(early_stop(up, 1).best_epoch == 29);

    const std::vector<double> b{0.7, 0.6, 0.8};
    const EarlyStop sb = early_stop(b, 2);
    CHECK_FALSE(sb.stop);
    CHECK(sb.best_epoch == 2);
}

TEST_CASE("metrics") {
    Metrics perfect;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 3; ++i) perfect.add(c, c);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t p = 0; p < 4; ++p) CHECK(perfect.confusion[t][p] == (t == p ? 3u : 0u));
    CHECK(perfect.accuracy() == 1.0);

    Metrics constant;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 3; ++i) constant.add(c, 0);
    CHECK(constant.accuracy() == 0.25);
    CHECK(constant.precision(0) == 0.25);
    CHECK(constant.recall(0) == 1.0);
    CHECK(constant.precision(1) == 0.0);
    CHECK(constant.recall(2) == 0.0);
    CHECK(Metrics{}.accuracy() == 0.0);
    CHECK_THROWS_AS(constant.add(4, 0), Error);

    Metrics m;
    m.add(0, 1);
    m.add(2, 2);
    m.add(3, 1);
    const auto j = to_json(m);
    CHECK(j["accuracy"].get<double>() == doctest::Approx(1.0 / 3.0));
    CHECK(j["confusion"][0][1] == 1);
}

TEST_CASE("patch-wise training") {
    const auto& f = shared();
    const auto& hist = f.pw.metrics.epochs;
    REQUIRE(hist.size() == 4);
    CHECK(mean(hist, 1, 3) < mean(hist, 0, 3));
    CHECK(f.pw.checkpoint.kind() == NetworkKind::Patchwise);
    CHECK(f.pw.checkpoint.meta.window == 32);
    CHECK(f.pw.checkpoint.meta.norm == f.manifest.stats);

    // the stored best accuracy is what evaluation recomputes after reload
    const std::string dir = testutil::scratch_dir("trainer_ckpt");
    save_checkpoint(dir + "/pw.ckpt", f.pw.checkpoint);
    const Checkpoint back = load_checkpoint(dir + "/pw.ckpt", NetworkKind::Patchwise);
    const Metrics re = evaluate_patchwise(back, f.manifest, Split::Val, kSetup.stride);
    CHECK(re.accuracy() == f.pw.checkpoint.meta.best_val_accuracy);
    CHECK(re.confusion == f.pw.metrics.confusion);

    std::size_t per_class[4] = {};
    for (const auto& r : f.manifest.split(Split::Val)) per_class[r.label] += 35;
    for (std::size_t t = 0; t < 4; ++t)
        CHECK(std::accumulate(re.confusion[t].begin(), re.confusion[t].end(), std::uint64_t{0}) ==
              per_class[t]);
}

TEST_CASE("patch-wise training is reproducible and unaffected by extra evaluation") {
    const auto& f = shared();
    const auto again = train_patchwise(f.manifest, kSetup, small_config(4, Stage::Patchwise), {},
                                       [&](const EpochRecord&) {
                                           evaluate_patchwise(f.pw.checkpoint, f.manifest, Split::Val, 16);
                                       });
    CHECK(serialize_checkpoint(again.checkpoint) == serialize_checkpoint(f.pw.checkpoint));
    CHECK(to_json(again.metrics) == to_json(f.pw.metrics));
}

TEST_CASE("patch-wise training rejects a manifest without stats") {
    DatasetManifest m = shared().manifest;
    m.stats.reset();
    CHECK_THROWS_AS(train_patchwise(m, kSetup, small_config(1, Stage::Patchwise)), Error);
}

TEST_CASE("image-wise training") {
    const auto& f = shared();
    const auto before = serialize_checkpoint(f.pw.checkpoint);
    const TrainResult iw = train_imagewise(f.manifest, f.pw.checkpoint, 8, small_config(6, Stage::Imagewise));
    CHECK(serialize_checkpoint(f.pw.checkpoint) == before);
    CHECK(iw.checkpoint.kind() == NetworkKind::Imagewise);
    CHECK(iw.checkpoint.spec.n_patches == 12);
    CHECK(iw.checkpoint.spec.input_channels == 48);
    REQUIRE(iw.metrics.epochs.size() == 6);
    CHECK(mean(iw.metrics.epochs, 3, 3) < mean(iw.metrics.epochs, 0, 3));

    const Metrics re = evaluate_imagewise(f.pw.checkpoint, iw.checkpoint, f.manifest, Split::Val);
    CHECK(re.accuracy() == iw.checkpoint.meta.best_val_accuracy);
    CHECK(re.total() == f.manifest.split(Split::Val).size());

    const TrainResult again = train_imagewise(f.manifest, f.pw.checkpoint, 8, small_config(6, Stage::Imagewise));
    CHECK(serialize_checkpoint(again.checkpoint) == serialize_checkpoint(iw.checkpoint));

    CHECK_THROWS_AS(train_imagewise(f.manifest, iw.checkpoint, 8, small_config(1, Stage::Imagewise)), Error);
}

TEST_CASE("dropout off fits the training set at least as well") {
    const auto& f = shared();
    TrainConfig on = small_config(15, Stage::Imagewise);
    TrainConfig off = on;
    off.dropout_active = false;
    const auto a = train_imagewise(f.manifest, f.pw.checkpoint, 8, on);
    const auto b = train_imagewise(f.manifest, f.pw.checkpoint, 8, off);
    const double acc_on = evaluate_imagewise(f.pw.checkpoint, a.checkpoint, f.manifest, Split::Train).accuracy();
    const double acc_off = evaluate_imagewise(f.pw.checkpoint, b.checkpoint, f.manifest, Split::Train).accuracy();
    INFO("on " << acc_on << " off " << acc_off);
    CHECK(acc_off >= acc_on);
    CHECK(mean(b.metrics.epochs, 12, 3) < mean(a.metrics.epochs, 12, 3));
}

TEST_CASE("untrained image-wise network starts near ln 4") {
    const auto spec = canonical_imagewise_spec(12, 16, 64);
    const Tensor x = testutil::random_tensor({64, 192, 8, 8}, 3, 0.0f, 2.0f);
    std::vector<int> labels(64);
    for (std::size_t i = 0; i < 64; ++i) labels[i] = static_cast<int>(i % 4);
    CHECK(std::fabs(initial_loss(spec, 2, x, labels) - std::log(4.0)) < 0.2);
}
