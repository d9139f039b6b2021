#include "patchnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchnet/classifier.hpp"
#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/ops.hpp"

namespace patchnet {

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::Config, "learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Config, "momentum must be in [0, 1)");
    if (patience < 1) fail(ErrorKind::Config, "patience must be >= 1");
    if (batch_size < 2)
        fail(ErrorKind::Config, "batch size must be >= 2 (batchnorm needs a batch variance)");
    if (max_epochs < 1) fail(ErrorKind::Config, "max_epochs must be >= 1");
    if (!(dropout >= 0.0f && dropout < 1.0f)) fail(ErrorKind::Config, "dropout rate must be in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"momentum", c.momentum},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"seed", c.seed},
            {"dropout", c.dropout},
            {"dropout_active", c.dropout_active},
            {"stage", c.stage == Stage::Patchwise ? "patchwise" : "imagewise"}};
}

void sgd_step(Tensor& weight, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
    if (grad.shape() != weight.shape() || velocity.shape() != weight.shape())
        fail(ErrorKind::InvalidArgument, "sgd_step: weight " + shape_str(weight.shape()) + ", grad " +
                                             shape_str(grad.shape()) + ", velocity " +
                                             shape_str(velocity.shape()) + " differ");
    const auto mu = static_cast<float>(momentum);
    const auto eta = static_cast<float>(lr);
    for (std::size_t i = 0; i < weight.size(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i];
        weight[i] -= eta * velocity[i];
    }
}

// ---- metrics ----------------------------------------------------------------

void Metrics::add(int truth, int predicted) {
    require(truth >= 0 && truth < static_cast<int>(kNumClasses) && predicted >= 0 &&
                predicted < static_cast<int>(kNumClasses),
            "Metrics::add: class index out of range");
    ++confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::uint64_t Metrics::total() const {
    std::uint64_t t = 0;
    for (const auto& row : confusion)
        for (auto v : row) t += v;
    return t;
}

double Metrics::accuracy() const {
    const std::uint64_t t = total();
    if (t == 0) return 0.0;
    std::uint64_t diag = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) diag += confusion[k][k];
    return static_cast<double>(diag) / static_cast<double>(t);
}

double Metrics::precision(std::size_t k) const {
    std::uint64_t col = 0;
    for (std::size_t t = 0; t < kNumClasses; ++t) col += confusion[t][k];
    return col == 0 ? 0.0 : static_cast<double>(confusion[k][k]) / static_cast<double>(col);
}

double Metrics::recall(std::size_t k) const {
    std::uint64_t row = 0;
    for (auto v : confusion[k]) row += v;
    return row == 0 ? 0.0 : static_cast<double>(confusion[k][k]) / static_cast<double>(row);
}

nlohmann::json to_json(const Metrics& m) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : m.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_acc", e.val_acc}});
    nlohmann::json precision = nlohmann::json::array(), recall = nlohmann::json::array();
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        precision.push_back(m.precision(k));
        recall.push_back(m.recall(k));
    }
    return {{"epochs", epochs},
            {"confusion", m.confusion},
            {"accuracy", m.accuracy()},
            {"per_class", {{"precision", precision}, {"recall", recall}}}};
}

EarlyStop early_stop(std::span<const double> history, std::size_t patience) {
    EarlyStop r;
    if (history.empty()) return r;
    double best = history[0];
    std::size_t since = 0;
    for (std::size_t e = 1; e < history.size(); ++e) {
        if (history[e] > best) {
            best = history[e];
            r.best_epoch = e;
            since = 0;
        } else {
            ++since;
        }
    }
    r.stop = since >= patience;
    return r;
}

// ---- shared pieces ----------------------------------------------------------

namespace {

struct LabeledTensors {
    std::vector<Tensor> items;
    std::vector<int> labels;
};

LabeledTensors load_split(const DatasetManifest& manifest, Split split, const NormStats& norm) {
    LabeledTensors out;
    for (const auto& r : manifest.split(split)) {
        Tensor img = read_ppm(manifest.resolve(r));
        normalize(img, norm);
        out.items.push_back(std::move(img));
        out.labels.push_back(r.label);
    }
    if (out.items.empty())
        fail(ErrorKind::Config, std::string("manifest has an empty ") + split_name(split) + " split");
    return out;
}

// Batch boundaries over n samples; a trailing batch of one sample is merged
// into its predecessor since batchnorm cannot train on it.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    RngCursor cur(Rng(seed).split("shuffle").split(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[cur.below(i)]);
    return p;
}

// One SGD step on a batch; returns the batch mean loss.
double train_step(Model& model, const Tensor& inputs, std::vector<int> labels,
                  const ForwardOptions& options, std::map<std::string, Tensor>& velocity,
                  const TrainConfig& config) {
    Tape tape;
    ParamLeaves leaves;
    const Tape::Id logits = model.logits(tape, tape.leaf(inputs, false), options, &leaves);
    const Tape::Id loss = ag::cross_entropy(tape, logits, std::move(labels));
    tape.backward(loss);
    for (auto& entry : model.params().entries()) {
        if (!entry.trainable) continue;
        const Tensor& g = tape.grad(leaves.at(entry.name));
        if (g.empty()) continue;
        auto [it, fresh] = velocity.try_emplace(entry.name, entry.value.shape());
        sgd_step(entry.value, g, it->second, config.lr, config.momentum);
    }
    return tape.value(loss)[0];
}

struct PatchRef {
    std::size_t image;
    geometry::PatchOrigin origin;
};

std::vector<PatchRef> patch_refs(const std::vector<Tensor>& images, std::size_t window,
                                 std::size_t stride) {
    std::vector<PatchRef> refs;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto grid = geometry::patch_count(images[i].dim(2), images[i].dim(1), window, stride);
        for (const auto& o : geometry::patch_coords(grid)) refs.push_back({i, o});
    }
    return refs;
}

// Eval-mode patch classification, one forward per image.
Metrics classify_patches(const Model& model, const LabeledTensors& data, std::size_t window,
                         std::size_t stride) {
    Metrics m;
    for (std::size_t i = 0; i < data.items.size(); ++i) {
        const Tensor& img = data.items[i];
        const auto grid = geometry::patch_count(img.dim(2), img.dim(1), window, stride);
        std::vector<Tensor> patches;
        for (const auto& o : geometry::patch_coords(grid))
            patches.push_back(geometry::extract_patch(img, o.x, o.y, window));
        const Tensor logits = model.logits(ops::stack_batch(patches));
        for (std::size_t n = 0; n < logits.dim(0); ++n)
            m.add(data.labels[i],
                  argmax(std::span<const float>(logits.data() + n * kNumClasses, kNumClasses)));
    }
    return m;
}

int classify_stack(const Model& imagewise, const Tensor& stacked) {
    const Tensor batch = ops::stack_batch(std::span<const Tensor>(&stacked, 1));
    const Tensor prob = ops::softmax(imagewise.logits(batch));
    return argmax(prob.values());
}

nlohmann::json provenance(const TrainConfig& config, const nlohmann::json& run_config) {
    nlohmann::json j{{"train", to_json(config)}};
    if (!run_config.is_null()) j["run"] = run_config;
    return j;
}

}  // namespace

// ---- stage 1 ----------------------------------------------------------------

TrainResult train_patchwise(const DatasetManifest& manifest, const PatchwiseSetup& setup,
                            const TrainConfig& config, const nlohmann::json& run_config,
                            const EpochHook& hook) {
    config.validate();
    manifest.validate(true);
    if (!manifest.stats)
        fail(ErrorKind::Config, "manifest lacks normalization stats; run the stats command first");
    const NormStats norm = *manifest.stats;
    const LabeledTensors train = load_split(manifest, Split::Train, norm);
    const LabeledTensors val = load_split(manifest, Split::Val, norm);
    const auto refs = patch_refs(train.items, setup.window, setup.stride);

    const NetworkSpec spec = canonical_patchwise_spec(setup.base_width, setup.feature_depth);
    Model model(spec, init_params(spec, config.seed));
    if (setup.window % spec.downsampling() != 0)
        fail(ErrorKind::Config, "window " + std::to_string(setup.window) + " not divisible by " +
                                    std::to_string(spec.downsampling()));

    std::map<std::string, Tensor> velocity;
    ForwardOptions opt;
    opt.mode = ops::Mode::Train;
    opt.track_params = true;

    TrainResult result;
    result.checkpoint = Checkpoint{spec, model.params(), {}};
    std::vector<double> history;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const auto order = permutation(refs.size(), config.seed, epoch);
        double loss_sum = 0.0;
        for (const auto& [b0, b1] : batches(order.size(), config.batch_size)) {
            std::vector<Tensor> patches;
            std::vector<int> labels;
            for (std::size_t i = b0; i < b1; ++i) {
                const PatchRef& r = refs[order[i]];
                patches.push_back(geometry::extract_patch(train.items[r.image], r.origin.x,
                                                          r.origin.y, setup.window));
                labels.push_back(train.labels[r.image]);
            }
            loss_sum += train_step(model, ops::stack_batch(patches), std::move(labels), opt,
                                   velocity, config) *
                        static_cast<double>(b1 - b0);
        }
        const Metrics vm = classify_patches(model, val, setup.window, setup.stride);
        const EpochRecord rec{epoch, loss_sum / static_cast<double>(refs.size()), vm.accuracy()};
        result.metrics.epochs.push_back(rec);
        history.push_back(rec.val_acc);
        const EarlyStop es = early_stop(history, config.patience);
        if (es.best_epoch == epoch) {
            result.checkpoint.params = model.params();
            result.metrics.confusion = vm.confusion;
        }
        if (hook) hook(rec);
        if (es.stop) break;
    }
    const EarlyStop es = early_stop(history, config.patience);
    CheckpointMeta& meta = result.checkpoint.meta;
    meta.epoch = es.best_epoch;
    meta.best_val_accuracy = history[es.best_epoch];
    meta.seed = config.seed;
    meta.window = setup.window;
    meta.norm = norm;
    meta.config = provenance(config, run_config);
    meta.config["stride"] = setup.stride;
    return result;
}

// ---- stage 2 ----------------------------------------------------------------

TrainResult train_imagewise(const DatasetManifest& manifest, const Checkpoint& patchwise,
                            std::size_t head_depth, const TrainConfig& config,
                            const nlohmann::json& run_config, const EpochHook& hook) {
    config.validate();
    manifest.validate(true);
    if (patchwise.kind() != NetworkKind::Patchwise)
        fail(ErrorKind::Checkpoint, "image-wise training needs a patch-wise checkpoint",
             FormatDetail::KindMismatch);
    if (patchwise.meta.window == 0 || !patchwise.meta.norm)
        fail(ErrorKind::Checkpoint, "patch-wise checkpoint lacks window/normalization metadata",
             FormatDetail::BadHeader);
    const std::size_t window = patchwise.meta.window;
    const NormStats norm = *patchwise.meta.norm;
    const Model trunk(patchwise.spec, patchwise.params);

    LabeledTensors train = load_split(manifest, Split::Train, norm);
    LabeledTensors val = load_split(manifest, Split::Val, norm);
    const Tensor& first = train.items.front();
    const std::size_t n_patches =
        geometry::patch_count(first.dim(2), first.dim(1), window, window).total();
    for (auto* set : {&train, &val})
        for (Tensor& img : set->items) img = image_feature_stack(trunk, img, window, n_patches);

    NetworkSpec spec = canonical_imagewise_spec(n_patches, patchwise.spec.feature_depth, head_depth);
    for (auto& l : spec.layers)
        if (l.kind == LayerKind::Dropout) l.rate = config.dropout;
    NetworkSpec run_spec = spec;
    if (!config.dropout_active)
        for (auto& l : run_spec.layers)
            if (l.kind == LayerKind::Dropout) l.rate = 0.0f;
    Model model(run_spec, init_params(spec, config.seed));

    std::map<std::string, Tensor> velocity;
    ForwardOptions opt;
    opt.mode = ops::Mode::Train;
    opt.track_params = true;
    opt.dropout_rng = Rng(config.seed).split("dropout");

    TrainResult result;
    result.checkpoint = Checkpoint{spec, model.params(), {}};
    std::vector<double> history;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const auto order = permutation(train.items.size(), config.seed, epoch);
        double loss_sum = 0.0;
        for (const auto& [b0, b1] : batches(order.size(), config.batch_size)) {
            std::vector<Tensor> items;
            std::vector<int> labels;
            for (std::size_t i = b0; i < b1; ++i) {
                items.push_back(train.items[order[i]]);
                labels.push_back(train.labels[order[i]]);
            }
            opt.step = step++;
            loss_sum += train_step(model, ops::stack_batch(items), std::move(labels), opt, velocity,
                                   config) *
                        static_cast<double>(b1 - b0);
        }
        Metrics vm;
        for (std::size_t i = 0; i < val.items.size(); ++i)
            vm.add(val.labels[i], classify_stack(model, val.items[i]));
        const EpochRecord rec{epoch, loss_sum / static_cast<double>(train.items.size()),
                              vm.accuracy()};
        result.metrics.epochs.push_back(rec);
        history.push_back(rec.val_acc);
        const EarlyStop es = early_stop(history, config.patience);
        if (es.best_epoch == epoch) {
            result.checkpoint.params = model.params();
            result.metrics.confusion = vm.confusion;
        }
        if (hook) hook(rec);
        if (es.stop) break;
    }
    const EarlyStop es = early_stop(history, config.patience);
    CheckpointMeta& meta = result.checkpoint.meta;
    meta.epoch = es.best_epoch;
    meta.best_val_accuracy = history[es.best_epoch];
    meta.seed = config.seed;
    meta.window = window;
    meta.config = provenance(config, run_config);
    return result;
}

// ---- evaluation -------------------------------------------------------------

Metrics evaluate_patchwise(const Checkpoint& patchwise, const DatasetManifest& manifest,
                           Split split, std::size_t stride) {
    if (patchwise.kind() != NetworkKind::Patchwise)
        fail(ErrorKind::Checkpoint, "expected a patch-wise checkpoint", FormatDetail::KindMismatch);
    if (patchwise.meta.window == 0 || !patchwise.meta.norm)
        fail(ErrorKind::Checkpoint, "patch-wise checkpoint lacks window/normalization metadata",
             FormatDetail::BadHeader);
    const Model model(patchwise.spec, patchwise.params);
    return classify_patches(model, load_split(manifest, split, *patchwise.meta.norm),
                            patchwise.meta.window, stride);
}

Metrics evaluate_imagewise(const Checkpoint& patchwise, const Checkpoint& imagewise,
                           const DatasetManifest& manifest, Split split) {
    const Classifier clf = make_classifier(patchwise, imagewise);
    const auto records = manifest.split(split);
    if (records.empty())
        fail(ErrorKind::Config, std::string("manifest has an empty ") + split_name(split) + " split");
    Metrics m;
    for (const auto& r : records) m.add(r.label, infer_image(clf, read_ppm(manifest.resolve(r))).label);
    return m;
}

double initial_loss(const NetworkSpec& spec, std::uint64_t seed, const Tensor& inputs,
                    std::span<const int> labels) {
    Model model(spec, init_params(spec, seed));
    Tape tape;
    ForwardOptions opt;
    opt.mode = ops::Mode::Train;
    opt.dropout_rng = Rng(seed).split("dropout");
    const Tape::Id logits = model.logits(tape, tape.leaf(inputs, false), opt);
    return ops::cross_entropy(tape.value(logits), labels);
}

}  // namespace patchnet
