#include "patchnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "patchnet/checkpoint.hpp"
#include "patchnet/error.hpp"
#include "patchnet/rng.hpp"

namespace fs = std::filesystem;

namespace patchnet {

// ---- files ------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::Io, "failed writing " + path);
}

// ---- PPM --------------------------------------------------------------------

namespace {

class PpmHeader {
public:
    explicit PpmHeader(std::span<const std::uint8_t> b) : b_(b) {}

    std::size_t number(const char* what) {
        skip_space_and_comments();
        if (pos_ >= b_.size())
            fail(ErrorKind::Format, std::string("PPM header truncated before ") + what,
                 FormatDetail::Truncated);
        if (!std::isdigit(b_[pos_]))
            fail(ErrorKind::Format, std::string("PPM header: expected ") + what,
                 FormatDetail::BadHeader);
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_++] - '0');
            if (v > (1u << 24))
                fail(ErrorKind::Format, std::string("PPM header: ") + what + " too large",
                     FormatDetail::BadHeader);
        }
        return v;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
            fail(ErrorKind::Format, "PPM header: missing whitespace before raster",
                 pos_ >= b_.size() ? FormatDetail::Truncated : FormatDetail::BadHeader);
        return pos_ + 1;
    }

    void skip(std::size_t n) { pos_ += n; }

private:
    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (std::isspace(b_[pos_])) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        fail(ErrorKind::Format, "not a binary PPM (magic must be P6)", FormatDetail::BadMagic);
    PpmHeader h(bytes);
    h.skip(2);
    const std::size_t w = h.number("width");
    const std::size_t ht = h.number("height");
    const std::size_t maxval = h.number("maxval");
    if (w == 0 || ht == 0)
        fail(ErrorKind::Format, "PPM dimensions must be positive", FormatDetail::BadHeader);
    if (maxval != 255)
        fail(ErrorKind::Format, "PPM maxval " + std::to_string(maxval) + " unsupported (need 255)",
             FormatDetail::BadMaxval);
    const std::size_t start = h.raster_start();
    const std::size_t need = w * ht * 3;
    if (bytes.size() < start + need)
        fail(ErrorKind::Format, "PPM payload truncated: " + std::to_string(bytes.size() - start) +
                                    " of " + std::to_string(need) + " bytes",
             FormatDetail::Truncated);
    Tensor img({3, ht, w});
    const std::uint8_t* px = bytes.data() + start;
    const std::size_t plane = w * ht;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = px[3 * i + c] / 255.0f;
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
    require(image.rank() == 3 && image.dim(0) == 3,
            "encode_ppm expects [3,H,W], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2), plane = w * h;
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.resize(header.size() + 3 * plane);
    std::uint8_t* px = out.data() + header.size();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
            px[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return out;
}

Tensor read_ppm(const std::string& path) {
    const auto bytes = read_file(path);
    try {
        return decode_ppm(bytes);
    } catch (const Error& e) {
        fail(e.kind(), path + ": " + e.what(), e.detail());
    }
}

void write_ppm(const std::string& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

// ---- manifest ---------------------------------------------------------------

const char* split_name(Split s) { return s == Split::Train ? "train" : "val"; }

std::string DatasetManifest::resolve(const ManifestRecord& r) const {
    const fs::path p(r.path);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (fs::path(base_dir) / p).string();
}

std::vector<ManifestRecord> DatasetManifest::split(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(r);
    return out;
}

void DatasetManifest::validate(bool for_training) const {
    std::set<std::string> seen;
    std::array<std::size_t, 4> train_per_class{};
    std::size_t val = 0;
    for (const auto& r : records) {
        if (!seen.insert(r.path).second)
            fail(ErrorKind::Format, "manifest lists " + r.path + " twice");
        if (r.label < 0 || r.label > 3)
            fail(ErrorKind::Format, "manifest label " + std::to_string(r.label) + " for " + r.path +
                                        " outside 0..3");
        if (r.split == Split::Train)
            ++train_per_class[static_cast<std::size_t>(r.label)];
        else
            ++val;
    }
    if (!for_training) return;
    if (val == 0) fail(ErrorKind::Config, "manifest has an empty val split");
    for (std::size_t c = 0; c < 4; ++c)
        if (train_per_class[c] == 0)
            fail(ErrorKind::Config, "class " + std::to_string(c) + " missing from the train split");
}

std::string manifest_to_json(const DatasetManifest& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : m.records)
        arr.push_back({{"path", r.path}, {"label", r.label}, {"split", split_name(r.split)}});
    if (m.stats) arr.push_back(to_json(*m.stats));
    return arr.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::string& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        const auto arr = nlohmann::json::parse(text);
        if (!arr.is_array()) fail(ErrorKind::Format, "manifest must be a JSON array");
        for (const auto& e : arr) {
            if (e.contains("mean") && e.contains("std")) {
                m.stats = norm_stats_from_json(e);
                continue;
            }
            ManifestRecord r;
            r.path = e.at("path").get<std::string>();
            r.label = e.at("label").get<int>();
            const auto s = e.at("split").get<std::string>();
            if (s == "train")
                r.split = Split::Train;
            else if (s == "val")
                r.split = Split::Val;
            else
                fail(ErrorKind::Format, "manifest split '" + s + "' is neither train nor val");
            m.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("malformed manifest: ") + e.what());
    }
    m.validate(false);
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    const auto bytes = read_file(path);
    return manifest_from_json(std::string(bytes.begin(), bytes.end()),
                              fs::path(path).parent_path().string());
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    const std::string text = manifest_to_json(manifest);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- normalization stats ----------------------------------------------------

NormStats compute_norm_stats(std::span<const Tensor> images) {
    require(!images.empty(), "compute_norm_stats: no training images");
    std::array<double, 3> sum{}, sumsq{};
    double count = 0;
    for (const Tensor& img : images) {
        require(img.rank() == 3 && img.dim(0) == 3, "compute_norm_stats expects [3,H,W] images");
        const std::size_t plane = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < 3; ++c) {
            const float* p = img.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum[c] += p[i];
                sumsq[c] += static_cast<double>(p[i]) * p[i];
            }
        }
        count += static_cast<double>(plane);
    }
    NormStats s;
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / count;
        const double var = std::max(0.0, sumsq[c] / count - mean * mean);
        s.mean[c] = static_cast<float>(mean);
        s.std[c] = std::max(static_cast<float>(std::sqrt(var)), kStdFloor);
    }
    return s;
}

NormStats compute_norm_stats(const DatasetManifest& manifest) {
    std::vector<Tensor> images;
    for (const auto& r : manifest.split(Split::Train)) images.push_back(read_ppm(manifest.resolve(r)));
    if (images.empty()) fail(ErrorKind::Config, "manifest has an empty train split");
    return compute_norm_stats(images);
}

// ---- split ------------------------------------------------------------------

std::vector<ManifestRecord> split_manifest(std::vector<ManifestRecord> records, double val_fraction,
                                           std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        fail(ErrorKind::Config, "val_fraction must be in (0, 1), got " + std::to_string(val_fraction));
    std::array<std::vector<std::size_t>, 4> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int l = records[i].label;
        if (l < 0 || l > 3) fail(ErrorKind::Format, "label out of range in split_manifest");
        by_class[static_cast<std::size_t>(l)].push_back(i);
    }
    std::array<std::size_t, 4> n_val{};
    std::array<double, 4> frac{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t n = by_class[c].size();
        if (n == 0) continue;
        if (n < 2)
            fail(ErrorKind::Config, "class " + std::to_string(c) + " has " + std::to_string(n) +
                                        " image(s); stratified split needs at least 2");
        const double exact = static_cast<double>(n) * val_fraction;
        n_val[c] = static_cast<std::size_t>(std::floor(exact));
        frac[c] = exact - static_cast<double>(n_val[c]);
        assigned += n_val[c];
    }
    const auto target =
        static_cast<std::size_t>(std::llround(static_cast<double>(records.size()) * val_fraction));
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t c : order) {
        if (assigned >= target) break;
        if (by_class[c].empty() || frac[c] <= 0.0) continue;
        ++n_val[c];
        ++assigned;
    }
    const Rng rng = Rng(seed).split("split");
    for (std::size_t c = 0; c < 4; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        // Both sides keep at least one image of every class.
        n_val[c] = std::clamp<std::size_t>(n_val[c], 1, idx.size() - 1);
        const Rng r = rng.split(c);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[r.below(i, i)]);
        for (std::size_t k = 0; k < idx.size(); ++k)
            records[idx[k]].split = k < n_val[c] ? Split::Val : Split::Train;
    }
    return records;
}

// ---- synthetic textures -----------------------------------------------------

SynthParams default_synth_params() {
    SynthParams p;
    p.classes = {{
        {6.0, 9.0f, 9.0f, {0.80f, 0.55f, 0.75f}},   // normal: sparse, large, pale
        {8.0, 4.0f, 4.0f, {0.35f, 0.12f, 0.45f}},   // benign: sparse, small, dark
        {28.0, 4.0f, 4.0f, {0.30f, 0.18f, 0.55f}},   // in situ: dense, small
        {32.0, 11.0f, 3.0f, {0.45f, 0.10f, 0.35f}},  // invasive: dense, elongated, overlapping
    }};
    return p;
}

namespace {

std::size_t poisson(RngCursor& cur, double lambda) {
    // Knuth's product method; lambda stays well below exp underflow here.
    const double limit = std::exp(-lambda);
    double prod = 1.0;
    std::size_t k = 0;
    while (true) {
        prod *= cur.uniform() + 0x1.0p-25;
        if (prod <= limit) return k;
        ++k;
    }
}

SynthImage render(int label, std::size_t index, std::size_t width, std::size_t height,
                  const SynthParams& params, const Rng& rng) {
    const BlobClassParams& cls = params.classes[static_cast<std::size_t>(label)];
    RngCursor cur(rng.split("layout"));
    const std::size_t plane = width * height;
    Tensor img({3, height, width});
    for (std::size_t c = 0; c < 3; ++c) std::fill_n(img.data() + c * plane, plane, params.background[c]);

    const double lambda = cls.density * static_cast<double>(plane) / 1e4;
    const std::size_t blobs = poisson(cur, lambda);
    for (std::size_t b = 0; b < blobs; ++b) {
        const float cx = cur.uniform(0.0f, static_cast<float>(width));
        const float cy = cur.uniform(0.0f, static_cast<float>(height));
        const float angle = cur.uniform(0.0f, 3.14159265f);
        const float ra = cls.radius_major * cur.uniform(0.8f, 1.2f);
        const float rb = cls.radius_minor * cur.uniform(0.8f, 1.2f);
        std::array<float, 3> col;
        for (std::size_t c = 0; c < 3; ++c)
            col[c] = cls.color[c] + cur.uniform(-params.color_jitter, params.color_jitter);
        const float ca = std::cos(angle), sa = std::sin(angle);
        const float reach = ra + 1.0f;
        const auto x0 = static_cast<long>(std::max(0.0f, std::floor(cx - reach)));
        const auto x1 = static_cast<long>(std::min<float>(width - 1, std::ceil(cx + reach)));
        const auto y0 = static_cast<long>(std::max(0.0f, std::floor(cy - reach)));
        const auto y1 = static_cast<long>(std::min<float>(height - 1, std::ceil(cy + reach)));
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                const float dx = static_cast<float>(x) + 0.5f - cx;
                const float dy = static_cast<float>(y) + 0.5f - cy;
                const float u = (dx * ca + dy * sa) / ra;
                const float v = (-dx * sa + dy * ca) / rb;
                const float d = std::sqrt(u * u + v * v);
                const float alpha = std::clamp((1.0f - d) / 0.25f, 0.0f, 1.0f) * 0.9f;
                if (alpha <= 0.0f) continue;
                const std::size_t i = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
                for (std::size_t c = 0; c < 3; ++c)
                    img[c * plane + i] = img[c * plane + i] * (1.0f - alpha) + col[c] * alpha;
            }
    }
    const Rng noise = rng.split("noise");
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float n = static_cast<float>(noise.normal(i)) * params.noise_sigma;
        img[i] = std::clamp(img[i] + n, 0.0f, 1.0f);
    }
    char id[32];
    std::snprintf(id, sizeof id, "class%d_%03zu", label, index);
    return SynthImage{LabeledImage{std::move(img), label, id}, blobs};
}

}  // namespace

std::vector<SynthImage> synth_dataset(std::size_t n_per_class, std::size_t width,
                                      std::size_t height, std::uint64_t seed,
                                      const SynthParams& params) {
    float max_radius = 0.0f;
    for (const auto& c : params.classes) max_radius = std::max({max_radius, c.radius_major, c.radius_minor});
    if (static_cast<float>(std::min(width, height)) < 2.0f * max_radius)
        fail(ErrorKind::Config, "synthetic image " + std::to_string(width) + "x" +
                                    std::to_string(height) + " smaller than twice the largest blob radius");
    const Rng root = Rng(seed).split("synth");
    std::vector<SynthImage> out;
    out.reserve(4 * n_per_class);
    for (int label = 0; label < 4; ++label)
        for (std::size_t i = 0; i < n_per_class; ++i)
            out.push_back(render(label, i, width, height, params,
                                 root.split(static_cast<std::uint64_t>(label)).split(i)));
    return out;
}

DatasetManifest write_synth_dataset(const std::string& dir, std::span<const SynthImage> images,
                                    double val_fraction, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) fail(ErrorKind::Io, "cannot create directory " + dir);
    std::vector<ManifestRecord> records;
    for (const auto& s : images) {
        const std::string name = s.image.id + ".ppm";
        write_ppm((fs::path(dir) / name).string(), s.image.pixels);
        records.push_back({name, s.image.label, Split::Train});
    }
    DatasetManifest m;
    m.records = split_manifest(std::move(records), val_fraction, seed);
    m.base_dir = dir;
    save_manifest((fs::path(dir) / "manifest.json").string(), m);
    return m;
}

// ---- patch stream -----------------------------------------------------------

PatchStream::PatchStream(DatasetManifest manifest, Split split, std::size_t window,
                         std::size_t stride, PatchMode mode)
    : manifest_(std::move(manifest)),
      window_(window),
      stride_(mode == PatchMode::Tile ? window : stride) {
    records_ = manifest_.split(split);
}

void PatchStream::load(std::size_t index) {
    current_ = read_ppm(manifest_.resolve(records_[index]));
    if (manifest_.stats) normalize(current_, *manifest_.stats);
    const auto grid = geometry::patch_count(current_.dim(2), current_.dim(1), window_, stride_);
    coords_ = geometry::patch_coords(grid);
    loaded_ = true;
}

std::optional<PatchSample> PatchStream::next() {
    while (image_ < records_.size()) {
        if (!loaded_) load(image_);
        if (patch_ < coords_.size()) {
            const auto o = coords_[patch_++];
            return PatchSample{geometry::extract_patch(current_, o.x, o.y, window_),
                               records_[image_].label, records_[image_].path};
        }
        ++image_;
        patch_ = 0;
        loaded_ = false;
    }
    return std::nullopt;
}

std::size_t PatchStream::patches_per_image() const {
    if (records_.empty()) return 0;
    const Tensor first = read_ppm(manifest_.resolve(records_.front()));
    return geometry::patch_count(first.dim(2), first.dim(1), window_, stride_).total();
}

}  // namespace patchnet
