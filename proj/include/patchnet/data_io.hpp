#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchnet/geometry.hpp"
#include "patchnet/norm.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// ---- PPM (binary P6, maxval 255) -------------------------------------------

// -> [3,H,W] with values v/255. Bad magic, maxval != 255, malformed header
// and short payload are distinct FormatDetail values under ErrorKind::Format.
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
// Canonical "P6\n<W> <H>\n255\n" header; values clamped to [0,1], rounded.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

// ---- labeled images & manifests -------------------------------------------

struct LabeledImage {
    Tensor pixels;  // [3,H,W] in [0,1]
    int label = 0;  // 0 normal, 1 benign, 2 in situ, 3 invasive
    std::string id;
};

enum class Split { Train, Val };
const char* split_name(Split s);

struct ManifestRecord {
    std::string path;
    int label = 0;
    Split split = Split::Train;
    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::optional<NormStats> stats;
    // Directory relative paths are resolved against (the manifest's folder).
    std::string base_dir;

    std::string resolve(const ManifestRecord& r) const;
    std::vector<ManifestRecord> split(Split s) const;
    // Unique paths, labels in range, and (for training) both splits non-empty
    // with every class present in train.
    void validate(bool for_training) const;
};

// JSON array of {"path","label","split"} records; the stats block, once
// computed, is the array's trailing {"mean":[3],"std":[3]} element.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text, const std::string& base_dir);

// Per-channel mean and population std over every train-split pixel, std
// floored at kStdFloor.
NormStats compute_norm_stats(const DatasetManifest& manifest);
NormStats compute_norm_stats(std::span<const Tensor> images);

// Stratified train/val assignment, deterministic in seed. Each class sends
// floor(n_c * f) images to val; the remaining round(N * f) - sum go one each to
// the classes with the largest fractional parts (lowest label on ties).
// Rejects f outside (0, 1) and classes with fewer than 2 images.
std::vector<ManifestRecord> split_manifest(std::vector<ManifestRecord> records, double val_fraction,
                                           std::uint64_t seed);

// ---- synthetic four-class textures ----------------------------------------

// Blob population of one class. density is the expected number of blobs per
// 10^4 pixels of image area.
struct BlobClassParams {
    double density;
    float radius_major;  // px
    float radius_minor;  // px
    std::array<float, 3> color;
};

struct SynthParams {
    std::array<BlobClassParams, 4> classes;
    std::array<float, 3> background{0.93f, 0.86f, 0.90f};
    float noise_sigma = 0.04f;
    float color_jitter = 0.05f;
};

// Defaults: 0 sparse large pale round, 1 sparse small dark round, 2 dense
// small round, 3 dense elongated overlapping.
SynthParams default_synth_params();

struct SynthImage {
    LabeledImage image;
    std::size_t blob_count = 0;  // blobs actually drawn (construction log)
};

// n_per_class images of each class in label-major order. Bitwise reproducible
// in (arguments, seed). Rejects images smaller than 2x the largest radius.
std::vector<SynthImage> synth_dataset(std::size_t n_per_class, std::size_t width,
                                      std::size_t height, std::uint64_t seed,
                                      const SynthParams& params = default_synth_params());

// Writes PPMs plus manifest.json (split applied) into dir; returns the manifest.
DatasetManifest write_synth_dataset(const std::string& dir, std::span<const SynthImage> images,
                                    double val_fraction, std::uint64_t seed);

// ---- patch stream ---------------------------------------------------------

enum class PatchMode { Overlap, Tile };

struct PatchSample {
    Tensor patch;  // [3,k,k]
    int label = 0; // inherited from the parent image
    std::string parent;
};

// Patches of the chosen split, manifest order x row-major patch order.
// Overlap mode uses the given stride, tile mode stride = window. Images are
// normalized with the manifest stats when present.
class PatchStream {
public:
    PatchStream(DatasetManifest manifest, Split split, std::size_t window, std::size_t stride,
                PatchMode mode);

    std::optional<PatchSample> next();
    // Patches per image for the first image (all images share dimensions in
    // practice; each image is validated as it is loaded).
    std::size_t patches_per_image() const;

private:
    void load(std::size_t index);

    DatasetManifest manifest_;
    std::vector<ManifestRecord> records_;
    std::size_t window_;
    std::size_t stride_;
    std::size_t image_ = 0;
    std::size_t patch_ = 0;
    Tensor current_;
    std::vector<geometry::PatchOrigin> coords_;
    bool loaded_ = false;
};

}  // namespace patchnet
