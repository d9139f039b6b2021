#pragma once

// Small synthetic dataset on disk with normalization stats, shared by the
// training tests.

#include "patchnet/data_io.hpp"
#include "test_util.hpp"

namespace fixture {

inline patchnet::DatasetManifest small_dataset(const std::string& name, std::size_t per_class = 4,
                                               std::size_t width = 128, std::size_t height = 96,
                                               std::uint64_t seed = 3) {
    const std::string dir = testutil::scratch_dir(name);
    const auto images = patchnet::synth_dataset(per_class, width, height, seed);
    patchnet::DatasetManifest m = patchnet::write_synth_dataset(dir, images, 0.25, seed);
    m.stats = patchnet::compute_norm_stats(m);
    patchnet::save_manifest(dir + "/manifest.json", m);
    return m;
}

}  // namespace fixture
