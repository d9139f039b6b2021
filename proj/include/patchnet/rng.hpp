#pragma once

#include <cstdint>
#include <string_view>

namespace patchnet {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so results never depend on call interleaving.
// Streams are derived by name ("init/layer3.weight", "dropout/fc1", ...).
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    // Child stream keyed by a label and/or an index.
    Rng split(std::string_view label) const;
    Rng split(std::uint64_t index) const;

    std::uint64_t bits(std::uint64_t counter) const;

    // Uniform in [0, 1), 24 bits of mantissa.
    float uniform(std::uint64_t counter) const;
    // Uniform in [lo, hi).
    float uniform(std::uint64_t counter, float lo, float hi) const;
    // Uniform integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t counter, std::uint64_t n) const;
    // Standard normal via Box-Muller; the second uniform comes from the counter
    // with its top bit set.
    double normal(std::uint64_t counter) const;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

std::uint64_t mix64(std::uint64_t x);

// Sequential cursor over a stream; handy where draws are naturally ordered
// (shuffles, synthetic scene layout).
class RngCursor {
public:
    explicit RngCursor(Rng rng) : rng_(rng) {}
    float uniform() { return rng_.uniform(next_++); }
    float uniform(float lo, float hi) { return rng_.uniform(next_++, lo, hi); }
    std::uint64_t below(std::uint64_t n) { return rng_.below(next_++, n); }
    double normal() { return rng_.normal(next_++); }
    std::uint64_t position() const noexcept { return next_; }

private:
    Rng rng_;
    std::uint64_t next_ = 0;
};

}  // namespace patchnet
