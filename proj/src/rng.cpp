#include "patchnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace patchnet {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng Rng::split(std::string_view label) const {
    return Rng(seed_, mix64(stream_ ^ mix64(fnv1a(label))));
}

Rng Rng::split(std::uint64_t index) const {
    return Rng(seed_, mix64(stream_ + mix64(index ^ 0x5851f42d4c957f2dULL)));
}

std::uint64_t Rng::bits(std::uint64_t counter) const {
    return mix64(mix64(seed_ ^ mix64(stream_)) + counter * 0xd1b54a32d192ed03ULL);
}

float Rng::uniform(std::uint64_t counter) const {
    return static_cast<float>(bits(counter) >> 40) * (1.0f / 16777216.0f);
}

float Rng::uniform(std::uint64_t counter, float lo, float hi) const {
    return lo + (hi - lo) * uniform(counter);
}

std::uint64_t Rng::below(std::uint64_t counter, std::uint64_t n) const {
    // 128-bit multiply-high; bias is below 2^-64 * n, irrelevant here.
    const unsigned __int128 p = static_cast<unsigned __int128>(bits(counter)) * n;
    return static_cast<std::uint64_t>(p >> 64);
}

double Rng::normal(std::uint64_t counter) const {
    const double u1 = (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(bits(counter | (1ULL << 63)) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace patchnet
