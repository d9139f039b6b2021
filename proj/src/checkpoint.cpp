#include "patchnet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "patchnet/error.hpp"

namespace patchnet {

namespace {

constexpr char kMagic[4] = {'H', 'P', 'C', 'K'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }

    const std::uint8_t* take(std::size_t n) {
        if (n > remaining())
            fail(ErrorKind::Checkpoint,
                 "checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                     std::to_string(n) + " more bytes)",
                 FormatDetail::Truncated);
        const std::uint8_t* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::uint32_t n = u32();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
    nlohmann::json j{{"epoch", m.epoch},
                     {"best_val_accuracy", m.best_val_accuracy},
                     {"seed", m.seed},
                     {"window", m.window},
                     {"config", m.config}};
    if (m.norm) j["normalization"] = to_json(*m.norm);
    return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.window = j.at("window").get<std::size_t>();
    m.config = j.value("config", nlohmann::json::object());
    if (j.contains("normalization")) m.norm = norm_stats_from_json(j.at("normalization"));
    return m;
}

}  // namespace

nlohmann::json to_json(const NormStats& s) {
    return {{"mean", s.mean}, {"std", s.std}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
    NormStats s;
    s.mean = j.at("mean").get<std::array<float, 3>>();
    s.std = j.at("std").get<std::array<float, 3>>();
    return s;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u16(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(ckpt.spec.kind));
    const nlohmann::json header{{"spec", to_json(ckpt.spec)}, {"metadata", meta_to_json(ckpt.meta)}};
    w.str(header.dump());
    for (const NamedTensor& p : ckpt.params.entries()) {
        w.str(p.name);
        w.u8(static_cast<std::uint8_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : p.value.values()) w.f32(v);
    }
    w.u32(crc32_of(w.buffer()));
    return std::move(w.buffer());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes,
                            std::optional<NetworkKind> expected) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail(ErrorKind::Checkpoint, "not a checkpoint (bad magic bytes)", FormatDetail::BadMagic);
    if (bytes.size() < 4 + 2 + 1 + 4 + 4)
        fail(ErrorKind::Checkpoint, "checkpoint truncated (" + std::to_string(bytes.size()) +
                                        " bytes)",
             FormatDetail::Truncated);

    Reader r(bytes.first(bytes.size() - 4));
    r.take(4);
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        fail(ErrorKind::Checkpoint, "unsupported checkpoint version " + std::to_string(version) +
                                        " (expected " + std::to_string(kCheckpointVersion) + ")",
             FormatDetail::BadVersion);
    const std::uint8_t kind_byte = r.u8();
    if (kind_byte > 1)
        fail(ErrorKind::Checkpoint, "unknown network kind byte " + std::to_string(kind_byte),
             FormatDetail::BadHeader);
    const std::string header_text = r.str();

    std::vector<NamedTensor> raw;
    while (r.remaining() > 0) {
        NamedTensor p;
        p.name = r.str();
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        const std::size_t n = shape_numel(shape);
        if (rank == 0 || n == 0 || n * 4 > r.remaining())
            fail(ErrorKind::Checkpoint, "checkpoint truncated in parameter " + p.name,
                 FormatDetail::Truncated);
        std::vector<float> data(n);
        for (auto& v : data) v = r.f32();
        p.value = Tensor(std::move(shape), std::move(data));
        raw.push_back(std::move(p));
    }

    const std::size_t body = bytes.size() - 4;
    const std::uint32_t stored = static_cast<std::uint32_t>(bytes[body]) |
                                 (static_cast<std::uint32_t>(bytes[body + 1]) << 8) |
                                 (static_cast<std::uint32_t>(bytes[body + 2]) << 16) |
                                 (static_cast<std::uint32_t>(bytes[body + 3]) << 24);
    if (stored != crc32_of(bytes.first(body)))
        fail(ErrorKind::Checkpoint, "checkpoint checksum mismatch (file corrupted)",
             FormatDetail::BadChecksum);

    const auto kind = static_cast<NetworkKind>(kind_byte);
    if (expected && *expected != kind)
        fail(ErrorKind::Checkpoint,
             std::string("checkpoint holds a ") + network_kind_name(kind) + " network, expected " +
                 network_kind_name(*expected),
             FormatDetail::KindMismatch);

    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(header_text);
        ckpt.spec = network_spec_from_json(header.at("spec"));
        ckpt.meta = meta_from_json(header.at("metadata"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Checkpoint, std::string("malformed checkpoint header: ") + e.what(),
             FormatDetail::BadHeader);
    } catch (const Error& e) {
        fail(ErrorKind::Checkpoint, std::string("malformed checkpoint header: ") + e.what(),
             FormatDetail::BadHeader);
    }
    if (ckpt.spec.kind != kind)
        fail(ErrorKind::Checkpoint, "kind byte disagrees with the stored network spec",
             FormatDetail::BadHeader);

    const ParamSet expected_params = init_params(ckpt.spec, 0);
    for (NamedTensor& p : raw) {
        if (!expected_params.contains(p.name))
            fail(ErrorKind::Checkpoint, "unexpected parameter " + p.name, FormatDetail::BadHeader);
        const bool trainable = std::find_if(expected_params.entries().begin(),
                                            expected_params.entries().end(), [&](const auto& e) {
                                                return e.name == p.name;
                                            })->trainable;
        if (ckpt.params.contains(p.name))
            fail(ErrorKind::Checkpoint, "duplicate parameter " + p.name, FormatDetail::BadHeader);
        ckpt.params.add(std::move(p.name), std::move(p.value), trainable);
    }
    // Shape and completeness check against the network spec.
    try {
        Model probe(ckpt.spec, ckpt.params);
    } catch (const Error& e) {
        fail(ErrorKind::Checkpoint, e.what(), FormatDetail::BadHeader);
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::Io, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<NetworkKind> expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open checkpoint " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                          std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes, expected);
}

}  // namespace patchnet
