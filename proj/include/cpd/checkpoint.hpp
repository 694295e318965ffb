#pragma once

#include <filesystem>

#include "cpd/binary_io.hpp"
#include "cpd/gaussian.hpp"

namespace cpd::nn {

inline void write_policy_body(io::ByteWriter& w, const PolicyParams& p) {
    const auto& sizes = p.net.arch.layer_sizes;
    w.u16(static_cast<std::uint16_t>(sizes.size()));
    for (auto s : sizes) w.u32(static_cast<std::uint32_t>(s));
    w.u8(static_cast<std::uint8_t>(p.net.arch.activation));
    w.u32(static_cast<std::uint32_t>(p.log_std.size()));
    w.f64s(p.net.values);
    w.f64s(p.log_std);
}

inline PolicyParams read_policy_body(io::ByteReader& r) {
    PolicyParams p;
    const auto layers = r.u16();
    if (layers < 2) throw io::FormatError("checkpoint: fewer than two layer sizes");
    for (std::uint16_t i = 0; i < layers; ++i) p.net.arch.layer_sizes.push_back(r.u32());
    const auto act = r.u8();
    if (act > 1) throw io::FormatError("checkpoint: unknown activation tag " + std::to_string(act));
    p.net.arch.activation = static_cast<Activation>(act);
    try {
        p.net.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw io::FormatError(std::string("checkpoint: ") + e.what());
    }
    const auto n_log_std = r.u32();
    if (n_log_std != 0 && n_log_std != p.net.arch.output_dim())
        throw io::FormatError("checkpoint: log_std length does not match output dimension");
    p.net.values = r.f64s(p.net.arch.param_count());
    p.log_std = r.f64s(n_log_std);
    return p;
}

/// "CPDP" record: version, architecture, log_std length, f64 parameters, FNV-1a trailer.
inline io::Bytes encode_checkpoint(const PolicyParams& p) {
    auto w = io::begin_record(io::kCheckpointMagic);
    write_policy_body(w, p);
    return io::finish_record(std::move(w));
}

inline PolicyParams decode_checkpoint(std::span<const std::uint8_t> data) {
    auto r = io::open_record(data, io::kCheckpointMagic);
    auto p = read_policy_body(r);
    r.expect_end();
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const PolicyParams& p) {
    io::write_file(path, encode_checkpoint(p));
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path));
}

}  // namespace cpd::nn
