#pragma once

#include <filesystem>
#include <string>

#include "cpd/bench/config.hpp"
#include "cpd/bench/report.hpp"
#include "cpd/binary_io.hpp"
#include "cpd/checkpoint.hpp"
#include "cpd/distill.hpp"
#include "cpd/env.hpp"
#include "cpd/ppo.hpp"
#include "cpd/replay.hpp"

namespace cpd::bench {

struct VerifyResult {
    std::string kind;
    std::string summary;
};

inline bool looks_like_hash(const std::string& h) {
    return h.size() == 16 && h.find_first_not_of("0123456789abcdef") == std::string::npos;
}

/// Full structural validation of any artifact the workbench writes.
/// Throws io::FormatError (binary) or std::runtime_error (text) on failure.
inline VerifyResult verify_bytes(std::span<const std::uint8_t> data, const std::string& name = {}) {
    if (data.size() >= 4) {
        const auto m = io::peek_magic(data);
        if (m == io::kCheckpointMagic) {
            const auto p = nn::decode_checkpoint(data);
            return {"checkpoint", std::to_string(p.net.values.size()) + " net parameters, " +
                                      std::to_string(p.log_std.size()) + " log-std entries"};
        }
        if (m == io::kExpertMagic) {
            const auto a = ppo::decode_expert(data);
            return {"expert", "task " + std::to_string(a.object_id) + ", best score " + csv_number(a.best_eval_score) +
                                  ", " + std::to_string(a.training_curve.size()) + " training episodes"};
        }
        if (m == io::kFamilyMagic) {
            const auto f = env::decode_family(data);
            return {"task family", std::to_string(f.specs.size()) + " tasks, master seed " +
                                       std::to_string(f.master_seed)};
        }
        if (m == io::kDemoMagic) {
            const auto d = distill::decode_demonstration(data);
            return {"demonstration", "task " + std::to_string(d.object_id) + ", " + std::to_string(d.count()) +
                                         " episodes"};
        }
        if (m == io::kBufferMagic) {
            const auto b = replay::decode_buffer(data);
            return {"buffer snapshot", replay::to_string(b.strategy) + ", " + std::to_string(b.slots.size()) +
                                           " slots, capacity " + std::to_string(b.capacity)};
        }
    }
    const std::string text(data.begin(), data.end());
    const auto ext = std::filesystem::path(name).extension().string();
    if (ext == ".ini") {
        const auto cfg = parse_config(text);
        return {"config", "hash " + config_hash(cfg)};
    }
    if (ext == ".svg" || text.rfind("<?xml", 0) == 0) {
        const auto a = text.find("<!-- config_hash=");
        if (a == std::string::npos) throw std::runtime_error("svg: missing config hash comment");
        const auto h = text.substr(a + 17, 16);
        if (!looks_like_hash(h)) throw std::runtime_error("svg: malformed config hash");
        if (text.find("</svg>") == std::string::npos) throw std::runtime_error("svg: truncated document");
        return {"svg plot", "config hash " + h};
    }
    if (text.rfind("# config_hash=", 0) == 0) {
        const auto t = parse_csv(text);
        const auto h = t.meta("config_hash");
        if (!looks_like_hash(h)) throw std::runtime_error("csv: malformed config hash");
        if (t.header.empty()) throw std::runtime_error("csv: missing header row");
        return {"csv table", std::to_string(t.rows.size()) + " rows, " + std::to_string(t.header.size()) +
                                 " columns, config hash " + h};
    }
    throw io::FormatError("unrecognised artifact format");
}

inline VerifyResult verify_file(const std::filesystem::path& p) { return verify_bytes(io::read_file(p), p.string()); }

}  // namespace cpd::bench
