#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpd::io {

using Bytes = std::vector<std::uint8_t>;

/// Raised for truncated, corrupt or otherwise malformed artifact files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

constexpr std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                                std::uint64_t h = kFnvOffset) {
    for (auto b : data) {
        h ^= b;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : text) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

/// Little-endian serializer.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }

    void f64s(std::span<const double> values) {
        for (double v : values) f64(v);
    }

    void raw(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    /// u32 length prefix followed by the bytes.
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    void blob(std::span<const std::uint8_t> data) {
        u64(data.size());
        raw(data);
    }

    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes buf_;
};

/// Bounds-checked little-endian deserializer.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }

    std::vector<double> f64s(std::size_t n) {
        need(n * 8);
        std::vector<double> out(n);
        for (auto& v : out) v = f64();
        return out;
    }

    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::string str() {
        const auto n = u32();
        auto s = raw(n);
        return {s.begin(), s.end()};
    }

    std::span<const std::uint8_t> blob() {
        const auto n = u64();
        return raw(static_cast<std::size_t>(n));
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    void expect_end() const {
        if (remaining() != 0)
            throw FormatError("trailing bytes: " + std::to_string(remaining()) + " unread");
    }

private:
    void need(std::size_t n) const {
        if (n > remaining())
            throw FormatError("unexpected end of data at offset " + std::to_string(pos_) +
                              " (need " + std::to_string(n) + " bytes)");
    }

    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

using Magic = std::array<char, 4>;

inline constexpr Magic kCheckpointMagic{'C', 'P', 'D', 'P'};
inline constexpr Magic kExpertMagic{'C', 'P', 'D', 'E'};
inline constexpr Magic kFamilyMagic{'C', 'P', 'D', 'T'};
inline constexpr Magic kDemoMagic{'C', 'P', 'D', 'D'};
inline constexpr Magic kBufferMagic{'C', 'P', 'D', 'B'};

inline constexpr std::uint16_t kFormatVersion = 1;

inline std::string magic_string(const Magic& m) { return {m.begin(), m.end()}; }

/// Starts a framed record: magic then format version.
inline ByteWriter begin_record(const Magic& magic, std::uint16_t version = kFormatVersion) {
    ByteWriter w;
    w.raw(std::string_view(magic.data(), magic.size()));
    w.u16(version);
    return w;
}

/// Appends the FNV-1a checksum of everything written so far.
inline Bytes finish_record(ByteWriter&& w) {
    const auto sum = fnv1a64(w.bytes());
    w.u64(sum);
    return w.take();
}

/// Returns the magic stored in the first four bytes.
inline Magic peek_magic(std::span<const std::uint8_t> data) {
    if (data.size() < 4) throw FormatError("file too short to carry a magic tag");
    return {static_cast<char>(data[0]), static_cast<char>(data[1]), static_cast<char>(data[2]),
            static_cast<char>(data[3])};
}

/// Validates magic, version and trailing checksum. The returned reader is
/// positioned after the version field and bounded before the checksum.
inline ByteReader open_record(std::span<const std::uint8_t> data, const Magic& magic) {
    if (data.size() < 4 + 2 + 8) throw FormatError("record too short");
    if (peek_magic(data) != magic)
        throw FormatError("bad magic: expected " + magic_string(magic) + ", found " +
                          magic_string(peek_magic(data)));
    const auto body = data.first(data.size() - 8);
    ByteReader tail(data.last(8));
    const auto stored = tail.u64();
    const auto actual = fnv1a64(body);
    if (stored != actual)
        throw FormatError("checksum mismatch: stored " + hex64(stored) + ", computed " + hex64(actual));
    ByteReader r(body);
    r.raw(4);
    const auto version = r.u16();
    if (version != kFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version));
    return r;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text(const std::filesystem::path& path) {
    auto b = read_file(path);
    return {b.begin(), b.end()};
}

}  // namespace cpd::io
