#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wgsr/errors.hpp"

namespace wgsr {

static_assert(std::endian::native == std::endian::little,
              "container formats are little-endian; big-endian hosts unsupported");

/// FNV-1a 64-bit; used for content-addressing configs (operator cache keys,
/// run manifests).
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline bool file_exists(const std::filesystem::path& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

/// Little-endian binary writer for the WGSR/WGNN/WGOP container family:
/// 4-byte magic, u32 format version, u64-length-prefixed JSON header, payload.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path)
        : path_(path), tmp_(path.string() + ".tmp"), out_(tmp_, std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + tmp_.string());
    }

    void write_magic(const char magic[4], std::uint32_t version) {
        out_.write(magic, 4);
        write_u32(version);
    }

    void write_u32(std::uint32_t v) { write_raw(&v, sizeof v); }
    void write_u64(std::uint64_t v) { write_raw(&v, sizeof v); }
    void write_f64(double v) { write_raw(&v, sizeof v); }

    void write_json(const nlohmann::json& j) {
        const std::string s = j.dump();
        write_u64(s.size());
        write_raw(s.data(), s.size());
    }

    void write_bytes(const void* data, std::size_t n) { write_raw(data, n); }

    void write_f64_array(const double* data, std::size_t n) {
        write_raw(data, n * sizeof(double));
    }

    /// Flush and atomically move into place.
    void commit() {
        out_.flush();
        if (!out_) throw IoError("write failed: " + tmp_.string());
        out_.close();
        std::error_code ec;
        std::filesystem::rename(tmp_, path_, ec);
        if (ec) throw IoError("rename failed: " + tmp_.string() + " -> " + path_.string());
        committed_ = true;
    }

    ~BinaryWriter() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

private:
    void write_raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw IoError("write failed: " + tmp_.string());
    }

    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path)
        : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open: " + path.string());
    }

    /// Checks magic (and, when nonzero, the expected version); returns the
    /// stored format version.
    std::uint32_t read_magic(const char magic[4], std::uint32_t expected_version = 0) {
        char got[4] = {};
        read_raw(got, 4);
        if (std::memcmp(got, magic, 4) != 0)
            throw IoError("bad magic in " + path_.string() + " (expected " +
                          std::string(magic, 4) + ")");
        const std::uint32_t v = read_u32();
        if (expected_version != 0 && v != expected_version)
            throw IoError("unsupported format version " + std::to_string(v) + " in " +
                          path_.string());
        return v;
    }

    std::uint32_t read_u32() {
        std::uint32_t v;
        read_raw(&v, sizeof v);
        return v;
    }
    std::uint64_t read_u64() {
        std::uint64_t v;
        read_raw(&v, sizeof v);
        return v;
    }
    double read_f64() {
        double v;
        read_raw(&v, sizeof v);
        return v;
    }

    nlohmann::json read_json() {
        const std::uint64_t n = read_u64();
        if (n > (1ULL << 30)) throw IoError("unreasonable header size in " + path_.string());
        std::string s(n, '\0');
        read_raw(s.data(), n);
        try {
            return nlohmann::json::parse(s);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed header in " + path_.string() + ": " + e.what());
        }
    }

    void read_bytes(void* data, std::size_t n) { read_raw(data, n); }

    void read_f64_array(double* data, std::size_t n) {
        read_raw(data, n * sizeof(double));
    }

private:
    void read_raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw IoError("truncated file: " + path_.string());
    }

    std::filesystem::path path_;
    std::ifstream in_;
};

/// Writes text atomically (tmp + rename); used for CSVs and manifests.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out << text;
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + tmp.string());
}

} // namespace wgsr
