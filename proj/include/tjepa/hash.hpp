#pragma once
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include "tjepa/errors.hpp"

namespace tjepa {

// 64-bit FNV-1a, used for content addressing of inputs, schemas and artifacts.
class Fnv64 {
public:
    void update(const void* data, std::size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    std::uint64_t digest() const { return state_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
        return std::string(buf);
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv64_hex(const std::string& s) {
    Fnv64 h;
    h.update(s);
    return h.hex();
}

inline std::string fnv64_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file for hashing: " + path);
    Fnv64 h;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace tjepa
