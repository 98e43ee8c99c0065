#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tjepa {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// mt19937_64 wrapped with hand-rolled distributions so that sampled streams are
// identical across standard-library implementations.
class DetRng {
public:
    DetRng() : engine_(0) {}
    explicit DetRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0,1) with 53 random bits
    double next_uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // standard normal via Box-Muller (cosine branch only, two draws per value)
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        while (u1 <= 0.0) u1 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

// The independent streams one seed fans out into. Keeping them separate means
// e.g. dropout draws cannot shift the mask sequence.
struct RngBundle {
    DetRng init;
    DetRng shuffle;
    DetRng mask;
    DetRng dropout;

    RngBundle() = default;
    explicit RngBundle(std::uint64_t seed)
        : init(splitmix64(seed ^ 0x01)),
          shuffle(splitmix64(seed ^ 0x02)),
          mask(splitmix64(seed ^ 0x03)),
          dropout(splitmix64(seed ^ 0x04)) {}

    std::string serialize() const {
        return init.serialize() + "|" + shuffle.serialize() + "|" + mask.serialize() + "|" + dropout.serialize();
    }

    void deserialize(const std::string& s) {
        std::array<std::string, 4> parts;
        std::size_t start = 0;
        for (int i = 0; i < 4; ++i) {
            std::size_t bar = (i < 3) ? s.find('|', start) : s.size();
            parts[static_cast<std::size_t>(i)] = s.substr(start, bar - start);
            start = bar + 1;
        }
        init.deserialize(parts[0]);
        shuffle.deserialize(parts[1]);
        mask.deserialize(parts[2]);
        dropout.deserialize(parts[3]);
    }
};

}  // namespace tjepa
