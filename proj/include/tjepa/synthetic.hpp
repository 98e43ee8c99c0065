#pragma once
#include <cstdio>
#include <fstream>
#include <string>

#include "tjepa/downstream.hpp"
#include "tjepa/rng.hpp"

namespace tjepa {

// Desk-scale stand-in dataset. Features are standardized numericals; the
// label depends on a nonlinear interaction of features 0 and 1 (XOR of signs
// for classification, product for regression) while the remaining features
// are pure independent noise.
//
// The two informative features share a bimodal magnitude driver: per row one
// of two magnitude modes is drawn and both features take that magnitude (with
// small jitter) under independent random signs. Masked latent prediction can
// therefore learn real cross-feature structure (seeing either informative
// feature reveals the other's magnitude mode) while the independent signs keep
// the label base rate at one half and keep any linear readout of the raw
// columns at chance.
struct SyntheticSpec {
    std::size_t n = 1000;
    std::size_t d = 8;
    Task task = Task::classification;
    std::uint64_t seed = 0;
    double mode_low = 0.25;   // low/high magnitude modes; squared means average to ~1
    double mode_high = 1.39;
    double jitter = 0.05;
};

struct SyntheticSample {
    std::vector<double> features;
    double label = 0;
};

inline SyntheticSample synthetic_row(const SyntheticSpec& spec, DetRng& rng) {
    SyntheticSample row;
    row.features.resize(spec.d);
    double mode = rng.next_uniform() < 0.5 ? spec.mode_low : spec.mode_high;
    double m0 = mode * (1.0 + spec.jitter * rng.next_normal());
    double m1 = mode * (1.0 + spec.jitter * rng.next_normal());
    double s0 = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    double s1 = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    row.features[0] = s0 * std::abs(m0);
    row.features[1] = s1 * std::abs(m1);
    for (std::size_t j = 2; j < spec.d; ++j) row.features[j] = rng.next_normal();
    if (spec.task == Task::classification)
        row.label = (row.features[0] > 0) != (row.features[1] > 0) ? 1.0 : 0.0;
    else
        row.label = row.features[0] * row.features[1];
    return row;
}

inline void make_synthetic(const SyntheticSpec& spec, const std::string& path) {
    if (spec.n < 100) throw config_error("make_synthetic: need n >= 100");
    if (spec.d < 2) throw config_error("make_synthetic: need d >= 2");
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    for (std::size_t j = 0; j < spec.d; ++j) out << "f" << j << ",";
    out << "y\n";
    DetRng rng(splitmix64(spec.seed ^ 0x5EEDULL));
    char buf[64];
    for (std::size_t i = 0; i < spec.n; ++i) {
        SyntheticSample row = synthetic_row(spec, rng);
        for (std::size_t j = 0; j < spec.d; ++j) {
            std::snprintf(buf, sizeof buf, "%.10g", row.features[j]);
            out << buf << ",";
        }
        if (spec.task == Task::classification)
            out << static_cast<int>(row.label) << "\n";
        else {
            std::snprintf(buf, sizeof buf, "%.10g", row.label);
            out << buf << "\n";
        }
    }
}

}  // namespace tjepa
