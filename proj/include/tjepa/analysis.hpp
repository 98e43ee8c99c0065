#pragma once
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tjepa/errors.hpp"
#include "tjepa/model.hpp"
#include "tjepa/rng.hpp"
#include "tjepa/tensor.hpp"

namespace tjepa {

// All representation-space diagnostics run in 64-bit regardless of the
// training precision.

// softmax over a flattened embedding; the distribution estimate behind the
// pairwise KL metric
inline std::vector<double> to_distribution(const std::vector<double>& v) {
    if (v.empty()) throw shape_error("to_distribution: empty vector");
    double mx = v[0];
    for (double x : v) {
        if (!std::isfinite(x)) throw shape_error("to_distribution: non-finite input");
        mx = std::max(mx, x);
    }
    std::vector<double> out(v.size());
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// sum P log(P/Q) in nats with 0 log 0 = 0; Q floored at 1e-12 before the log
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw shape_error("kl_divergence: length mismatch");
    if (p.empty()) throw shape_error("kl_divergence: empty distributions");
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0 || q[i] < 0) throw shape_error("kl_divergence: negative entry");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
        throw shape_error("kl_divergence: inputs must sum to 1");
    double kl = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
    }
    return kl;
}

enum class PairwiseMetric { kl, euclidean };

namespace detail {

inline double pair_euclidean(const double* a, const double* b, std::size_t k) {
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double pair_sq_dist(const double* a, const double* b, std::size_t k) {
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace detail

// Mean of the metric over unordered row pairs {i<j}: exact up to sample_cap
// rows, uniformly subsampled pairs beyond that (seeded for reproducibility).
inline double mean_pairwise(PairwiseMetric metric, const Tensor<double>& embeddings,
                            std::size_t sample_cap = 2000, std::uint64_t seed = 0) {
    std::size_t n = embeddings.rows();
    std::size_t k = embeddings.cols();
    if (n < 2) throw shape_error("mean_pairwise: need at least 2 rows");

    std::vector<std::vector<double>> dists;
    if (metric == PairwiseMetric::kl) {
        dists.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            dists.push_back(to_distribution(
                std::vector<double>(embeddings.data() + i * k, embeddings.data() + (i + 1) * k)));
    }
    auto value = [&](std::size_t i, std::size_t j) {
        if (metric == PairwiseMetric::euclidean)
            return detail::pair_euclidean(embeddings.data() + i * k, embeddings.data() + j * k, k);
        return kl_divergence(dists[i], dists[j]);
    };

    if (n <= sample_cap) {
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                sum += value(i, j);
                ++count;
            }
        return sum / static_cast<double>(count);
    }
    DetRng rng(splitmix64(seed ^ 0x9a1157ULL));
    std::size_t budget = sample_cap * (sample_cap - 1) / 2;
    double sum = 0;
    for (std::size_t s = 0; s < budget; ++s) {
        std::size_t i = static_cast<std::size_t>(rng.below(n));
        std::size_t j = static_cast<std::size_t>(rng.below(n - 1));
        if (j >= i) ++j;
        sum += value(std::min(i, j), std::max(i, j));
    }
    return sum / static_cast<double>(budget);
}

// -log of the mean pairwise Gaussian potential exp(-t ||u-v||^2) over raw
// flattened embeddings, computed via logsumexp so spread-out sets cannot
// underflow to -log 0.
inline double uniformity(const Tensor<double>& embeddings, double t = 2.0,
                         std::size_t sample_cap = 2000, std::uint64_t seed = 0) {
    std::size_t n = embeddings.rows();
    std::size_t k = embeddings.cols();
    if (n < 2) throw shape_error("uniformity: need at least 2 rows");
    if (!(t > 0)) throw config_error("uniformity: t must be positive");

    std::vector<double> exponents;
    if (n <= sample_cap) {
        exponents.reserve(n * (n - 1) / 2);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                exponents.push_back(-t * detail::pair_sq_dist(embeddings.data() + i * k,
                                                              embeddings.data() + j * k, k));
    } else {
        DetRng rng(splitmix64(seed ^ 0x9a1157ULL));
        std::size_t budget = sample_cap * (sample_cap - 1) / 2;
        exponents.reserve(budget);
        for (std::size_t s = 0; s < budget; ++s) {
            std::size_t i = static_cast<std::size_t>(rng.below(n));
            std::size_t j = static_cast<std::size_t>(rng.below(n - 1));
            if (j >= i) ++j;
            exponents.push_back(-t * detail::pair_sq_dist(embeddings.data() + i * k,
                                                          embeddings.data() + j * k, k));
        }
    }
    double mx = exponents[0];
    for (double e : exponents) mx = std::max(mx, e);
    double sum = 0;
    for (double e : exponents) sum += std::exp(e - mx);
    double log_mean = mx + std::log(sum) - std::log(static_cast<double>(exponents.size()));
    return -log_mean;
}

// Per-feature variance of the representation around the dimension-wise mean:
// mu_j averages the d features at hidden dim j, sigma_i is the population
// variance over j of (H_ij - mu_j).
inline std::vector<double> embedding_variance(const Tensor<double>& rep) {
    std::size_t d = rep.rows();
    std::size_t h = rep.cols();
    if (!rep.all_finite()) throw shape_error("embedding_variance: non-finite input");
    std::vector<double> mu(h, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < h; ++j) mu[j] += rep(i, j);
    for (double& m : mu) m /= static_cast<double>(d);
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double mean = 0;
        for (std::size_t j = 0; j < h; ++j) mean += rep(i, j) - mu[j];
        mean /= static_cast<double>(h);
        double var = 0;
        for (std::size_t j = 0; j < h; ++j) {
            double c = rep(i, j) - mu[j] - mean;
            var += c * c;
        }
        out[i] = var / static_cast<double>(h);
    }
    return out;
}

struct FeatureRanking {
    std::vector<std::size_t> order;  // feature indices, best first
    std::vector<double> scores;      // score per feature index
    std::string method;

    std::size_t rank_of(std::size_t feature) const {
        for (std::size_t r = 0; r < order.size(); ++r)
            if (order[r] == feature) return r;
        throw shape_error("rank_of: unknown feature");
    }
};

// Features sorted by their average embedding variance across samples,
// descending, ties broken by ascending feature index.
template <typename Real>
FeatureRanking rank_by_variance(ModelState<Real>& model, const TabularDataset& ds,
                                const FeatureSchema& schema, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw shape_error("rank_by_variance: no rows");
    std::size_t d = model.feature_count();
    std::vector<double> mean_score(d, 0.0);
    for (std::size_t r : rows) {
        EncodedSample<Real> enc = transform<Real>(ds, schema, r);
        Tensor<double> rep = representation(model, enc).template cast<double>();
        std::vector<double> sigma = embedding_variance(rep);
        for (std::size_t i = 0; i < d; ++i) mean_score[i] += sigma[i];
    }
    for (double& s : mean_score) s /= static_cast<double>(rows.size());

    FeatureRanking out;
    out.scores = mean_score;
    out.method = "embedding_variance";
    out.order.resize(d);
    for (std::size_t i = 0; i < d; ++i) out.order[i] = i;
    std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
        if (mean_score[a] != mean_score[b]) return mean_score[a] > mean_score[b];
        return a < b;
    });
    return out;
}

struct KendallResult {
    double tau = 0;
    double p_value = 1;
};

// tau-a over two equal-length tie-free rankings; p-value from the normal
// approximation to the null distribution of concordant minus discordant.
inline KendallResult kendall_tau(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size()) throw shape_error("kendall_tau: length mismatch");
    std::size_t n = a.size();
    if (n < 2) throw shape_error("kendall_tau: need at least 2 entries");
    auto validate = [n](std::vector<double>& r) {
        std::vector<double> sorted = r;
        std::sort(sorted.begin(), sorted.end());
        // accept 0-based or 1-based rank vectors
        double base = sorted[0];
        if (base != 0.0 && base != 1.0) throw shape_error("kendall_tau: not a permutation");
        for (std::size_t i = 0; i < n; ++i)
            if (sorted[i] != base + static_cast<double>(i))
                throw shape_error("kendall_tau: not a permutation");
    };
    validate(a);
    validate(b);

    long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = (a[i] - a[j]) * (b[i] - b[j]);
            if (s > 0) ++concordant;
            else ++discordant;
        }
    double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    KendallResult out;
    out.tau = static_cast<double>(concordant - discordant) / pairs;
    double var = static_cast<double>(n) * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
    double z = static_cast<double>(concordant - discordant) / std::sqrt(var);
    out.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
    return out;
}

inline KendallResult kendall_tau(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
    return kendall_tau(std::move(da), std::move(db));
}

}  // namespace tjepa

#include "tjepa/checkpoint.hpp"

namespace tjepa {

// Writes the flattened representations of the given rows in the same
// manifest-plus-blob container checkpoints use, for external visualization.
template <typename Real>
void export_embeddings(ModelState<Real>& model, const TabularDataset& ds, const FeatureSchema& schema,
                       const std::vector<std::size_t>& rows, const std::string& stem,
                       nlohmann::json provenance = nlohmann::json::object()) {
    if (rows.empty()) throw shape_error("export_embeddings: no rows to export");
    Tensor<Real> reps = representation_matrix(model, ds, schema, rows);
    nlohmann::json extra = std::move(provenance);
    extra["kind"] = "embeddings";
    extra["rows"] = rows.size();
    extra["features"] = model.feature_count();
    extra["hidden"] = model.hyper.hidden;
    write_tensor_container<Real>(stem, {{"embeddings", &reps}}, std::move(extra));
}

}  // namespace tjepa
