#pragma once
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tjepa/errors.hpp"
#include "tjepa/hash.hpp"
#include "tjepa/rng.hpp"

namespace tjepa {

enum class FeatureKind { numerical, categorical };

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw config_error("unknown split: " + s);
}

// Per-feature metadata plus the normalization statistics fitted on the train
// split. e_j is 1 for numerical features and the category count otherwise.
struct Feature {
    std::string name;
    FeatureKind kind = FeatureKind::numerical;
    std::size_t cardinality = 1;
    double mean = 0.0;   // numerical only, 64-bit
    double stddev = 0.0; // population std
    std::map<std::string, std::size_t> categories;  // categorical only, dense [0, e_j)
};

struct FeatureSchema {
    std::vector<Feature> features;
    bool fitted = false;

    std::size_t feature_count() const { return features.size(); }

    std::size_t total_encoded_dim() const {
        std::size_t n = 0;
        for (const auto& f : features) n += f.cardinality;
        return n;
    }

    // canonical serialization, hashed to detect checkpoint/dataset mismatches
    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& f : features) {
            os << f.name << '\x1f' << (f.kind == FeatureKind::numerical ? "num" : "cat") << '\x1f'
               << f.cardinality << '\x1f';
            if (f.kind == FeatureKind::numerical) {
                os << f.mean << '\x1f' << f.stddev;
            } else {
                for (const auto& [value, index] : f.categories) os << value << '\x1e' << index << '\x1e';
            }
            os << '\x1d';
        }
        return os.str();
    }

    std::string hash() const { return fnv64_hex(canonical()); }
};

// Raw table: numeric columns parsed once at load, categorical kept as strings.
// The target column, when present, is held apart from the d input features.
struct TabularDataset {
    FeatureSchema schema;  // kinds/cardinality known at load; stats filled by fit
    std::vector<std::vector<double>> numeric_cols;      // index aligned с schema, empty for categorical
    std::vector<std::vector<std::string>> string_cols;  // empty for numerical
    std::vector<std::string> target;                    // raw target values, may be empty
    std::string target_name;
    std::vector<Split> splits;  // per-row, filled by assign_splits
    std::size_t n_rows = 0;

    std::size_t feature_count() const { return schema.feature_count(); }

    std::vector<std::size_t> rows_in(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    bool has_target() const { return !target.empty(); }

    // class labels: target values must be integers 0..k-1 after densification
    std::vector<int> class_labels() const {
        std::vector<int> out(target.size());
        for (std::size_t i = 0; i < target.size(); ++i) {
            char* end = nullptr;
            long v = std::strtol(target[i].c_str(), &end, 10);
            if (end == target[i].c_str() || *end != '\0')
                throw parse_error("target value '" + target[i] + "' is not an integer class");
            out[i] = static_cast<int>(v);
        }
        return out;
    }

    std::vector<double> real_labels() const {
        std::vector<double> out(target.size());
        for (std::size_t i = 0; i < target.size(); ++i) {
            char* end = nullptr;
            out[i] = std::strtod(target[i].c_str(), &end);
            if (end == target[i].c_str() || *end != '\0')
                throw parse_error("target value '" + target[i] + "' is not numeric");
        }
        return out;
    }
};

// Per-feature e_j-dimensional encoding: standardized scalar or one-hot.
template <typename Real>
struct EncodedSample {
    std::vector<std::vector<Real>> features;

    std::size_t feature_count() const { return features.size(); }
};

struct TransformStats {
    std::size_t unseen_categories = 0;
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    const char* begin = s.c_str();
    char* end = nullptr;
    out = std::strtod(begin, &end);
    if (end == begin) return false;
    while (*end == ' ' || *end == '\t') ++end;
    return *end == '\0' && std::isfinite(out);
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

// Loads a UTF-8 comma-separated file. A column is numerical when every cell
// parses as a finite number, categorical otherwise. Rows with missing (empty)
// cells are rejected, naming the offending row.
inline TabularDataset load_csv(const std::string& path, bool has_header,
                               const std::string& target_column) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open data file: " + path);

    std::vector<std::string> names;
    std::vector<std::vector<std::string>> cells;  // per column
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && cells.empty() && names.empty()) continue;
        std::vector<std::string> fields = detail::split_csv_line(line);
        if (names.empty() && cells.empty()) {
            width = fields.size();
            if (has_header) {
                names = fields;
                cells.assign(width, {});
                continue;
            }
            names.reserve(width);
            for (std::size_t j = 0; j < width; ++j) names.push_back("col" + std::to_string(j));
            cells.assign(width, {});
        }
        if (fields.size() != width)
            throw parse_error("row " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                              " columns, got " + std::to_string(fields.size()));
        for (const std::string& f : fields)
            if (f.empty())
                throw parse_error("row " + std::to_string(line_no) + ": missing value");
        for (std::size_t j = 0; j < width; ++j) cells[j].push_back(std::move(fields[j]));
    }
    if (cells.empty() || cells[0].empty()) throw parse_error("empty data file: " + path);

    std::size_t target_idx = width;  // width == "no target"
    if (!target_column.empty()) {
        for (std::size_t j = 0; j < width; ++j)
            if (names[j] == target_column) target_idx = j;
        if (target_idx == width)
            throw config_error("target column '" + target_column + "' not found in " + path);
    }

    TabularDataset ds;
    ds.n_rows = cells[0].size();
    for (std::size_t j = 0; j < width; ++j) {
        if (j == target_idx) {
            ds.target = std::move(cells[j]);
            ds.target_name = names[j];
            continue;
        }
        Feature f;
        f.name = names[j];
        std::vector<double> parsed(cells[j].size());
        bool numeric = true;
        for (std::size_t i = 0; i < cells[j].size() && numeric; ++i)
            numeric = detail::parse_double(cells[j][i], parsed[i]);
        if (numeric) {
            f.kind = FeatureKind::numerical;
            f.cardinality = 1;
            ds.numeric_cols.push_back(std::move(parsed));
            ds.string_cols.emplace_back();
        } else {
            f.kind = FeatureKind::categorical;
            ds.numeric_cols.emplace_back();
            ds.string_cols.push_back(std::move(cells[j]));
        }
        ds.schema.features.push_back(std::move(f));
    }
    ds.splits.assign(ds.n_rows, Split::train);
    return ds;
}

// Deterministic shuffled 80/10/10 partition: |train| = round(0.8 N),
// |val| = round(0.1 N), remainder test.
inline std::vector<Split> make_splits(std::size_t n, std::uint64_t seed) {
    if (n < 10) throw config_error("split: need at least 10 rows, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    DetRng rng(splitmix64(seed ^ 0x5711Aull));
    rng.shuffle(order);
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    std::vector<Split> out(n, Split::test);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) out[order[i]] = Split::train;
        else if (i < n_train + n_val) out[order[i]] = Split::val;
    }
    return out;
}

inline void assign_splits(TabularDataset& ds, std::uint64_t seed) {
    ds.splits = make_splits(ds.n_rows, seed);
}

// Fills schema statistics from the given split only: population mean/std for
// numerical features, lexicographically ordered category dictionaries.
inline FeatureSchema fit_preprocessor(const TabularDataset& ds, Split split = Split::train) {
    std::vector<std::size_t> rows = ds.rows_in(split);
    if (rows.empty()) throw config_error("fit: split '" + std::string(split_name(split)) + "' is empty");
    FeatureSchema schema = ds.schema;
    for (std::size_t j = 0; j < schema.features.size(); ++j) {
        Feature& f = schema.features[j];
        if (f.kind == FeatureKind::numerical) {
            const std::vector<double>& col = ds.numeric_cols[j];
            double mean = 0;
            for (std::size_t i : rows) mean += col[i];
            mean /= static_cast<double>(rows.size());
            double var = 0;
            for (std::size_t i : rows) var += (col[i] - mean) * (col[i] - mean);
            var /= static_cast<double>(rows.size());
            if (var <= 0.0)
                throw config_error("feature '" + f.name + "' is constant on the fit split (zero std)");
            f.mean = mean;
            f.stddev = std::sqrt(var);
        } else {
            const std::vector<std::string>& col = ds.string_cols[j];
            f.categories.clear();
            for (std::size_t i : rows) f.categories.emplace(col[i], 0);
            std::size_t idx = 0;
            for (auto& [value, index] : f.categories) index = idx++;  // std::map is sorted
            f.cardinality = f.categories.size();
        }
    }
    schema.fitted = true;
    return schema;
}

// Encodes one row: (x - mean)/std for numerical features, one-hot for
// categorical. Unseen categories map to the all-zeros vector and are tallied.
template <typename Real>
EncodedSample<Real> transform(const TabularDataset& ds, const FeatureSchema& schema, std::size_t row,
                              TransformStats* stats = nullptr) {
    if (!schema.fitted) throw contract_error("transform: schema is not fitted");
    if (schema.feature_count() != ds.feature_count())
        throw shape_error("transform: schema/dataset feature count mismatch");
    EncodedSample<Real> out;
    out.features.resize(schema.feature_count());
    for (std::size_t j = 0; j < schema.feature_count(); ++j) {
        const Feature& f = schema.features[j];
        if (f.kind == FeatureKind::numerical) {
            double v = (ds.numeric_cols[j][row] - f.mean) / f.stddev;
            out.features[j] = {static_cast<Real>(v)};
        } else {
            std::vector<Real> onehot(f.cardinality, Real(0));
            auto it = f.categories.find(ds.string_cols[j][row]);
            if (it == f.categories.end()) {
                if (stats) ++stats->unseen_categories;
            } else {
                onehot[it->second] = Real(1);
            }
            out.features[j] = std::move(onehot);
        }
    }
    return out;
}

template <typename Real>
std::vector<EncodedSample<Real>> transform_rows(const TabularDataset& ds, const FeatureSchema& schema,
                                                const std::vector<std::size_t>& rows,
                                                TransformStats* stats = nullptr) {
    std::vector<EncodedSample<Real>> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(transform<Real>(ds, schema, r, stats));
    return out;
}

}  // namespace tjepa
