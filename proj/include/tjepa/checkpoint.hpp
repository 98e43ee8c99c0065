#pragma once
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tjepa/hash.hpp"
#include "tjepa/model.hpp"

namespace tjepa {

using json = nlohmann::json;

template <typename Real>
constexpr const char* dtype_name() {
    if constexpr (sizeof(Real) == 4) return "f32";
    else return "f64";
}

// ---------------------------------------------------------------------------
// generic container: JSON manifest listing named tensors + raw little-endian
// blob. Used for checkpoints and embedding exports alike.
// ---------------------------------------------------------------------------

template <typename Real>
void write_tensor_container(const std::string& stem,
                            const std::vector<std::pair<std::string, const Tensor<Real>*>>& tensors,
                            json extra) {
    std::string blob;
    json entries = json::array();
    for (const auto& [name, t] : tensors) {
        json e;
        e["name"] = name;
        e["shape"] = t->shape();
        e["offset"] = blob.size();
        e["bytes"] = t->size() * sizeof(Real);
        entries.push_back(std::move(e));
        std::size_t old = blob.size();
        blob.resize(old + t->size() * sizeof(Real));
        std::memcpy(blob.data() + old, t->data(), t->size() * sizeof(Real));
    }
    json manifest = std::move(extra);
    manifest["container"] = "tjepa-tensors-v1";
    manifest["dtype"] = dtype_name<Real>();
    manifest["tensors"] = std::move(entries);
    manifest["blob"] = stem.substr(stem.find_last_of('/') + 1) + ".bin";
    manifest["blob_hash"] = fnv64_hex(blob);

    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw io_error("cannot write " + stem + ".bin");
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream man(stem + ".json");
    if (!man) throw io_error("cannot write " + stem + ".json");
    man << manifest.dump(2) << "\n";
}

template <typename Real>
struct TensorContainer {
    json manifest;
    std::map<std::string, Tensor<Real>> tensors;
};

template <typename Real>
TensorContainer<Real> read_tensor_container(const std::string& stem) {
    std::ifstream man(stem + ".json");
    if (!man) throw io_error("cannot open " + stem + ".json");
    TensorContainer<Real> out;
    try {
        man >> out.manifest;
    } catch (const json::exception& e) {
        throw parse_error("bad manifest " + stem + ".json: " + e.what());
    }
    if (out.manifest.value("container", "") != "tjepa-tensors-v1")
        throw parse_error("not a tensor container: " + stem + ".json");
    if (out.manifest.value("dtype", "") != dtype_name<Real>())
        throw parse_error("container dtype " + out.manifest.value("dtype", "?") + " does not match " +
                          dtype_name<Real>());

    std::ifstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw io_error("cannot open " + stem + ".bin");
    std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (fnv64_hex(blob) != out.manifest.value("blob_hash", ""))
        throw parse_error("blob hash mismatch for " + stem + ".bin");

    for (const json& e : out.manifest.at("tensors")) {
        std::vector<std::size_t> shape = e.at("shape").get<std::vector<std::size_t>>();
        std::size_t offset = e.at("offset").get<std::size_t>();
        std::size_t bytes = e.at("bytes").get<std::size_t>();
        if (offset + bytes > blob.size()) throw parse_error("tensor extends past blob end");
        Tensor<Real> t(shape);
        if (t.size() * sizeof(Real) != bytes) throw parse_error("tensor byte count does not match shape");
        std::memcpy(t.data(), blob.data() + offset, bytes);
        out.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// schema and hyperparameter serialization
// ---------------------------------------------------------------------------

inline json schema_to_json(const FeatureSchema& s) {
    json out = json::array();
    for (const Feature& f : s.features) {
        json e;
        e["name"] = f.name;
        e["kind"] = f.kind == FeatureKind::numerical ? "num" : "cat";
        e["cardinality"] = f.cardinality;
        if (f.kind == FeatureKind::numerical) {
            e["mean"] = f.mean;
            e["std"] = f.stddev;
        } else {
            json cats = json::object();
            for (const auto& [value, index] : f.categories) cats[value] = index;
            e["categories"] = std::move(cats);
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline FeatureSchema schema_from_json(const json& j) {
    FeatureSchema s;
    for (const json& e : j) {
        Feature f;
        f.name = e.at("name").get<std::string>();
        f.kind = e.at("kind").get<std::string>() == "num" ? FeatureKind::numerical
                                                          : FeatureKind::categorical;
        f.cardinality = e.at("cardinality").get<std::size_t>();
        if (f.kind == FeatureKind::numerical) {
            f.mean = e.at("mean").get<double>();
            f.stddev = e.at("std").get<double>();
        } else {
            for (auto it = e.at("categories").begin(); it != e.at("categories").end(); ++it)
                f.categories[it.key()] = it.value().get<std::size_t>();
        }
        s.features.push_back(std::move(f));
    }
    s.fitted = true;
    return s;
}

inline json hyper_to_json(const ModelHyper& h) {
    return json{{"hidden", h.hidden},       {"layers", h.layers},
                {"heads", h.heads},         {"ffn", h.ffn},
                {"pred_hidden", h.pred_hidden}, {"pred_layers", h.pred_layers},
                {"pred_heads", h.pred_heads}, {"n_reg", h.n_reg}};
}

inline ModelHyper hyper_from_json(const json& j) {
    ModelHyper h;
    h.hidden = j.at("hidden").get<std::size_t>();
    h.layers = j.at("layers").get<std::size_t>();
    h.heads = j.at("heads").get<std::size_t>();
    h.ffn = j.at("ffn").get<std::size_t>();
    h.pred_hidden = j.at("pred_hidden").get<std::size_t>();
    h.pred_layers = j.at("pred_layers").get<std::size_t>();
    h.pred_heads = j.at("pred_heads").get<std::size_t>();
    h.n_reg = j.at("n_reg").get<std::size_t>();
    return h;
}

// ---------------------------------------------------------------------------
// model checkpoints
// ---------------------------------------------------------------------------

template <typename Real>
void save_checkpoint(const std::string& stem, ModelState<Real>& model, const FeatureSchema& schema,
                     long epoch, std::uint64_t step, const std::string& rng_state,
                     const json& config_echo) {
    std::vector<std::pair<std::string, const Tensor<Real>*>> tensors;
    model.visit_all([&](Parameter<Real>& p) { tensors.emplace_back(p.name, &p.value); });
    json extra;
    extra["kind"] = "checkpoint";
    extra["epoch"] = epoch;
    extra["step"] = step;
    extra["schema_hash"] = schema.hash();
    extra["schema"] = schema_to_json(schema);
    extra["hyper"] = hyper_to_json(model.hyper);
    extra["rng_state"] = rng_state;
    extra["config"] = config_echo;
    write_tensor_container<Real>(stem, tensors, std::move(extra));
}

template <typename Real>
struct LoadedCheckpoint {
    ModelState<Real> model;
    FeatureSchema schema;
    long epoch = 0;
    std::uint64_t step = 0;
    std::string rng_state;
    json config_echo;
    std::string schema_hash;
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& stem) {
    TensorContainer<Real> c = read_tensor_container<Real>(stem);
    if (c.manifest.value("kind", "") != "checkpoint")
        throw parse_error(stem + " is not a checkpoint container");
    LoadedCheckpoint<Real> out;
    out.schema = schema_from_json(c.manifest.at("schema"));
    out.schema_hash = c.manifest.at("schema_hash").template get<std::string>();
    out.epoch = c.manifest.at("epoch").template get<long>();
    out.step = c.manifest.at("step").template get<std::uint64_t>();
    out.rng_state = c.manifest.value("rng_state", "");
    out.config_echo = c.manifest.value("config", json::object());

    DetRng scratch(0);
    out.model = init_model<Real>(out.schema, hyper_from_json(c.manifest.at("hyper")), scratch);
    std::size_t filled = 0;
    out.model.visit_all([&](Parameter<Real>& p) {
        auto it = c.tensors.find(p.name);
        if (it == c.tensors.end()) throw parse_error("checkpoint missing tensor " + p.name);
        if (it->second.shape() != p.value.shape())
            throw parse_error("checkpoint tensor " + p.name + " has shape " + it->second.shape_str() +
                              ", model expects " + p.value.shape_str());
        p.value = it->second;
        ++filled;
    });
    if (filled != c.tensors.size())
        throw parse_error("checkpoint holds " + std::to_string(c.tensors.size()) +
                          " tensors, model uses " + std::to_string(filled));
    return out;
}

}  // namespace tjepa
