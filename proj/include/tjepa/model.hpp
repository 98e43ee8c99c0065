#pragma once
#include <optional>
#include <string>
#include <vector>

#include "tjepa/data.hpp"
#include "tjepa/masking.hpp"
#include "tjepa/nn.hpp"

namespace tjepa {

template <typename Real>
struct LinearLayer {
    Parameter<Real> w;
    Parameter<Real> b;
};

// Pre-LN transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
template <typename Real>
struct TransformerBlock {
    Parameter<Real> ln1_g, ln1_b;
    Parameter<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<Real> ln2_g, ln2_b;
    Parameter<Real> w1, b1, w2, b2;

    template <typename Fn>
    void visit(Fn&& fn) {
        for (Parameter<Real>* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                                   &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
            fn(*p);
    }
};

template <typename Real>
struct EncoderParams {
    std::vector<TransformerBlock<Real>> blocks;
    std::size_t hidden = 0;
    std::size_t heads = 1;
    std::size_t ffn = 0;

    template <typename Fn>
    void visit(Fn&& fn) {
        for (auto& blk : blocks) blk.visit(fn);
    }
};

// Per-feature Linear(e_j, h) maps plus the index / feature-type / REG
// embedding tables. REG tokens carry only their learned vector.
template <typename Real>
struct EmbeddingParams {
    std::vector<LinearLayer<Real>> feature_maps;
    Parameter<Real> index_emb;  // d x h
    Parameter<Real> type_emb;   // 2 x h: numerical, categorical
    Parameter<Real> reg_tokens; // n_reg x h
    std::size_t hidden = 0;
    std::size_t n_reg = 0;

    template <typename Fn>
    void visit(Fn&& fn) {
        for (auto& fm : feature_maps) {
            fn(fm.w);
            fn(fm.b);
        }
        fn(index_emb);
        fn(type_emb);
        if (n_reg > 0) fn(reg_tokens);
    }
};

// Downsizing linear, narrow transformer stack, shared mask token with additive
// per-feature positional embeddings, upsizing linear back to h.
template <typename Real>
struct PredictorParams {
    LinearLayer<Real> down;  // h -> h_pred
    std::vector<TransformerBlock<Real>> blocks;
    Parameter<Real> mask_token;  // h_pred
    Parameter<Real> pos_emb;     // d x h_pred
    LinearLayer<Real> up;        // h_pred -> h
    std::size_t hidden = 0;
    std::size_t heads = 1;
    std::size_t ffn = 0;

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(down.w);
        fn(down.b);
        for (auto& blk : blocks) blk.visit(fn);
        fn(mask_token);
        fn(pos_emb);
        fn(up.w);
        fn(up.b);
    }
};

struct ModelHyper {
    std::size_t hidden = 16;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ffn = 64;
    std::size_t pred_hidden = 8;
    std::size_t pred_layers = 2;
    std::size_t pred_heads = 2;
    std::size_t n_reg = 1;

    std::size_t pred_ffn() const { return 4 * pred_hidden; }

    void validate() const {
        if (hidden == 0 || heads == 0 || hidden % heads != 0)
            throw config_error("model_dim_hidden must be divisible by model_num_heads");
        if (pred_hidden == 0 || pred_heads == 0 || pred_hidden % pred_heads != 0)
            throw config_error("pred_embed_dim must be divisible by pred_num_heads");
        if (pred_hidden > hidden)
            throw config_error("pred_embed_dim must not exceed model_dim_hidden");
        if (layers == 0 || pred_layers == 0)
            throw config_error("encoder and predictor need at least one layer");
    }
};

template <typename Real>
struct ModelState {
    EmbeddingParams<Real> embedding;
    EncoderParams<Real> context_encoder;  // trained by gradient descent
    EncoderParams<Real> target_encoder;   // updated only via EMA, never holds gradients
    PredictorParams<Real> predictor;
    std::vector<FeatureKind> feature_kinds;
    std::vector<std::size_t> feature_dims;  // e_j per feature
    ModelHyper hyper;
    std::string schema_hash;

    std::size_t feature_count() const { return feature_kinds.size(); }

    template <typename Fn>
    void visit_trainable(Fn&& fn) {
        embedding.visit(fn);
        context_encoder.visit(fn);
        predictor.visit(fn);
    }

    template <typename Fn>
    void visit_all(Fn&& fn) {
        embedding.visit(fn);
        context_encoder.visit(fn);
        target_encoder.visit(fn);
        predictor.visit(fn);
    }

    std::vector<Parameter<Real>*> trainable_parameters() {
        std::vector<Parameter<Real>*> out;
        visit_trainable([&](Parameter<Real>& p) { out.push_back(&p); });
        return out;
    }

    std::vector<Parameter<Real>*> context_encoder_parameters() {
        std::vector<Parameter<Real>*> out;
        context_encoder.visit([&](Parameter<Real>& p) { out.push_back(&p); });
        return out;
    }

    std::vector<Parameter<Real>*> target_encoder_parameters() {
        std::vector<Parameter<Real>*> out;
        target_encoder.visit([&](Parameter<Real>& p) { out.push_back(&p); });
        return out;
    }
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
Parameter<Real> init_linear_weight(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                                   DetRng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<Real> t({fan_in, fan_out});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.uniform(-bound, bound));
    return Parameter<Real>(name, std::move(t));
}

template <typename Real>
Parameter<Real> init_linear_bias(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                                 DetRng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<Real> t({fan_out});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(rng.uniform(-bound, bound));
    return Parameter<Real>(name, std::move(t));
}

template <typename Real>
Parameter<Real> init_embedding(const std::string& name, std::vector<std::size_t> shape, DetRng& rng) {
    Tensor<Real> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(0.02 * rng.next_normal());
    return Parameter<Real>(name, std::move(t));
}

template <typename Real>
LinearLayer<Real> init_linear(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                              DetRng& rng) {
    return {init_linear_weight<Real>(name + ".w", fan_in, fan_out, rng),
            init_linear_bias<Real>(name + ".b", fan_in, fan_out, rng)};
}

template <typename Real>
TransformerBlock<Real> init_block(const std::string& name, std::size_t h, std::size_t ffn, DetRng& rng) {
    TransformerBlock<Real> b;
    b.ln1_g = Parameter<Real>(name + ".ln1.g", Tensor<Real>::full({h}, Real(1)));
    b.ln1_b = Parameter<Real>(name + ".ln1.b", Tensor<Real>::zeros({h}));
    b.wq = init_linear_weight<Real>(name + ".wq", h, h, rng);
    b.bq = init_linear_bias<Real>(name + ".bq", h, h, rng);
    b.wk = init_linear_weight<Real>(name + ".wk", h, h, rng);
    b.bk = init_linear_bias<Real>(name + ".bk", h, h, rng);
    b.wv = init_linear_weight<Real>(name + ".wv", h, h, rng);
    b.bv = init_linear_bias<Real>(name + ".bv", h, h, rng);
    b.wo = init_linear_weight<Real>(name + ".wo", h, h, rng);
    b.bo = init_linear_bias<Real>(name + ".bo", h, h, rng);
    b.ln2_g = Parameter<Real>(name + ".ln2.g", Tensor<Real>::full({h}, Real(1)));
    b.ln2_b = Parameter<Real>(name + ".ln2.b", Tensor<Real>::zeros({h}));
    b.w1 = init_linear_weight<Real>(name + ".ffn1.w", h, ffn, rng);
    b.b1 = init_linear_bias<Real>(name + ".ffn1.b", h, ffn, rng);
    b.w2 = init_linear_weight<Real>(name + ".ffn2.w", ffn, h, rng);
    b.b2 = init_linear_bias<Real>(name + ".ffn2.b", ffn, h, rng);
    return b;
}

template <typename Real>
EncoderParams<Real> init_encoder(const std::string& prefix, std::size_t layers, std::size_t h,
                                 std::size_t heads, std::size_t ffn, DetRng& rng) {
    EncoderParams<Real> enc;
    enc.hidden = h;
    enc.heads = heads;
    enc.ffn = ffn;
    enc.blocks.reserve(layers);
    for (std::size_t i = 0; i < layers; ++i)
        enc.blocks.push_back(init_block<Real>(prefix + ".blk" + std::to_string(i), h, ffn, rng));
    return enc;
}

}  // namespace detail

template <typename Real>
ModelState<Real> init_model(const FeatureSchema& schema, const ModelHyper& hyper, DetRng& rng) {
    hyper.validate();
    if (!schema.fitted) throw contract_error("init_model: schema must be fitted");
    ModelState<Real> m;
    m.hyper = hyper;
    m.schema_hash = schema.hash();
    std::size_t d = schema.feature_count();
    if (d < 2) throw config_error("model needs at least 2 features");
    std::size_t h = hyper.hidden;

    m.embedding.hidden = h;
    m.embedding.n_reg = hyper.n_reg;
    for (std::size_t j = 0; j < d; ++j) {
        const Feature& f = schema.features[j];
        m.feature_kinds.push_back(f.kind);
        m.feature_dims.push_back(f.cardinality);
        m.embedding.feature_maps.push_back(
            detail::init_linear<Real>("embed.f" + std::to_string(j), f.cardinality, h, rng));
    }
    m.embedding.index_emb = detail::init_embedding<Real>("embed.index", {d, h}, rng);
    m.embedding.type_emb = detail::init_embedding<Real>("embed.type", {2, h}, rng);
    m.embedding.reg_tokens = hyper.n_reg > 0
                                 ? detail::init_embedding<Real>("embed.reg", {hyper.n_reg, h}, rng)
                                 : Parameter<Real>("embed.reg", Tensor<Real>::zeros({0, h}));

    m.context_encoder = detail::init_encoder<Real>("ctx", hyper.layers, h, hyper.heads, hyper.ffn, rng);
    // the target twin starts as an exact copy of the context encoder
    m.target_encoder = m.context_encoder;
    m.target_encoder.visit([](Parameter<Real>& p) { p.name = "tgt" + p.name.substr(3); });

    std::size_t hp = hyper.pred_hidden;
    m.predictor.hidden = hp;
    m.predictor.heads = hyper.pred_heads;
    m.predictor.ffn = hyper.pred_ffn();
    m.predictor.down = detail::init_linear<Real>("pred.down", h, hp, rng);
    for (std::size_t i = 0; i < hyper.pred_layers; ++i)
        m.predictor.blocks.push_back(
            detail::init_block<Real>("pred.blk" + std::to_string(i), hp, m.predictor.ffn, rng));
    m.predictor.mask_token = detail::init_embedding<Real>("pred.mask_token", {hp}, rng);
    m.predictor.pos_emb = detail::init_embedding<Real>("pred.pos", {d, hp}, rng);
    m.predictor.up = detail::init_linear<Real>("pred.up", hp, h, rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward paths
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
NodeId use(Graph<Real>& g, Parameter<Real>& p, bool trainable) {
    return trainable ? g.param(p) : g.frozen(p);
}

}  // namespace detail

// Token matrix for one sample under a context mask: per-feature linear
// embedding plus index and feature-type embeddings, REG rows appended last.
template <typename Real>
NodeId embed_forward(Graph<Real>& g, const EncodedSample<Real>& enc,
                     const std::optional<Mask>& mask, ModelState<Real>& m, bool trainable) {
    std::size_t d = m.feature_count();
    Mask effective = mask.has_value() ? *mask : Mask::none(d);
    auto kept = apply_context_mask(enc, effective);
    if (kept.empty()) throw shape_error("embed_forward: mask keeps no features");

    std::vector<NodeId> rows;
    rows.reserve(kept.size());
    std::vector<std::size_t> indices, kind_rows;
    for (auto& [j, values] : kept) {
        if (values.size() != m.feature_dims[j])
            throw shape_error("embed_forward: feature " + std::to_string(j) + " has dim " +
                              std::to_string(values.size()) + ", embedding expects " +
                              std::to_string(m.feature_dims[j]));
        NodeId x = g.input(Tensor<Real>({1, values.size()}, values));
        rows.push_back(linear(g, x, detail::use(g, m.embedding.feature_maps[j].w, trainable),
                              detail::use(g, m.embedding.feature_maps[j].b, trainable)));
        indices.push_back(j);
        kind_rows.push_back(m.feature_kinds[j] == FeatureKind::numerical ? 0 : 1);
    }
    NodeId feats = rows.size() == 1 ? rows[0] : concat_rows(g, rows);
    NodeId idx = gather_rows(g, detail::use(g, m.embedding.index_emb, trainable), indices);
    NodeId typ = gather_rows(g, detail::use(g, m.embedding.type_emb, trainable), kind_rows);
    NodeId tokens = add(g, add(g, feats, idx), typ);
    if (m.embedding.n_reg > 0)
        tokens = concat_rows(g, {tokens, detail::use(g, m.embedding.reg_tokens, trainable)});
    return tokens;
}

template <typename Real>
NodeId transformer_block_forward(Graph<Real>& g, NodeId x, TransformerBlock<Real>& blk,
                                 std::size_t heads, bool trainable, double dropout_p, DetRng* rng) {
    auto u = [&](Parameter<Real>& p) { return detail::use(g, p, trainable); };
    NodeId normed = layer_norm_rows(g, x, u(blk.ln1_g), u(blk.ln1_b), Real(1e-5));
    NodeId attn = multi_head_self_attention(g, normed, u(blk.wq), u(blk.bq), u(blk.wk), u(blk.bk),
                                            u(blk.wv), u(blk.bv), u(blk.wo), u(blk.bo), heads);
    if (dropout_p > 0.0 && rng) attn = dropout(g, attn, dropout_p, *rng);
    NodeId mid = add(g, x, attn);
    NodeId normed2 = layer_norm_rows(g, mid, u(blk.ln2_g), u(blk.ln2_b), Real(1e-5));
    NodeId ff = linear(g, gelu(g, linear(g, normed2, u(blk.w1), u(blk.b1))), u(blk.w2), u(blk.b2));
    if (dropout_p > 0.0 && rng) ff = dropout(g, ff, dropout_p, *rng);
    return add(g, mid, ff);
}

template <typename Real>
NodeId encoder_forward(Graph<Real>& g, NodeId tokens, EncoderParams<Real>& enc, bool trainable,
                       double dropout_p = 0.0, DetRng* rng = nullptr) {
    if (g.value(tokens).rows() < 1) throw shape_error("encoder: empty token sequence");
    NodeId x = tokens;
    for (auto& blk : enc.blocks)
        x = transformer_block_forward(g, x, blk, enc.heads, trainable, dropout_p, rng);
    return x;
}

template <typename Real>
NodeId context_forward(Graph<Real>& g, NodeId tokens, ModelState<Real>& m, bool trainable = true,
                       double dropout_p = 0.0, DetRng* rng = nullptr) {
    return encoder_forward(g, tokens, m.context_encoder, trainable, dropout_p, rng);
}

// Differentiable use of the target encoder is a contract violation: its
// parameters are updated only through the EMA, never through backward.
template <typename Real>
NodeId target_forward(Graph<Real>&, NodeId, ModelState<Real>&) {
    throw contract_error(
        "target encoder output is not differentiable; its parameters update via EMA only");
}

// No-grad target path on a caller-supplied graph (weights enter as constants).
template <typename Real>
NodeId target_forward_frozen(Graph<Real>& g, NodeId tokens, ModelState<Real>& m) {
    return encoder_forward(g, tokens, m.target_encoder, /*trainable=*/false);
}

// Drops the n_reg trailing REG rows.
template <typename Real>
NodeId strip_reg(Graph<Real>& g, NodeId tokens, std::size_t n_reg) {
    std::size_t rows = g.value(tokens).rows();
    if (rows < n_reg) throw shape_error("strip_reg: fewer rows than REG tokens");
    if (n_reg == 0) return tokens;
    return slice_rows(g, tokens, 0, rows - n_reg);
}

template <typename Real>
Tensor<Real> strip_reg(const Tensor<Real>& tokens, std::size_t n_reg) {
    std::size_t rows = tokens.rows();
    if (rows < n_reg) throw shape_error("strip_reg: fewer rows than REG tokens");
    if (n_reg == 0) return tokens;
    Tensor<Real> out({rows - n_reg, tokens.cols()});
    std::copy(tokens.data(), tokens.data() + out.size(), out.data());
    return out;
}

// Predicts the target rows named by target_mask from a REG-free context
// representation: downsize, append mask tokens (shared vector + positional
// embedding of each target feature index), run the predictor stack, upsize.
// Output rows follow ascending target feature index.
template <typename Real>
NodeId predict_targets(Graph<Real>& g, NodeId ctx_feats, const Mask& target_mask, ModelState<Real>& m,
                       bool trainable = true, double dropout_p = 0.0, DetRng* rng = nullptr) {
    std::size_t l_c = g.value(ctx_feats).rows();
    if (l_c == 0) throw shape_error("predict_targets: empty context");
    std::vector<std::size_t> targets = target_mask.visible_indices();
    if (targets.empty()) throw shape_error("predict_targets: target mask keeps no features");
    if (target_mask.size() != m.feature_count())
        throw shape_error("predict_targets: mask length does not match feature count");

    PredictorParams<Real>& pred = m.predictor;
    auto u = [&](Parameter<Real>& p) { return detail::use(g, p, trainable); };
    NodeId down = linear(g, ctx_feats, u(pred.down.w), u(pred.down.b));
    NodeId pos = gather_rows(g, u(pred.pos_emb), targets);
    NodeId mask_rows = add_rowvec(g, pos, u(pred.mask_token));
    NodeId seq = concat_rows(g, {down, mask_rows});
    for (auto& blk : pred.blocks)
        seq = transformer_block_forward(g, seq, blk, pred.heads, trainable, dropout_p, rng);
    NodeId outputs = slice_rows(g, seq, l_c, targets.size());
    return linear(g, outputs, u(pred.up.w), u(pred.up.b));
}

// ---------------------------------------------------------------------------
// inference-time representations (dropout off, REG stripped)
// ---------------------------------------------------------------------------

// d x h context-encoder representation of a full (unmasked) sample.
template <typename Real>
Tensor<Real> representation(ModelState<Real>& m, const EncodedSample<Real>& enc) {
    Graph<Real> g(512);
    NodeId tokens = embed_forward(g, enc, std::nullopt, m, /*trainable=*/false);
    NodeId out = encoder_forward(g, tokens, m.context_encoder, /*trainable=*/false);
    return strip_reg(g.value(out), m.embedding.n_reg);
}

// Target-encoder representation of a full sample, REG still attached.
template <typename Real>
Tensor<Real> target_representation(ModelState<Real>& m, const EncodedSample<Real>& enc) {
    Graph<Real> g(512);
    NodeId tokens = embed_forward(g, enc, std::nullopt, m, /*trainable=*/false);
    return g.value(target_forward_frozen(g, tokens, m));
}

// n x (d*h) matrix of flattened representations for the given rows.
template <typename Real>
Tensor<Real> representation_matrix(ModelState<Real>& m, const TabularDataset& ds,
                                   const FeatureSchema& schema, const std::vector<std::size_t>& rows) {
    std::size_t d = m.feature_count();
    std::size_t h = m.hyper.hidden;
    Tensor<Real> out({rows.size(), d * h});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EncodedSample<Real> enc = transform<Real>(ds, schema, rows[i]);
        Tensor<Real> rep = representation(m, enc);
        std::copy(rep.data(), rep.data() + rep.size(), out.data() + i * d * h);
    }
    return out;
}

}  // namespace tjepa
