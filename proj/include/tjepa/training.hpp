#pragma once
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tjepa/analysis.hpp"
#include "tjepa/data.hpp"
#include "tjepa/masking.hpp"
#include "tjepa/model.hpp"

namespace tjepa {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 512;
    long epochs = -1;  // required in config files
    double exp_lr = 1e-3;
    double weight_decay = 0.0;
    double ema_start = 0.996;
    double ema_end = 1.0;
    std::size_t n_context = 1;
    std::size_t n_target = 4;
    double mask_min_ctx_share = 0.4;
    double mask_max_ctx_share = 0.8;
    double mask_min_trgt_share = 0.15;
    double mask_max_trgt_share = 0.35;
    std::size_t model_num_heads = 2;
    std::size_t model_dim_hidden = 16;
    std::size_t model_num_layers = 2;
    std::size_t model_dim_feedforward = 64;
    double model_dropout_prob = 0.0;
    std::size_t pred_num_layers = 2;
    std::size_t pred_embed_dim = 8;
    std::size_t pred_num_heads = 2;
    double pred_p_dropout = 0.0;
    std::size_t n_reg_tokens = 1;
    std::uint64_t seed = 42;
    long checkpoint_every_epochs = 1;
    long snapshot_every_epochs = 10;
    bool loss_normalize_per_element = false;

    void validate() const {
        if (epochs < 0) throw config_error("config: epochs is required and must be >= 0");
        if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
        if (!(exp_lr > 0)) throw config_error("config: exp_lr must be positive");
        if (!(ema_start <= ema_end && ema_end <= 1.0 && ema_start > 0.0))
            throw config_error("config: need 0 < ema_start <= ema_end <= 1");
        if (!(mask_min_ctx_share <= mask_max_ctx_share))
            throw config_error("config: mask_min_ctx_share <= mask_max_ctx_share violated");
        if (!(mask_min_trgt_share <= mask_max_trgt_share))
            throw config_error("config: mask_min_trgt_share <= mask_max_trgt_share violated");
        if (checkpoint_every_epochs < 0) throw config_error("config: checkpoint_every_epochs >= 0");
        to_hyper().validate();
    }

    ModelHyper to_hyper() const {
        ModelHyper h;
        h.hidden = model_dim_hidden;
        h.layers = model_num_layers;
        h.heads = model_num_heads;
        h.ffn = model_dim_feedforward;
        h.pred_hidden = pred_embed_dim;
        h.pred_layers = pred_num_layers;
        h.pred_heads = pred_num_heads;
        h.n_reg = n_reg_tokens;
        return h;
    }

    ShareBounds ctx_share() const { return {mask_min_ctx_share, mask_max_ctx_share}; }
    ShareBounds tgt_share() const { return {mask_min_trgt_share, mask_max_trgt_share}; }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"exp_lr", c.exp_lr},
        {"weight_decay", c.weight_decay},
        {"ema_start", c.ema_start},
        {"ema_end", c.ema_end},
        {"n_context", c.n_context},
        {"n_target", c.n_target},
        {"mask_min_ctx_share", c.mask_min_ctx_share},
        {"mask_max_ctx_share", c.mask_max_ctx_share},
        {"mask_min_trgt_share", c.mask_min_trgt_share},
        {"mask_max_trgt_share", c.mask_max_trgt_share},
        {"model_num_heads", c.model_num_heads},
        {"model_dim_hidden", c.model_dim_hidden},
        {"model_num_layers", c.model_num_layers},
        {"model_dim_feedforward", c.model_dim_feedforward},
        {"model_dropout_prob", c.model_dropout_prob},
        {"pred_num_layers", c.pred_num_layers},
        {"pred_embed_dim", c.pred_embed_dim},
        {"pred_num_heads", c.pred_num_heads},
        {"pred_p_dropout", c.pred_p_dropout},
        {"n_reg_tokens", c.n_reg_tokens},
        {"seed", c.seed},
        {"checkpoint_every_epochs", c.checkpoint_every_epochs},
        {"snapshot_every_epochs", c.snapshot_every_epochs},
        {"loss_normalize_per_element", c.loss_normalize_per_element}};
}

// Strict parse: unknown keys are rejected by name, known keys override the
// defaults above. Key names follow the published hyperparameter table.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw config_error("config: expected a JSON object");
    static const std::set<std::string> known = {
        "batch_size", "epochs", "exp_lr", "weight_decay", "ema_start", "ema_end",
        "n_context", "n_target", "mask_min_ctx_share", "mask_max_ctx_share",
        "mask_min_trgt_share", "mask_max_trgt_share", "model_num_heads", "model_dim_hidden",
        "model_num_layers", "model_dim_feedforward", "model_dropout_prob", "pred_num_layers",
        "pred_embed_dim", "pred_num_heads", "pred_p_dropout", "n_reg_tokens", "seed",
        "checkpoint_every_epochs", "snapshot_every_epochs", "loss_normalize_per_element"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw config_error("config: unknown key '" + it.key() + "'");

    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("exp_lr", c.exp_lr);
    get("weight_decay", c.weight_decay);
    get("ema_start", c.ema_start);
    get("ema_end", c.ema_end);
    get("n_context", c.n_context);
    get("n_target", c.n_target);
    get("mask_min_ctx_share", c.mask_min_ctx_share);
    get("mask_max_ctx_share", c.mask_max_ctx_share);
    get("mask_min_trgt_share", c.mask_min_trgt_share);
    get("mask_max_trgt_share", c.mask_max_trgt_share);
    get("model_num_heads", c.model_num_heads);
    get("model_dim_hidden", c.model_dim_hidden);
    get("model_num_layers", c.model_num_layers);
    get("model_dim_feedforward", c.model_dim_feedforward);
    get("model_dropout_prob", c.model_dropout_prob);
    get("pred_num_layers", c.pred_num_layers);
    get("pred_embed_dim", c.pred_embed_dim);
    get("pred_num_heads", c.pred_num_heads);
    get("pred_p_dropout", c.pred_p_dropout);
    get("n_reg_tokens", c.n_reg_tokens);
    get("seed", c.seed);
    get("checkpoint_every_epochs", c.checkpoint_every_epochs);
    get("snapshot_every_epochs", c.snapshot_every_epochs);
    get("loss_normalize_per_element", c.loss_normalize_per_element);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// loss and schedules
// ---------------------------------------------------------------------------

// Double average over mask pairs of the squared l2 distance between predicted
// and target blocks. The squared norm sums over the whole block; per-element
// normalization is an optional variant for scale studies. Differentiable with
// respect to the predictions only: targets enter as constants.
template <typename Real>
NodeId tjepa_loss(Graph<Real>& g, const std::vector<NodeId>& preds,
                  const std::vector<Tensor<Real>>& targets, std::size_t n_context,
                  std::size_t n_target, bool per_element = false) {
    if (preds.size() != targets.size() || preds.size() != n_context * n_target)
        throw shape_error("loss: expected one prediction per (context, target) mask pair");
    std::vector<NodeId> terms;
    terms.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!g.value(preds[i]).same_shape(targets[i]))
            throw shape_error("loss: prediction " + g.value(preds[i]).shape_str() +
                              " vs target " + targets[i].shape_str());
        NodeId term = sum_sq(g, sub(g, preds[i], g.input(targets[i])));
        if (per_element)
            term = scale(g, term, Real(1) / static_cast<Real>(targets[i].size()));
        terms.push_back(term);
    }
    Real norm = Real(1) / static_cast<Real>(n_context * n_target);
    return scale(g, add_n(g, terms), norm);
}

// theta_bar' = m * theta_bar + (1 - m) * theta, elementwise
template <typename Real>
void ema_update(const std::vector<Parameter<Real>*>& target_params,
                const std::vector<Parameter<Real>*>& context_params, double momentum) {
    if (momentum < 0.0 || momentum > 1.0) throw config_error("ema momentum must be in [0,1]");
    if (target_params.size() != context_params.size())
        throw shape_error("ema: parameter trees differ in size");
    Real m = static_cast<Real>(momentum);
    Real one_minus = Real(1) - m;
    for (std::size_t i = 0; i < target_params.size(); ++i) {
        Tensor<Real>& t = target_params[i]->value;
        const Tensor<Real>& c = context_params[i]->value;
        if (!t.same_shape(c)) throw shape_error("ema: shape mismatch at " + target_params[i]->name);
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = m * t[k] + one_minus * c[k];
    }
}

inline double momentum_schedule(std::uint64_t step, std::uint64_t total_steps, double ema_start = 0.996,
                                double ema_end = 1.0) {
    if (total_steps == 0) return ema_start;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return ema_start + (ema_end - ema_start) * frac;
}

inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
    if (total_steps == 0) return lr0;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * lr0 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// AdamW with decoupled weight decay and bias-corrected moments. A step with
// any non-finite gradient is skipped and counted instead of poisoning state.
template <typename Real>
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    bool step(const std::vector<Parameter<Real>*>& params, double lr) {
        for (Parameter<Real>* p : params)
            if (!p->grad.all_finite()) {
                ++skipped_;
                return false;
            }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (Parameter<Real>* p : params) {
            Slot& s = slot_(p);
            Tensor<Real>& val = p->value;
            const Tensor<Real>& g = p->grad;
            Real decay = static_cast<Real>(1.0 - lr * wd_);
            for (std::size_t i = 0; i < val.size(); ++i) {
                s.m[i] = static_cast<Real>(beta1_) * s.m[i] + static_cast<Real>(1.0 - beta1_) * g[i];
                s.v[i] = static_cast<Real>(beta2_) * s.v[i] + static_cast<Real>(1.0 - beta2_) * g[i] * g[i];
                double mhat = static_cast<double>(s.m[i]) / bc1;
                double vhat = static_cast<double>(s.v[i]) / bc2;
                val[i] = decay * val[i] - static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
        return true;
    }

    std::uint64_t step_count() const { return t_; }
    std::size_t skipped() const { return skipped_; }

private:
    struct Slot {
        Tensor<Real> m, v;
    };

    Slot& slot_(Parameter<Real>* p) {
        auto it = slots_.find(p);
        if (it != slots_.end()) {
            if (!it->second.m.same_shape(p->value)) throw shape_error("optimizer: parameter shape changed");
            return it->second;
        }
        Slot s{Tensor<Real>::zeros(p->value.shape()), Tensor<Real>::zeros(p->value.shape())};
        return slots_.emplace(p, std::move(s)).first->second;
    }

    double beta1_, beta2_, eps_, wd_;
    std::uint64_t t_ = 0;
    std::size_t skipped_ = 0;
    std::unordered_map<Parameter<Real>*, Slot> slots_;
};

// ---------------------------------------------------------------------------
// pretraining loop
// ---------------------------------------------------------------------------

struct StepRecord {
    std::uint64_t step = 0;
    long epoch = 0;
    double loss = 0;
    double lr = 0;
    double momentum = 0;
};

struct SnapshotRecord {
    long epoch = 0;
    double uniformity = 0;
    double mean_pairwise_dist = 0;
};

template <typename Real>
struct PretrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(long epoch, ModelState<Real>&, const RngBundle&, std::uint64_t step)> on_checkpoint;
    std::function<void(const SnapshotRecord&)> on_snapshot;
    // fires after optimizer + EMA with this step's gradients still in place
    std::function<void(ModelState<Real>&, double momentum)> after_update;
};

template <typename Real>
struct PretrainResult {
    ModelState<Real> model;
    std::vector<StepRecord> log;
    std::vector<SnapshotRecord> snapshots;
    std::size_t skipped_steps = 0;
};

namespace detail {

template <typename Real>
SnapshotRecord take_snapshot(long epoch, ModelState<Real>& model, const TabularDataset& ds,
                             const FeatureSchema& schema, const std::vector<std::size_t>& train_rows) {
    std::vector<std::size_t> rows(train_rows.begin(),
                                  train_rows.begin() + std::min<std::size_t>(train_rows.size(), 256));
    Tensor<Real> reps = representation_matrix(model, ds, schema, rows);
    SnapshotRecord rec;
    rec.epoch = epoch;
    rec.uniformity = uniformity(reps.template cast<double>());
    rec.mean_pairwise_dist = mean_pairwise(PairwiseMetric::euclidean, reps.template cast<double>());
    return rec;
}

}  // namespace detail

// One full pretraining run: per-sample mask sets, context/target forwards,
// latent prediction loss, AdamW on the context path, EMA on the target twin.
template <typename Real>
PretrainResult<Real> pretrain(const TabularDataset& ds, const FeatureSchema& schema,
                              const TrainConfig& cfg, PretrainHooks<Real> hooks = {}) {
    cfg.validate();
    if (!schema.fitted) throw contract_error("pretrain: schema must be fitted");
    std::vector<std::size_t> train_rows = ds.rows_in(Split::train);
    if (train_rows.empty()) throw config_error("pretrain: train split is empty");
    std::size_t d = schema.feature_count();

    RngBundle rngs(cfg.seed);
    PretrainResult<Real> result;
    result.model = init_model<Real>(schema, cfg.to_hyper(), rngs.init);
    ModelState<Real>& model = result.model;

    std::vector<EncodedSample<Real>> encoded;
    encoded.reserve(train_rows.size());
    for (std::size_t r : train_rows) encoded.push_back(transform<Real>(ds, schema, r));

    std::vector<Parameter<Real>*> trainable = model.trainable_parameters();
    std::vector<Parameter<Real>*> ctx_params = model.context_encoder_parameters();
    std::vector<Parameter<Real>*> tgt_params = model.target_encoder_parameters();
    AdamW<Real> opt(0.9, 0.999, 1e-8, cfg.weight_decay);

    std::size_t n = encoded.size();
    std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.epochs) * steps_per_epoch;

    if (hooks.on_checkpoint) hooks.on_checkpoint(0, model, rngs, 0);
    bool want_snapshots = cfg.snapshot_every_epochs >= 0;
    if (cfg.epochs > 0 && want_snapshots) {
        SnapshotRecord snap = detail::take_snapshot(0, model, ds, schema, train_rows);
        result.snapshots.push_back(snap);
        if (hooks.on_snapshot) hooks.on_snapshot(snap);
    }

    std::uint64_t step = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rngs.shuffle.shuffle(order);
        for (std::size_t batch_start = 0; batch_start < n; batch_start += cfg.batch_size) {
            std::size_t batch_end = std::min(n, batch_start + cfg.batch_size);
            double lr = cosine_lr(step, total_steps, cfg.exp_lr);
            double momentum = momentum_schedule(step, total_steps, cfg.ema_start, cfg.ema_end);

            for (Parameter<Real>* p : trainable) p->zero_grad();
            Graph<Real> g(512 * (batch_end - batch_start));
            std::vector<NodeId> sample_losses;
            sample_losses.reserve(batch_end - batch_start);

            for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
                const EncodedSample<Real>& enc = encoded[order[bi]];
                MaskSet ms = sample_mask_set(d, cfg.n_context, cfg.n_target, cfg.ctx_share(),
                                             cfg.tgt_share(), rngs.mask);

                NodeId tgt_tokens = embed_forward(g, enc, std::nullopt, model, /*trainable=*/false);
                NodeId tgt_out = target_forward_frozen(g, tgt_tokens, model);
                Tensor<Real> tgt_feats = strip_reg(g.value(tgt_out), cfg.n_reg_tokens);

                std::vector<NodeId> preds;
                std::vector<Tensor<Real>> targets;
                preds.reserve(cfg.n_context * cfg.n_target);
                for (const Mask& mc : ms.context_masks) {
                    NodeId ctx_tokens = embed_forward(g, enc, mc, model, /*trainable=*/true);
                    NodeId ctx_out = context_forward(g, ctx_tokens, model, /*trainable=*/true,
                                                     cfg.model_dropout_prob, &rngs.dropout);
                    NodeId ctx_feats = strip_reg(g, ctx_out, cfg.n_reg_tokens);
                    for (const Mask& mt : ms.target_masks) {
                        preds.push_back(predict_targets(g, ctx_feats, mt, model, /*trainable=*/true,
                                                        cfg.pred_p_dropout, &rngs.dropout));
                        targets.push_back(apply_target_mask(tgt_feats, mt));
                    }
                }
                sample_losses.push_back(
                    tjepa_loss(g, preds, targets, cfg.n_context, cfg.n_target,
                               cfg.loss_normalize_per_element));
            }

            NodeId batch_loss = scale(g, add_n(g, sample_losses),
                                      Real(1) / static_cast<Real>(sample_losses.size()));
            double loss_value = static_cast<double>(g.value(batch_loss).item());
            if (!std::isfinite(loss_value))
                throw error("pretrain aborted: non-finite loss " + std::to_string(loss_value) +
                            " at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                            " (batch rows " + std::to_string(batch_start) + ".." +
                            std::to_string(batch_end) + ", lr " + std::to_string(lr) + ")");

            g.backward(batch_loss);
            if (!opt.step(trainable, lr)) ++result.skipped_steps;
            ema_update(tgt_params, ctx_params, momentum);

            StepRecord rec{step, epoch, loss_value, lr, momentum};
            result.log.push_back(rec);
            if (hooks.on_step) hooks.on_step(rec);
            if (hooks.after_update) hooks.after_update(model, momentum);
            ++step;
        }

        bool final_epoch = epoch == cfg.epochs;
        if (hooks.on_checkpoint &&
            ((cfg.checkpoint_every_epochs > 0 && epoch % cfg.checkpoint_every_epochs == 0) || final_epoch))
            hooks.on_checkpoint(epoch, model, rngs, step);
        if (want_snapshots &&
            ((cfg.snapshot_every_epochs > 0 && epoch % cfg.snapshot_every_epochs == 0) || final_epoch)) {
            SnapshotRecord snap = detail::take_snapshot(epoch, model, ds, schema, train_rows);
            result.snapshots.push_back(snap);
            if (hooks.on_snapshot) hooks.on_snapshot(snap);
        }
    }
    return result;
}

}  // namespace tjepa
