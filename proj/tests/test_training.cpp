#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "tjepa/training.hpp"

using namespace tjepa;

namespace {

// small all-numerical dataset written straight into the structures
TabularDataset synthetic_numeric(std::size_t n, std::size_t d, std::uint64_t seed) {
    TabularDataset ds;
    DetRng rng(seed);
    for (std::size_t j = 0; j < d; ++j) {
        Feature f;
        f.name = "f" + std::to_string(j);
        f.kind = FeatureKind::numerical;
        f.cardinality = 1;
        ds.schema.features.push_back(std::move(f));
        std::vector<double> col(n);
        for (double& v : col) v = rng.next_normal();
        ds.numeric_cols.push_back(std::move(col));
        ds.string_cols.emplace_back();
    }
    ds.n_rows = n;
    ds.splits.assign(n, Split::train);
    return ds;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.model_dim_hidden = 8;
    cfg.model_num_layers = 1;
    cfg.model_num_heads = 2;
    cfg.model_dim_feedforward = 16;
    cfg.pred_embed_dim = 4;
    cfg.pred_num_heads = 2;
    cfg.pred_num_layers = 1;
    cfg.n_target = 2;
    cfg.n_reg_tokens = 1;
    cfg.snapshot_every_epochs = 0;
    cfg.checkpoint_every_epochs = 0;
    return cfg;
}

template <typename Real>
std::vector<Tensor<Real>> param_values(ModelState<Real>& m) {
    std::vector<Tensor<Real>> out;
    m.visit_all([&](Parameter<Real>& p) { out.push_back(p.value); });
    return out;
}

}  // namespace

TEST_CASE("loss: identity, unit residual, and pair averaging fixtures") {
    // preds equal to targets gives exactly zero
    {
        Graph<double> g;
        Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
        NodeId loss = tjepa_loss(g, {g.input(t)}, {t}, 1, 1);
        CHECK(g.value(loss).item() == 0.0);
    }
    // all-ones residual over a 2x3 block sums six unit squares
    {
        Graph<double> g;
        Tensor<double> pred = Tensor<double>::full({2, 3}, 1.0);
        Tensor<double> tgt = Tensor<double>::zeros({2, 3});
        NodeId loss = tjepa_loss(g, {g.input(pred)}, {tgt}, 1, 1);
        CHECK(g.value(loss).item() == 6.0);
    }
    // |M_context|=2, |M_target|=4: eight blocks of squared norm 8 divide by 8
    {
        Graph<double> g;
        std::vector<NodeId> preds;
        std::vector<Tensor<double>> tgts;
        for (int i = 0; i < 8; ++i) {
            preds.push_back(g.input(Tensor<double>::full({2, 4}, 1.0)));  // 8 unit squares
            tgts.push_back(Tensor<double>::zeros({2, 4}));
        }
        NodeId loss = tjepa_loss(g, preds, tgts, 2, 4);
        CHECK(g.value(loss).item() == 8.0);
    }
    // per-element variant divides each block by its element count
    {
        Graph<double> g;
        NodeId loss = tjepa_loss(g, {g.input(Tensor<double>::full({2, 3}, 1.0))},
                                 {Tensor<double>::zeros({2, 3})}, 1, 1, true);
        CHECK(g.value(loss).item() == doctest::Approx(1.0).epsilon(1e-15));
    }
    // shape mismatch raises
    {
        Graph<double> g;
        CHECK_THROWS_AS(tjepa_loss(g, {g.input(Tensor<double>::zeros({2, 3}))},
                                   {Tensor<double>::zeros({3, 2})}, 1, 1),
                        shape_error);
    }
}

TEST_CASE("loss: invariant to mask ordering within each set") {
    DetRng rng(3);
    std::vector<Tensor<double>> preds_t, tgts;
    for (int i = 0; i < 6; ++i) {  // 2 contexts x 3 targets
        Tensor<double> p({3, 4}), t({3, 4});
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] = rng.uniform(-2, 2);
            t[k] = rng.uniform(-2, 2);
        }
        preds_t.push_back(p);
        tgts.push_back(t);
    }
    auto eval = [&](const std::vector<std::size_t>& order) {
        Graph<double> g;
        std::vector<NodeId> preds;
        std::vector<Tensor<double>> targets;
        for (std::size_t i : order) {
            preds.push_back(g.input(preds_t[i]));
            targets.push_back(tgts[i]);
        }
        return g.value(tjepa_loss(g, preds, targets, 2, 3)).item();
    };
    double base = eval({0, 1, 2, 3, 4, 5});
    // permute targets within each context block, then swap the context blocks
    CHECK(std::abs(eval({2, 0, 1, 5, 3, 4}) - base) < 1e-12);
    CHECK(std::abs(eval({3, 4, 5, 0, 1, 2}) - base) < 1e-12);
}

TEST_CASE("loss: differentiable with respect to predictions only") {
    DetRng rng(5);
    Parameter<double> p("p", Tensor<double>({2, 3}, {1, -1, 2, 0.5, 0, 1}));
    Tensor<double> tgt({2, 3}, {0, 1, 0, 1, 0, 1});
    Graph<double> g;
    NodeId loss = tjepa_loss(g, {g.param(p)}, {tgt}, 1, 1);
    g.backward(loss);
    for (std::size_t i = 0; i < p.value.size(); ++i)
        CHECK(p.grad[i] == doctest::Approx(2.0 * (p.value[i] - tgt[i])).epsilon(1e-12));
}

TEST_CASE("ema_update: endpoint and interior fixtures") {
    Parameter<double> tgt("t", Tensor<double>::zeros({3}));
    Parameter<double> ctx("c", Tensor<double>::full({3}, 1.0));
    std::vector<Parameter<double>*> T = {&tgt}, C = {&ctx};

    ema_update(T, C, 1.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tgt.value[i] == 0.0);

    ema_update(T, C, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tgt.value[i] == 1.0);

    tgt.value.fill(0.0);
    ema_update(T, C, 0.996);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tgt.value[i] == doctest::Approx(0.004).epsilon(1e-12));

    Parameter<double> wrong("w", Tensor<double>::zeros({2}));
    std::vector<Parameter<double>*> W = {&wrong};
    CHECK_THROWS_AS(ema_update(T, {}, 0.5), shape_error);
    CHECK_THROWS_AS(ema_update(T, W, 0.5), shape_error);
}

TEST_CASE("schedules: endpoints, midpoints, monotonicity") {
    CHECK(momentum_schedule(0, 100) == doctest::Approx(0.996).epsilon(1e-15));
    CHECK(momentum_schedule(100, 100) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(momentum_schedule(50, 100) == doctest::Approx(0.998).epsilon(1e-15));

    CHECK(cosine_lr(0, 100, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(cosine_lr(100, 100, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 0.1) == doctest::Approx(0.05).epsilon(1e-12));

    double prev_m = -1, prev_lr = 1e9;
    for (std::uint64_t s = 0; s <= 500; ++s) {
        double m = momentum_schedule(s, 500);
        double lr = cosine_lr(s, 500, 0.01);
        CHECK(m >= prev_m);
        CHECK(lr <= prev_lr);
        prev_m = m;
        prev_lr = lr;
    }
}

TEST_CASE("adamw: fixtures for zero grads, first step, decoupled decay, skip") {
    // zero grads, no decay: parameters unchanged
    {
        Parameter<double> p("p", Tensor<double>::vec({1.0, -2.0}));
        AdamW<double> opt;
        opt.step({&p}, 0.1);
        CHECK(p.value[0] == 1.0);
        CHECK(p.value[1] == -2.0);
    }
    // single scalar, one step, g=1: update is -lr/(1+eps) (hand-evaluated)
    {
        Parameter<double> p("p", Tensor<double>::vec({0.0}));
        p.grad[0] = 1.0;
        AdamW<double> opt;
        opt.step({&p}, 0.01);
        double expect = -0.01 * 1.0 / (1.0 + 1e-8);
        CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-12));
    }
    // weight decay with zero grads: pure multiplicative shrink
    {
        Parameter<double> p("p", Tensor<double>::vec({2.0}));
        AdamW<double> opt(0.9, 0.999, 1e-8, 0.1);
        opt.step({&p}, 0.5);
        CHECK(p.value[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
    }
    // non-finite gradient: step skipped and counted
    {
        Parameter<double> p("p", Tensor<double>::vec({1.0}));
        p.grad[0] = std::numeric_limits<double>::quiet_NaN();
        AdamW<double> opt;
        CHECK_FALSE(opt.step({&p}, 0.1));
        CHECK(opt.skipped() == 1);
        CHECK(p.value[0] == 1.0);
        CHECK(opt.step_count() == 0);
    }
}

TEST_CASE("config: strict schema rejects unknown keys, fills defaults") {
    nlohmann::json good = {{"epochs", 3}, {"model_dim_hidden", 8}, {"model_num_heads", 2},
                           {"model_dim_feedforward", 16}, {"pred_embed_dim", 4}};
    TrainConfig cfg = train_config_from_json(good);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.batch_size == 512);
    CHECK(cfg.ema_start == doctest::Approx(0.996));
    CHECK(cfg.n_target == 4);

    nlohmann::json bad = good;
    bad["lr"] = 0.1;  // not a published name; exp_lr is
    try {
        train_config_from_json(bad);
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("lr") != std::string::npos);
    }

    nlohmann::json no_epochs = {{"model_dim_hidden", 8}};
    CHECK_THROWS_AS(train_config_from_json(no_epochs), config_error);

    nlohmann::json bad_ema = good;
    bad_ema["ema_start"] = 0.9;
    bad_ema["ema_end"] = 0.8;
    CHECK_THROWS_AS(train_config_from_json(bad_ema), config_error);

    // round trip preserves every field
    TrainConfig again = train_config_from_json(train_config_to_json(cfg));
    CHECK(train_config_to_json(again) == train_config_to_json(cfg));
}

TEST_CASE("pretrain: zero epochs returns the initialized state with an empty log") {
    TabularDataset ds = synthetic_numeric(32, 4, 7);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 0;

    PretrainResult<float> res = pretrain<float>(ds, schema, cfg);
    CHECK(res.log.empty());
    CHECK(res.snapshots.empty());

    DetRng rng(cfg.seed);
    RngBundle bundle(cfg.seed);
    ModelState<float> fresh = init_model<float>(schema, cfg.to_hyper(), bundle.init);
    std::vector<Tensor<float>> a = param_values(res.model);
    std::vector<Tensor<float>> b = param_values(fresh);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) CHECK(a[i][k] == b[i][k]);
}

TEST_CASE("pretrain: fixed seed reproduces bit-identical parameters") {
    TabularDataset ds = synthetic_numeric(48, 4, 9);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();

    PretrainResult<float> r1 = pretrain<float>(ds, schema, cfg);
    PretrainResult<float> r2 = pretrain<float>(ds, schema, cfg);
    std::vector<Tensor<float>> a = param_values(r1.model);
    std::vector<Tensor<float>> b = param_values(r2.model);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) REQUIRE(a[i][k] == b[i][k]);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) REQUIRE(r1.log[i].loss == r2.log[i].loss);

    // a different seed must actually change the run
    cfg.seed = 43;
    PretrainResult<float> r3 = pretrain<float>(ds, schema, cfg);
    bool any_diff = false;
    std::vector<Tensor<float>> c = param_values(r3.model);
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
        for (std::size_t k = 0; k < a[i].size() && !any_diff; ++k) any_diff = a[i][k] != c[i][k];
    CHECK(any_diff);
}

TEST_CASE("pretrain: log structure, finite losses, schedule shape, gradient flow") {
    TabularDataset ds = synthetic_numeric(40, 4, 11);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 3;
    cfg.batch_size = 16;  // 3 batches per epoch

    bool theta_grad_nonzero = false, phi_grad_nonzero = false, theta_bar_clean = true;
    PretrainHooks<float> hooks;
    hooks.after_update = [&](ModelState<float>& m, double) {
        m.context_encoder.visit([&](Parameter<float>& p) {
            for (std::size_t i = 0; i < p.grad.size(); ++i)
                if (p.grad[i] != 0.0f) theta_grad_nonzero = true;
        });
        m.predictor.visit([&](Parameter<float>& p) {
            for (std::size_t i = 0; i < p.grad.size(); ++i)
                if (p.grad[i] != 0.0f) phi_grad_nonzero = true;
        });
        m.target_encoder.visit([&](Parameter<float>& p) {
            for (std::size_t i = 0; i < p.grad.size(); ++i)
                if (p.grad[i] != 0.0f) theta_bar_clean = false;
        });
    };
    PretrainResult<float> res = pretrain<float>(ds, schema, cfg, hooks);

    CHECK(res.log.size() == 9);
    CHECK(res.skipped_steps == 0);
    for (std::size_t i = 0; i < res.log.size(); ++i) {
        CHECK(std::isfinite(res.log[i].loss));
        CHECK(res.log[i].step == i);
        if (i) {
            CHECK(res.log[i].lr <= res.log[i - 1].lr);
            CHECK(res.log[i].momentum >= res.log[i - 1].momentum);
        }
    }
    CHECK(res.log.front().momentum == doctest::Approx(0.996).epsilon(1e-12));
    CHECK(res.log.front().lr == doctest::Approx(cfg.exp_lr).epsilon(1e-12));

    CHECK(theta_grad_nonzero);
    CHECK(phi_grad_nonzero);
    CHECK(theta_bar_clean);
}

TEST_CASE("pretrain: target encoder equals the fold of the recorded EMA sequence") {
    TabularDataset ds = synthetic_numeric(24, 3, 13);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.batch_size = 8;

    // capture theta_0 and every (theta_t, m_t) after the optimizer step
    std::vector<std::vector<Tensor<double>>> theta_seq;
    std::vector<double> momentum_seq;
    std::vector<Tensor<double>> theta0;
    PretrainHooks<double> hooks;
    hooks.on_checkpoint = [&](long epoch, ModelState<double>& m, const RngBundle&, std::uint64_t) {
        if (epoch == 0) {
            theta0.clear();
            m.context_encoder.visit([&](Parameter<double>& p) { theta0.push_back(p.value); });
        }
    };
    hooks.after_update = [&](ModelState<double>& m, double momentum) {
        std::vector<Tensor<double>> snap;
        m.context_encoder.visit([&](Parameter<double>& p) { snap.push_back(p.value); });
        theta_seq.push_back(std::move(snap));
        momentum_seq.push_back(momentum);
    };
    cfg.checkpoint_every_epochs = 1;
    PretrainResult<double> res = pretrain<double>(ds, schema, cfg, hooks);

    // fold: theta_bar starts as theta_0 and absorbs every recorded update
    std::vector<Tensor<double>> folded = theta0;
    for (std::size_t s = 0; s < theta_seq.size(); ++s) {
        double m = momentum_seq[s];
        for (std::size_t p = 0; p < folded.size(); ++p)
            for (std::size_t k = 0; k < folded[p].size(); ++k)
                folded[p][k] = m * folded[p][k] + (1.0 - m) * theta_seq[s][p][k];
    }
    std::vector<Tensor<double>> final_tgt;
    res.model.target_encoder.visit([&](Parameter<double>& p) { final_tgt.push_back(p.value); });
    REQUIRE(folded.size() == final_tgt.size());
    for (std::size_t p = 0; p < folded.size(); ++p)
        for (std::size_t k = 0; k < folded[p].size(); ++k)
            REQUIRE(folded[p][k] == final_tgt[p][k]);  // 0 ulps in 64-bit replay
}

TEST_CASE("pretrain: snapshots and checkpoints follow the configured cadence") {
    TabularDataset ds = synthetic_numeric(32, 4, 17);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 4;
    cfg.checkpoint_every_epochs = 2;
    cfg.snapshot_every_epochs = 2;

    std::vector<long> checkpoint_epochs, snapshot_epochs;
    PretrainHooks<float> hooks;
    hooks.on_checkpoint = [&](long e, ModelState<float>&, const RngBundle&, std::uint64_t) {
        checkpoint_epochs.push_back(e);
    };
    hooks.on_snapshot = [&](const SnapshotRecord& s) { snapshot_epochs.push_back(s.epoch); };
    pretrain<float>(ds, schema, cfg, hooks);

    CHECK(checkpoint_epochs == std::vector<long>{0, 2, 4});
    CHECK(snapshot_epochs == std::vector<long>{0, 2, 4});
}

TEST_CASE("pretrain: non-finite loss aborts with a diagnostic") {
    TabularDataset ds = synthetic_numeric(24, 4, 19);
    FeatureSchema schema = fit_preprocessor(ds);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.exp_lr = 1e18;  // guaranteed blow-up

    try {
        pretrain<float>(ds, schema, cfg);
        FAIL("expected abort");
    } catch (const error& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
}
