#pragma once
#include <algorithm>
#include <string>
#include <type_traits>
#include <vector>

#include "tjepa/model.hpp"
#include "tjepa/training.hpp"

namespace tjepa {

enum class Task { classification, regression };

inline Task task_from_name(const std::string& s) {
    if (s == "cls" || s == "classification") return Task::classification;
    if (s == "reg" || s == "regression") return Task::regression;
    throw config_error("unknown task: " + s);
}

// `none` feeds the flattened representation straight to the head; the five
// named modes mirror the published projection-layer designs.
enum class ProjectionMode { none, linear_flatten, linear_per_feature, conv, max_pool, mean_pool };

inline ProjectionMode projection_from_name(const std::string& s) {
    if (s == "none") return ProjectionMode::none;
    if (s == "linear_flatten") return ProjectionMode::linear_flatten;
    if (s == "linear_per_feature") return ProjectionMode::linear_per_feature;
    if (s == "conv") return ProjectionMode::conv;
    if (s == "max_pool") return ProjectionMode::max_pool;
    if (s == "mean_pool") return ProjectionMode::mean_pool;
    throw config_error("unknown projection mode: " + s);
}

// Adapter from the d x h token representation to a flat head input. Pooling
// modes are parameter-free; the others are trained jointly with the head.
template <typename Real>
struct Projection {
    ProjectionMode mode = ProjectionMode::none;
    std::size_t d = 0, h = 0, out_dim = 0;

    LinearLayer<Real> flat;             // linear_flatten
    Parameter<Real> pf_w, pf_b;         // linear_per_feature: [d x h] weights, [d] bias
    Parameter<Real> k1, kb1, bn1_g, bn1_b;  // conv stage 1: 1 -> 8 channels
    Parameter<Real> k2, kb2, bn2_g, bn2_b;  // conv stage 2: 8 -> 16 channels
    BatchNormState<Real> bn1_state{0}, bn2_state{0};
    LinearLayer<Real> conv_out;

    template <typename Fn>
    void visit(Fn&& fn) {
        switch (mode) {
            case ProjectionMode::linear_flatten:
                fn(flat.w);
                fn(flat.b);
                break;
            case ProjectionMode::linear_per_feature:
                fn(pf_w);
                fn(pf_b);
                break;
            case ProjectionMode::conv:
                fn(k1);
                fn(kb1);
                fn(bn1_g);
                fn(bn1_b);
                fn(k2);
                fn(kb2);
                fn(bn2_g);
                fn(bn2_b);
                fn(conv_out.w);
                fn(conv_out.b);
                break;
            default:
                break;
        }
    }
};

template <typename Real>
Projection<Real> init_projection(ProjectionMode mode, std::size_t d, std::size_t h,
                                 std::size_t flatten_out, DetRng& rng) {
    Projection<Real> p;
    p.mode = mode;
    p.d = d;
    p.h = h;
    switch (mode) {
        case ProjectionMode::none:
            p.out_dim = d * h;
            break;
        case ProjectionMode::linear_flatten:
            p.out_dim = flatten_out;
            p.flat = detail::init_linear<Real>("proj.flat", d * h, flatten_out, rng);
            break;
        case ProjectionMode::linear_per_feature:
            p.out_dim = d;
            p.pf_w = detail::init_linear_weight<Real>("proj.pf.w", h, d, rng);  // stored transposed below
            p.pf_w = Parameter<Real>("proj.pf.w", [&] {
                Tensor<Real> t({d, h});
                double bound = 1.0 / std::sqrt(static_cast<double>(h));
                for (std::size_t i = 0; i < t.size(); ++i)
                    t[i] = static_cast<Real>(rng.uniform(-bound, bound));
                return t;
            }());
            p.pf_b = detail::init_linear_bias<Real>("proj.pf.b", h, d, rng);
            break;
        case ProjectionMode::conv: {
            if (d < 4 || h < 4) throw config_error("conv projection needs d >= 4 and h >= 4");
            auto kernel = [&](const char* name, std::size_t co, std::size_t ci) {
                Tensor<Real> t({co, ci, 3, 3});
                double bound = 1.0 / std::sqrt(static_cast<double>(ci * 9));
                for (std::size_t i = 0; i < t.size(); ++i)
                    t[i] = static_cast<Real>(rng.uniform(-bound, bound));
                return Parameter<Real>(name, std::move(t));
            };
            p.k1 = kernel("proj.conv1.k", 8, 1);
            p.kb1 = Parameter<Real>("proj.conv1.b", Tensor<Real>::zeros({8}));
            p.bn1_g = Parameter<Real>("proj.bn1.g", Tensor<Real>::full({8}, Real(1)));
            p.bn1_b = Parameter<Real>("proj.bn1.b", Tensor<Real>::zeros({8}));
            p.bn1_state = BatchNormState<Real>(8);
            p.k2 = kernel("proj.conv2.k", 16, 8);
            p.kb2 = Parameter<Real>("proj.conv2.b", Tensor<Real>::zeros({16}));
            p.bn2_g = Parameter<Real>("proj.bn2.g", Tensor<Real>::full({16}, Real(1)));
            p.bn2_b = Parameter<Real>("proj.bn2.b", Tensor<Real>::zeros({16}));
            p.bn2_state = BatchNormState<Real>(16);
            std::size_t dd = d / 2 / 2, hh = h / 2 / 2;
            p.out_dim = flatten_out;
            p.conv_out = detail::init_linear<Real>("proj.conv.out", 16 * dd * hh, flatten_out, rng);
            break;
        }
        case ProjectionMode::max_pool:
        case ProjectionMode::mean_pool:
            p.out_dim = d;
            break;
    }
    return p;
}

// Batched projection: x is [N, d*h] of flattened representations.
template <typename Real>
NodeId project_forward(Graph<Real>& g, NodeId x, Projection<Real>& p, bool trainable, bool training) {
    const Tensor<Real>& xv = g.value(x);
    if (xv.cols() != p.d * p.h) throw shape_error("project: input width is not d*h");
    auto u = [&](Parameter<Real>& q) { return detail::use(g, q, trainable); };
    switch (p.mode) {
        case ProjectionMode::none:
            return x;
        case ProjectionMode::linear_flatten:
            return linear(g, x, u(p.flat.w), u(p.flat.b));
        case ProjectionMode::linear_per_feature: {
            // scalar per feature: dot(w_i, H_i) + b_i
            std::vector<NodeId> cols;
            cols.reserve(p.d);
            NodeId w = u(p.pf_w);
            for (std::size_t f = 0; f < p.d; ++f) {
                NodeId hi = slice_cols(g, x, f * p.h, p.h);
                NodeId wi = transpose(g, slice_rows(g, w, f, 1));  // [h x 1]
                cols.push_back(matmul(g, hi, wi));
            }
            NodeId merged = concat_cols(g, cols);
            return add_rowvec(g, merged, u(p.pf_b));
        }
        case ProjectionMode::conv: {
            std::size_t n = xv.rows();
            NodeId img = reshape(g, x, {n, 1, p.d, p.h});
            NodeId c1 = conv2d_3x3(g, img, u(p.k1), u(p.kb1));
            NodeId b1 = batch_norm2d(g, c1, u(p.bn1_g), u(p.bn1_b), p.bn1_state, training);
            NodeId pool1 = maxpool2d_2x2(g, relu(g, b1));
            NodeId c2 = conv2d_3x3(g, pool1, u(p.k2), u(p.kb2));
            NodeId b2 = batch_norm2d(g, c2, u(p.bn2_g), u(p.bn2_b), p.bn2_state, training);
            NodeId pool2 = maxpool2d_2x2(g, relu(g, b2));
            const Tensor<Real>& pv = g.value(pool2);
            NodeId flat = reshape(g, pool2, {n, pv.dim(1) * pv.dim(2) * pv.dim(3)});
            return linear(g, flat, u(p.conv_out.w), u(p.conv_out.b));
        }
        case ProjectionMode::max_pool:
            return pool_features_max(g, x, p.d, p.h);
        case ProjectionMode::mean_pool:
            return pool_features_mean(g, x, p.d, p.h);
    }
    throw config_error("project: unhandled mode");
}

// Single-sample convenience wrapper over the batched path (inference mode).
template <typename Real>
Tensor<Real> project(const Tensor<Real>& rep, Projection<Real>& p) {
    if (rep.rows() != p.d || rep.cols() != p.h) throw shape_error("project: representation is not d x h");
    Graph<Real> g(64);
    NodeId x = g.input(Tensor<Real>({1, p.d * p.h}, rep.raw()));
    return g.value(project_forward(g, x, p, /*trainable=*/false, /*training=*/false));
}

// ---------------------------------------------------------------------------
// supervised evaluation on frozen representations
// ---------------------------------------------------------------------------

struct ProbeResult {
    Task task = Task::classification;
    std::string metric;  // accuracy | rmse
    double value = 0;
    std::string split;
    std::uint64_t seed = 0;
};

template <typename Real>
struct ProbeData {
    Tensor<Real> train_x, val_x, test_x;  // [n x F] frozen inputs
    std::vector<double> train_y, val_y, test_y;

    void validate() const {
        if (train_x.rows() == 0) throw shape_error("probe: empty train split");
        if (train_x.rows() != train_y.size() || val_x.rows() != val_y.size() ||
            test_x.rows() != test_y.size())
            throw shape_error("probe: label/embedding count mismatch");
    }
};

// accuracy for classification logits, rmse for regression predictions
inline double evaluate(const Tensor<double>& pred, const std::vector<double>& labels, Task task) {
    if (labels.empty() || pred.rows() == 0) throw shape_error("evaluate: empty input");
    if (pred.rows() != labels.size()) throw shape_error("evaluate: length mismatch");
    if (task == Task::classification) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < pred.cols(); ++c)
                if (pred(i, c) > pred(i, best)) best = c;
            hits += best == static_cast<std::size_t>(labels[i]);
        }
        return static_cast<double>(hits) / static_cast<double>(labels.size());
    }
    double se = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double d = pred(i, 0) - labels[i];
        se += d * d;
    }
    return std::sqrt(se / static_cast<double>(labels.size()));
}

namespace detail {

template <typename Real>
std::size_t num_classes(const ProbeData<Real>& d) {
    double mx = 0;
    for (const auto* v : {&d.train_y, &d.val_y, &d.test_y})
        for (double y : *v) {
            if (y < 0 || y != std::floor(y)) throw parse_error("classification labels must be ints >= 0");
            mx = std::max(mx, y);
        }
    return static_cast<std::size_t>(mx) + 1;
}

template <typename Real>
struct HeadLayers {
    Projection<Real>* projection = nullptr;
    LinearLayer<Real> input;                     // F -> hidden (mlp) or F -> out (linear probe)
    std::vector<LinearLayer<Real>> hidden;       // mlp blocks
    std::vector<Parameter<Real>> bn_g, bn_b;
    std::vector<BatchNormState<Real>> bn_state;
    LinearLayer<Real> output;                    // hidden -> out (mlp only)
    bool is_mlp = false;
    double dropout_p = 0.0;

    std::vector<Parameter<Real>*> params() {
        std::vector<Parameter<Real>*> out;
        if (projection) projection->visit([&](Parameter<Real>& p) { out.push_back(&p); });
        out.push_back(&input.w);
        out.push_back(&input.b);
        for (std::size_t i = 0; i < hidden.size(); ++i) {
            out.push_back(&hidden[i].w);
            out.push_back(&hidden[i].b);
            out.push_back(&bn_g[i]);
            out.push_back(&bn_b[i]);
        }
        if (is_mlp) {
            out.push_back(&output.w);
            out.push_back(&output.b);
        }
        return out;
    }

    NodeId forward(Graph<Real>& g, NodeId x, bool training, DetRng* drop_rng) {
        NodeId t = projection ? project_forward(g, x, *projection, /*trainable=*/true, training) : x;
        t = linear(g, t, g.param(input.w), g.param(input.b));
        if (!is_mlp) return t;
        for (std::size_t i = 0; i < hidden.size(); ++i) {
            NodeId z = relu(g, linear(g, t, g.param(hidden[i].w), g.param(hidden[i].b)));
            if (training && dropout_p > 0 && drop_rng) z = dropout(g, z, dropout_p, *drop_rng);
            t = batch_norm(g, z, g.param(bn_g[i]), g.param(bn_b[i]), bn_state[i], training);
        }
        return linear(g, t, g.param(output.w), g.param(output.b));
    }
};

template <typename Real>
NodeId head_loss(Graph<Real>& g, NodeId logits, const std::vector<double>& labels, Task task) {
    if (task == Task::classification) {
        std::vector<int> y(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) y[i] = static_cast<int>(labels[i]);
        return cross_entropy_mean(g, logits, std::move(y));
    }
    Tensor<Real> target({labels.size(), 1});
    for (std::size_t i = 0; i < labels.size(); ++i) target(i, 0) = static_cast<Real>(labels[i]);
    NodeId diff = sub(g, logits, g.input(target));
    return scale(g, sum_sq(g, diff), Real(1) / static_cast<Real>(labels.size()));
}

template <typename Real>
Tensor<Real> rows_subset(const Tensor<Real>& x, const std::vector<std::size_t>& idx) {
    Tensor<Real> out({idx.size(), x.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(x.data() + idx[i] * x.cols(), x.data() + (idx[i] + 1) * x.cols(),
                  out.data() + i * x.cols());
    return out;
}

template <typename Real>
double eval_head(HeadLayers<Real>& head, const Tensor<Real>& x, const std::vector<double>& y,
                 Task task) {
    Graph<Real> g(256);
    NodeId logits = head.forward(g, g.input(x), /*training=*/false, nullptr);
    return evaluate(g.value(logits).template cast<double>(), y, task);
}

template <typename Real>
ProbeResult run_probe_training(HeadLayers<Real>& head, const ProbeData<Real>& data, Task task,
                               long epochs, double lr, std::uint64_t seed, Split eval_split,
                               std::size_t batch_size, long patience, long* epochs_run,
                               long* best_epoch_out) {
    data.validate();
    std::vector<Parameter<Real>*> params = head.params();
    AdamW<Real> opt(0.9, 0.999, 1e-8, 0.0);
    DetRng order_rng(splitmix64(seed ^ 0x9AULL));
    DetRng drop_rng(splitmix64(seed ^ 0xD0ULL));

    std::size_t n = data.train_x.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    bool early_stop = patience > 0 && data.val_x.rows() > 0;
    double best_metric = task == Task::classification ? -1.0 : std::numeric_limits<double>::max();
    std::vector<Tensor<Real>> best_params;
    long best_epoch = 0;
    long epoch = 0;

    for (epoch = 1; epoch <= epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch_size) {
            std::size_t end = std::min(n, start + batch_size);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            if (head.is_mlp && idx.size() < 2) continue;  // batch norm needs 2+ rows
            Tensor<Real> bx = rows_subset(data.train_x, idx);
            std::vector<double> by(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) by[i] = data.train_y[idx[i]];
            for (Parameter<Real>* p : params) p->zero_grad();
            Graph<Real> g(512);
            NodeId logits = head.forward(g, g.input(bx), /*training=*/true, &drop_rng);
            NodeId loss = head_loss(g, logits, by, task);
            g.backward(loss);
            opt.step(params, lr);
        }
        if (early_stop) {
            double metric = eval_head(head, data.val_x, data.val_y, task);
            bool improved = task == Task::classification ? metric > best_metric : metric < best_metric;
            if (improved) {
                best_metric = metric;
                best_epoch = epoch;
                best_params.clear();
                for (Parameter<Real>* p : params) best_params.push_back(p->value);
            } else if (epoch - best_epoch >= patience) {
                break;
            }
        }
    }
    if (early_stop && !best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    if (epochs_run) *epochs_run = std::min(epoch, epochs);
    if (best_epoch_out) *best_epoch_out = best_epoch;

    const Tensor<Real>& ex = eval_split == Split::train ? data.train_x
                             : eval_split == Split::val ? data.val_x
                                                        : data.test_x;
    const std::vector<double>& ey = eval_split == Split::train ? data.train_y
                                    : eval_split == Split::val ? data.val_y
                                                               : data.test_y;
    ProbeResult res;
    res.task = task;
    res.metric = task == Task::classification ? "accuracy" : "rmse";
    res.value = eval_head(head, ex, ey, task);
    res.split = split_name(eval_split);
    res.seed = seed;
    return res;
}

}  // namespace detail

// Single linear layer on frozen inputs, cross-entropy or squared error.
template <typename Real>
ProbeResult train_linear_probe(const ProbeData<Real>& data, Task task, long epochs = 200,
                               double lr = 1e-3, std::uint64_t seed = 0,
                               Split eval_split = Split::test,
                               std::type_identity_t<Projection<Real>*> projection = nullptr) {
    data.validate();
    std::size_t in_dim = projection ? projection->out_dim : data.train_x.cols();
    std::size_t out_dim = task == Task::classification ? detail::num_classes(data) : 1;
    DetRng rng(splitmix64(seed ^ 0x11EA));
    detail::HeadLayers<Real> head;
    head.projection = projection;
    head.is_mlp = false;
    head.input = detail::init_linear<Real>("probe.linear", in_dim, out_dim, rng);
    return detail::run_probe_training(head, data, task, epochs, lr, seed, eval_split,
                                      /*batch=*/128, /*patience=*/0, nullptr, nullptr);
}

struct MlpHeadOptions {
    std::size_t hidden = 64;
    std::size_t layers = 2;  // L hidden blocks
    double dropout = 0.0;
    double lr = 1e-3;
    long max_epochs = 300;
    long patience = 16;
    std::size_t batch_size = 128;
};

// Input projection, L blocks of BatchNorm(Dropout(ReLU(Wx + b))), output
// layer; early stopping on the validation metric.
template <typename Real>
ProbeResult train_mlp_head(const ProbeData<Real>& data, Task task, const MlpHeadOptions& opt = {},
                           std::uint64_t seed = 0, Split eval_split = Split::test,
                           std::type_identity_t<Projection<Real>*> projection = nullptr,
                           long* epochs_run = nullptr, long* best_epoch = nullptr) {
    data.validate();
    std::size_t in_dim = projection ? projection->out_dim : data.train_x.cols();
    std::size_t out_dim = task == Task::classification ? detail::num_classes(data) : 1;
    DetRng rng(splitmix64(seed ^ 0x317));
    detail::HeadLayers<Real> head;
    head.projection = projection;
    head.is_mlp = true;
    head.dropout_p = opt.dropout;
    head.input = detail::init_linear<Real>("head.in", in_dim, opt.hidden, rng);
    for (std::size_t l = 0; l < opt.layers; ++l) {
        head.hidden.push_back(detail::init_linear<Real>("head.h" + std::to_string(l), opt.hidden,
                                                        opt.hidden, rng));
        head.bn_g.emplace_back("head.bn_g" + std::to_string(l), Tensor<Real>::full({opt.hidden}, Real(1)));
        head.bn_b.emplace_back("head.bn_b" + std::to_string(l), Tensor<Real>::zeros({opt.hidden}));
        head.bn_state.emplace_back(opt.hidden);
    }
    head.output = detail::init_linear<Real>("head.out", opt.hidden, out_dim, rng);
    return detail::run_probe_training(head, data, task, opt.max_epochs, opt.lr, seed, eval_split,
                                      opt.batch_size, opt.patience, epochs_run, best_epoch);
}

}  // namespace tjepa
