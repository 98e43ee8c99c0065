#pragma once
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tjepa/errors.hpp"
#include "tjepa/rng.hpp"
#include "tjepa/tensor.hpp"

namespace tjepa {

using NodeId = std::uint32_t;

// A learnable tensor living outside any graph. backward() accumulates into
// grad; it is never overwritten within a pass.
template <typename Real>
struct Parameter {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<Real> v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor<Real>::zeros(value.shape())) {}

    void zero_grad() { grad.fill(Real(0)); }
};

// Wengert-list compute graph: nodes are appended in execution order, so the
// list itself is the forward topology and backward is one reverse sweep.
// Adjoint buffers are transient per backward call; leaf (parameter) gradients
// accumulate across calls.
template <typename Real>
class Graph {
public:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> adj;
        bool needs_adj = false;  // an adjoint must be propagated into this node
        bool touched = false;
        Parameter<Real>* sink = nullptr;
        const char* guard = nullptr;
        std::function<void(Graph&, NodeId)> backprop;
    };

    explicit Graph(std::size_t reserve_nodes = 256) { nodes_.reserve(reserve_nodes); }

    NodeId input(Tensor<Real> v) { return push_(std::move(v), false, nullptr, nullptr, {}); }

    // Leaf backed by a Parameter; memoized so one parameter is one node per graph.
    NodeId param(Parameter<Real>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        NodeId id = push_(p.value, true, &p, nullptr, {});
        param_nodes_.emplace(&p, id);
        return id;
    }

    // Input that raises contract_error if any gradient reaches it.
    NodeId guarded_input(Tensor<Real> v, const char* msg) {
        return push_(std::move(v), true, nullptr, msg, {});
    }

    // Constant leaf mirroring a parameter's current value; memoized separately
    // from param() so a frozen use never aliases a trainable one.
    NodeId frozen(const Parameter<Real>& p) {
        auto it = frozen_nodes_.find(&p);
        if (it != frozen_nodes_.end()) return it->second;
        NodeId id = push_(p.value, false, nullptr, nullptr, {});
        frozen_nodes_.emplace(&p, id);
        return id;
    }

    NodeId make(Tensor<Real> value, bool needs_adj, std::function<void(Graph&, NodeId)> backprop) {
        return push_(std::move(value), needs_adj, nullptr, nullptr,
                     needs_adj ? std::move(backprop) : std::function<void(Graph&, NodeId)>{});
    }

    const Tensor<Real>& value(NodeId id) const { return nodes_[id].value; }
    Tensor<Real>& mutable_value(NodeId id) { return nodes_[id].value; }
    bool needs_adj(NodeId id) const { return nodes_[id].needs_adj; }
    std::size_t node_count() const { return nodes_.size(); }

    // Adjoint buffer of a node, zeroed on first touch within a backward pass.
    Tensor<Real>& adj(NodeId id) {
        Node& n = nodes_[id];
        if (!n.touched) {
            if (!n.adj.same_shape(n.value)) n.adj = Tensor<Real>::zeros(n.value.shape());
            else n.adj.fill(Real(0));
            n.touched = true;
        }
        return n.adj;
    }

    void backward(NodeId loss) {
        if (nodes_.empty() || loss >= nodes_.size())
            throw contract_error("backward: unknown node");
        if (nodes_[loss].value.size() != 1)
            throw contract_error("backward: loss must be a scalar");
        for (Node& n : nodes_) n.touched = false;
        adj(loss)[0] = Real(1);
        for (NodeId id = loss;; --id) {
            Node& n = nodes_[id];
            if (n.touched) {
                if (n.guard) {
                    for (std::size_t i = 0; i < n.adj.size(); ++i)
                        if (n.adj[i] != Real(0)) throw contract_error(n.guard);
                }
                if (n.backprop) n.backprop(*this, id);
                if (n.sink) {
                    Tensor<Real>& g = n.sink->grad;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.adj[i];
                }
            }
            if (id == 0) break;
        }
    }

private:
    NodeId push_(Tensor<Real> v, bool needs, Parameter<Real>* sink, const char* guard,
                 std::function<void(Graph&, NodeId)> bp) {
        Node n;
        n.value = std::move(v);
        n.needs_adj = needs;
        n.sink = sink;
        n.guard = guard;
        n.backprop = std::move(bp);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<Real>*, NodeId> param_nodes_;
    std::unordered_map<const Parameter<Real>*, NodeId> frozen_nodes_;
};

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
void matmul_plain(const Tensor<Real>& a, const Tensor<Real>& b, Tensor<Real>& out,
                  bool trans_a, bool trans_b, bool accumulate) {
    std::size_t n = trans_a ? a.cols() : a.rows();
    std::size_t k = trans_a ? a.rows() : a.cols();
    std::size_t kb = trans_b ? b.cols() : b.rows();
    std::size_t m = trans_b ? b.rows() : b.cols();
    if (k != kb)
        throw shape_error("matmul: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
    if (!accumulate) out.fill(Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        Real* orow = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            Real av = trans_a ? a(p, i) : a(i, p);
            if (av == Real(0)) continue;
            const Real* brow = trans_b ? nullptr : b.data() + p * m;
            if (trans_b) {
                for (std::size_t j = 0; j < m; ++j) orow[j] += av * b(j, p);
            } else {
                for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace detail

template <typename Real>
NodeId matmul(Graph<Real>& g, NodeId a, NodeId b) {
    const Tensor<Real>& av = g.value(a);
    const Tensor<Real>& bv = g.value(b);
    Tensor<Real> out({av.rows(), bv.cols()});
    detail::matmul_plain(av, bv, out, false, false, false);
    bool needs = g.needs_adj(a) || g.needs_adj(b);
    return g.make(std::move(out), needs, [a, b](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (gr.needs_adj(a)) detail::matmul_plain(d, gr.value(b), gr.adj(a), false, true, true);
        if (gr.needs_adj(b)) detail::matmul_plain(gr.value(a), d, gr.adj(b), true, false, true);
    });
}

// out = x W + bias, bias broadcast over rows
template <typename Real>
NodeId linear(Graph<Real>& g, NodeId x, NodeId w, NodeId bias) {
    const Tensor<Real>& xv = g.value(x);
    const Tensor<Real>& wv = g.value(w);
    const Tensor<Real>& bv = g.value(bias);
    if (xv.cols() != wv.rows())
        throw shape_error("linear: input width " + xv.shape_str() + " does not match weight " + wv.shape_str());
    if (bv.size() != wv.cols()) throw shape_error("linear: bias length does not match output width");
    Tensor<Real> out({xv.rows(), wv.cols()});
    detail::matmul_plain(xv, wv, out, false, false, false);
    std::size_t m = wv.cols();
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) += bv[j];
    bool needs = g.needs_adj(x) || g.needs_adj(w) || g.needs_adj(bias);
    return g.make(std::move(out), needs, [x, w, bias](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (gr.needs_adj(x)) detail::matmul_plain(d, gr.value(w), gr.adj(x), false, true, true);
        if (gr.needs_adj(w)) detail::matmul_plain(gr.value(x), d, gr.adj(w), true, false, true);
        if (gr.needs_adj(bias)) {
            Tensor<Real>& db = gr.adj(bias);
            for (std::size_t i = 0; i < d.rows(); ++i)
                for (std::size_t j = 0; j < d.cols(); ++j) db[j] += d(i, j);
        }
    });
}

template <typename Real>
NodeId add(Graph<Real>& g, NodeId a, NodeId b) {
    const Tensor<Real>& av = g.value(a);
    const Tensor<Real>& bv = g.value(b);
    if (!av.same_shape(bv)) throw shape_error("add: shape mismatch");
    Tensor<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    bool needs = g.needs_adj(a) || g.needs_adj(b);
    return g.make(std::move(out), needs, [a, b](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        for (NodeId p : {a, b}) {
            if (!gr.needs_adj(p)) continue;
            Tensor<Real>& dp = gr.adj(p);
            for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
        }
    });
}

// y = x + v with v broadcast over rows
template <typename Real>
NodeId add_rowvec(Graph<Real>& g, NodeId x, NodeId v) {
    const Tensor<Real>& xv = g.value(x);
    const Tensor<Real>& vv = g.value(v);
    if (vv.size() != xv.cols()) throw shape_error("add_rowvec: vector length does not match columns");
    Tensor<Real> out = xv;
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) += vv[j];
    bool needs = g.needs_adj(x) || g.needs_adj(v);
    return g.make(std::move(out), needs, [x, v](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (gr.needs_adj(x)) {
            Tensor<Real>& dx = gr.adj(x);
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
        }
        if (gr.needs_adj(v)) {
            Tensor<Real>& dv = gr.adj(v);
            for (std::size_t i = 0; i < d.rows(); ++i)
                for (std::size_t j = 0; j < d.cols(); ++j) dv[j] += d(i, j);
        }
    });
}

template <typename Real>
NodeId sub(Graph<Real>& g, NodeId a, NodeId b) {
    const Tensor<Real>& av = g.value(a);
    const Tensor<Real>& bv = g.value(b);
    if (!av.same_shape(bv)) throw shape_error("sub: shape mismatch");
    Tensor<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    bool needs = g.needs_adj(a) || g.needs_adj(b);
    return g.make(std::move(out), needs, [a, b](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (gr.needs_adj(a)) {
            Tensor<Real>& da = gr.adj(a);
            for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
        }
        if (gr.needs_adj(b)) {
            Tensor<Real>& db = gr.adj(b);
            for (std::size_t i = 0; i < d.size(); ++i) db[i] -= d[i];
        }
    });
}

template <typename Real>
NodeId hadamard(Graph<Real>& g, NodeId a, NodeId b) {
    const Tensor<Real>& av = g.value(a);
    const Tensor<Real>& bv = g.value(b);
    if (!av.same_shape(bv)) throw shape_error("hadamard: shape mismatch");
    Tensor<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    bool needs = g.needs_adj(a) || g.needs_adj(b);
    return g.make(std::move(out), needs, [a, b](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (gr.needs_adj(a)) {
            Tensor<Real>& da = gr.adj(a);
            const Tensor<Real>& bval = gr.value(b);
            for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bval[i];
        }
        if (gr.needs_adj(b)) {
            Tensor<Real>& db = gr.adj(b);
            const Tensor<Real>& aval = gr.value(a);
            for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * aval[i];
        }
    });
}

template <typename Real>
NodeId scale(Graph<Real>& g, NodeId a, Real c) {
    Tensor<Real> out = g.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return g.make(std::move(out), g.needs_adj(a), [a, c](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (!gr.needs_adj(a)) return;
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[i] += c * d[i];
    });
}

template <typename Real>
NodeId transpose(Graph<Real>& g, NodeId a) {
    const Tensor<Real>& av = g.value(a);
    Tensor<Real> out({av.cols(), av.rows()});
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
    return g.make(std::move(out), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        if (!gr.needs_adj(a)) return;
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j) da(j, i) += d(i, j);
    });
}

template <typename Real>
NodeId concat_rows(Graph<Real>& g, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: empty list");
    std::size_t cols = g.value(parts[0]).cols();
    std::size_t rows = 0;
    bool needs = false;
    for (NodeId p : parts) {
        if (g.value(p).cols() != cols) throw shape_error("concat_rows: column mismatch");
        rows += g.value(p).rows();
        needs = needs || g.needs_adj(p);
    }
    Tensor<Real> out({rows, cols});
    std::size_t r = 0;
    for (NodeId p : parts) {
        const Tensor<Real>& pv = g.value(p);
        std::copy(pv.data(), pv.data() + pv.size(), out.data() + r * cols);
        r += pv.rows();
    }
    return g.make(std::move(out), needs, [parts](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        std::size_t cols = d.cols();
        std::size_t r = 0;
        for (NodeId p : parts) {
            std::size_t pr = gr.value(p).rows();
            if (gr.needs_adj(p)) {
                Tensor<Real>& dp = gr.adj(p);
                for (std::size_t i = 0; i < pr * cols; ++i) dp[i] += d[r * cols + i];
            }
            r += pr;
        }
    });
}

template <typename Real>
NodeId concat_cols(Graph<Real>& g, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: empty list");
    std::size_t rows = g.value(parts[0]).rows();
    std::size_t cols = 0;
    bool needs = false;
    for (NodeId p : parts) {
        if (g.value(p).rows() != rows) throw shape_error("concat_cols: row mismatch");
        cols += g.value(p).cols();
        needs = needs || g.needs_adj(p);
    }
    Tensor<Real> out({rows, cols});
    std::size_t c = 0;
    for (NodeId p : parts) {
        const Tensor<Real>& pv = g.value(p);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out(i, c + j) = pv(i, j);
        c += pv.cols();
    }
    return g.make(std::move(out), needs, [parts](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        std::size_t c = 0;
        for (NodeId p : parts) {
            std::size_t pc = gr.value(p).cols();
            if (gr.needs_adj(p)) {
                Tensor<Real>& dp = gr.adj(p);
                for (std::size_t i = 0; i < d.rows(); ++i)
                    for (std::size_t j = 0; j < pc; ++j) dp(i, j) += d(i, c + j);
            }
            c += pc;
        }
    });
}

template <typename Real>
NodeId slice_rows(Graph<Real>& g, NodeId a, std::size_t start, std::size_t count) {
    const Tensor<Real>& av = g.value(a);
    if (start + count > av.rows()) throw shape_error("slice_rows: out of range");
    std::size_t cols = av.cols();
    Tensor<Real> out({count, cols});
    std::copy(av.data() + start * cols, av.data() + (start + count) * cols, out.data());
    return g.make(std::move(out), g.needs_adj(a), [a, start](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& da = gr.adj(a);
        std::size_t cols = d.cols();
        for (std::size_t i = 0; i < d.size(); ++i) da[start * cols + i] += d[i];
    });
}

template <typename Real>
NodeId slice_cols(Graph<Real>& g, NodeId a, std::size_t start, std::size_t count) {
    const Tensor<Real>& av = g.value(a);
    if (start + count > av.cols()) throw shape_error("slice_cols: out of range");
    Tensor<Real> out({av.rows(), count});
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
    return g.make(std::move(out), g.needs_adj(a), [a, start](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j) da(i, start + j) += d(i, j);
    });
}

// Row gather; repeated indices accumulate on backward.
template <typename Real>
NodeId gather_rows(Graph<Real>& g, NodeId a, std::vector<std::size_t> idx) {
    const Tensor<Real>& av = g.value(a);
    std::size_t cols = av.cols();
    for (std::size_t i : idx)
        if (i >= av.rows()) throw shape_error("gather_rows: index out of range");
    Tensor<Real> out({idx.size(), cols});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(av.data() + idx[r] * cols, av.data() + (idx[r] + 1) * cols, out.data() + r * cols);
    return g.make(std::move(out), g.needs_adj(a), [a, idx = std::move(idx)](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& da = gr.adj(a);
        std::size_t cols = d.cols();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < cols; ++j) da(idx[r], j) += d(r, j);
    });
}

template <typename Real>
NodeId reshape(Graph<Real>& g, NodeId a, std::vector<std::size_t> new_shape) {
    const Tensor<Real>& av = g.value(a);
    Tensor<Real> out(std::move(new_shape), av.raw());
    return g.make(std::move(out), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
    });
}

template <typename Real>
NodeId reduce_sum(Graph<Real>& g, NodeId a) {
    const Tensor<Real>& av = g.value(a);
    Real s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    return g.make(Tensor<Real>::scalar(s), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        Real d = gr.adj(self)[0];
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += d;
    });
}

template <typename Real>
NodeId reduce_mean(Graph<Real>& g, NodeId a) {
    return scale(g, reduce_sum(g, a), Real(1) / static_cast<Real>(g.value(a).size()));
}

// sum of squared entries
template <typename Real>
NodeId sum_sq(Graph<Real>& g, NodeId a) {
    const Tensor<Real>& av = g.value(a);
    Real s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * av[i];
    return g.make(Tensor<Real>::scalar(s), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        Real d = gr.adj(self)[0];
        const Tensor<Real>& aval = gr.value(a);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += Real(2) * d * aval[i];
    });
}

template <typename Real>
NodeId add_n(Graph<Real>& g, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw shape_error("add_n: empty list");
    Tensor<Real> out = g.value(parts[0]);
    bool needs = g.needs_adj(parts[0]);
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Tensor<Real>& pv = g.value(parts[p]);
        if (!pv.same_shape(out)) throw shape_error("add_n: shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i];
        needs = needs || g.needs_adj(parts[p]);
    }
    return g.make(std::move(out), needs, [parts](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        for (NodeId p : parts) {
            if (!gr.needs_adj(p)) continue;
            Tensor<Real>& dp = gr.adj(p);
            for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
        }
    });
}

template <typename Real>
NodeId relu(Graph<Real>& g, NodeId a) {
    Tensor<Real> out = g.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > Real(0) ? out[i] : Real(0);
    return g.make(std::move(out), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        const Tensor<Real>& x = gr.value(a);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (x[i] > Real(0)) da[i] += d[i];
    });
}

// exact GELU: 0.5 x (1 + erf(x/sqrt 2))
template <typename Real>
NodeId gelu(Graph<Real>& g, NodeId a) {
    const Tensor<Real>& av = g.value(a);
    Tensor<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = static_cast<double>(av[i]);
        out[i] = static_cast<Real>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)));
    }
    return g.make(std::move(out), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        const Tensor<Real>& xv = gr.value(a);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.size(); ++i) {
            double x = static_cast<double>(xv[i]);
            double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
            double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
            da[i] += d[i] * static_cast<Real>(cdf + x * pdf);
        }
    });
}

// softmax over the last axis, max-subtracted
template <typename Real>
NodeId softmax_rows(Graph<Real>& g, NodeId a) {
    const Tensor<Real>& av = g.value(a);
    std::size_t k = av.last_dim();
    std::size_t rows = av.outer_size();
    Tensor<Real> out = av;
    for (std::size_t r = 0; r < rows; ++r) {
        Real* row = out.data() + r * k;
        Real mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = row[j] > mx ? row[j] : mx;
        Real sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row[j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)));
            sum += row[j];
        }
        for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
    }
    return g.make(std::move(out), g.needs_adj(a), [a](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        const Tensor<Real>& y = gr.value(self);
        Tensor<Real>& da = gr.adj(a);
        std::size_t k = y.last_dim();
        std::size_t rows = y.outer_size();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* yr = y.data() + r * k;
            const Real* dr = d.data() + r * k;
            Real dot = 0;
            for (std::size_t j = 0; j < k; ++j) dot += dr[j] * yr[j];
            Real* dar = da.data() + r * k;
            for (std::size_t j = 0; j < k; ++j) dar[j] += yr[j] * (dr[j] - dot);
        }
    });
}

// per-row standardization (population variance) followed by affine
template <typename Real>
NodeId layer_norm_rows(Graph<Real>& g, NodeId x, NodeId gamma, NodeId beta, Real eps) {
    const Tensor<Real>& xv = g.value(x);
    std::size_t h = xv.last_dim();
    if (h < 1) throw shape_error("layer_norm: empty rows");
    if (g.value(gamma).size() != h || g.value(beta).size() != h)
        throw shape_error("layer_norm: affine size mismatch");
    std::size_t rows = xv.outer_size();
    const Tensor<Real>& gv = g.value(gamma);
    const Tensor<Real>& bv = g.value(beta);
    Tensor<Real> out(xv.shape());
    Tensor<Real> xhat(xv.shape());
    std::vector<Real> invstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * h;
        Real mu = 0;
        for (std::size_t j = 0; j < h; ++j) mu += row[j];
        mu /= static_cast<Real>(h);
        Real var = 0;
        for (std::size_t j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<Real>(h);
        Real is = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(var + eps)));
        invstd[r] = is;
        for (std::size_t j = 0; j < h; ++j) {
            Real xh = (row[j] - mu) * is;
            xhat.data()[r * h + j] = xh;
            out.data()[r * h + j] = gv[j] * xh + bv[j];
        }
    }
    bool needs = g.needs_adj(x) || g.needs_adj(gamma) || g.needs_adj(beta);
    return g.make(std::move(out), needs,
                  [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd)](Graph<Real>& gr, NodeId self) {
        const Tensor<Real>& d = gr.adj(self);
        std::size_t h = d.last_dim();
        std::size_t rows = d.outer_size();
        const Tensor<Real>& gv = gr.value(gamma);
        if (gr.needs_adj(beta)) {
            Tensor<Real>& db = gr.adj(beta);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < h; ++j) db[j] += d.data()[r * h + j];
        }
        if (gr.needs_adj(gamma)) {
            Tensor<Real>& dg = gr.adj(gamma);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < h; ++j) dg[j] += d.data()[r * h + j] * xhat.data()[r * h + j];
        }
        if (gr.needs_adj(x)) {
            Tensor<Real>& dx = gr.adj(x);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* dr = d.data() + r * h;
                const Real* xh = xhat.data() + r * h;
                Real m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < h; ++j) {
                    Real dxh = dr[j] * gv[j];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= static_cast<Real>(h);
                m2 /= static_cast<Real>(h);
                for (std::size_t j = 0; j < h; ++j) {
                    Real dxh = dr[j] * gv[j];
                    dx.data()[r * h + j] += invstd[r] * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    });
}

// inverted dropout; p = 0 is the identity path used outside training
template <typename Real>
NodeId dropout(Graph<Real>& g, NodeId a, double p, DetRng& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw config_error("dropout: probability must be < 1");
    const Tensor<Real>& av = g.value(a);
    Tensor<Real> mask(av.shape());
    Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.next_uniform() < p ? Real(0) : keep_scale;
    Tensor<Real> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return g.make(std::move(out), g.needs_adj(a), [a, mask = std::move(mask)](Graph<Real>& gr, NodeId self) {
        if (!gr.needs_adj(a)) return;
        const Tensor<Real>& d = gr.adj(self);
        Tensor<Real>& da = gr.adj(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * mask[i];
    });
}

}  // namespace tjepa
