#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tjepa/grad_check.hpp"
#include "tjepa/nn.hpp"

using namespace tjepa;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, DetRng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// independent naive triple-loop multiply used as the matmul oracle
Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("linear: identity input reproduces the weight matrix") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::matrix(2, 2, {1, 0, 0, 1}));
    NodeId w = g.input(Tensor<double>::matrix(2, 2, {1, 2, 3, 4}));
    NodeId b = g.input(Tensor<double>::vec({0, 0}));
    NodeId y = linear(g, x, w, b);
    CHECK(g.value(y)(0, 0) == doctest::Approx(1).epsilon(1e-12));
    CHECK(g.value(y)(0, 1) == doctest::Approx(2).epsilon(1e-12));
    CHECK(g.value(y)(1, 0) == doctest::Approx(3).epsilon(1e-12));
    CHECK(g.value(y)(1, 1) == doctest::Approx(4).epsilon(1e-12));
}

TEST_CASE("linear: zero input leaves only the bias") {
    DetRng rng(7);
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::zeros({3, 4}));
    NodeId w = g.input(random_tensor({4, 2}, rng));
    NodeId b = g.input(Tensor<double>::vec({0.5, -1.5}));
    NodeId y = linear(g, x, w, b);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(g.value(y)(i, 0) == doctest::Approx(0.5));
        CHECK(g.value(y)(i, 1) == doctest::Approx(-1.5));
    }
}

TEST_CASE("linear: random 3x4 * 4x2 matches the naive oracle") {
    DetRng rng(11);
    Tensor<double> a = random_tensor({3, 4}, rng);
    Tensor<double> b = random_tensor({4, 2}, rng);
    Graph<double> g;
    NodeId y = linear(g, g.input(a), g.input(b), g.input(Tensor<double>::zeros({2})));
    Tensor<double> expect = naive_matmul(a, b);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::abs(g.value(y)[i] - expect[i]) < 1e-6);
}

TEST_CASE("linear: shape mismatch raises") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::zeros({2, 3}));
    NodeId w = g.input(Tensor<double>::zeros({4, 2}));
    NodeId b = g.input(Tensor<double>::zeros({2}));
    CHECK_THROWS_AS(linear(g, x, w, b), shape_error);
}

TEST_CASE("layer_norm: constant row maps to beta") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::full({1, 5}, 3.7));
    NodeId gamma = g.input(Tensor<double>::full({5}, 1.0));
    NodeId beta = g.input(Tensor<double>::zeros({5}));
    NodeId y = layer_norm_rows(g, x, gamma, beta, 1e-5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(g.value(y)[j]) < 1e-9);
}

TEST_CASE("layer_norm: row [1,3] standardizes to [-1,1]") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::matrix(1, 2, {1, 3}));
    NodeId gamma = g.input(Tensor<double>::full({2}, 1.0));
    NodeId beta = g.input(Tensor<double>::zeros({2}));
    NodeId y = layer_norm_rows(g, x, gamma, beta, 1e-12);
    CHECK(g.value(y)[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(g.value(y)[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm: recomputed output moments are standard") {
    DetRng rng(3);
    Graph<double> g;
    NodeId x = g.input(random_tensor({6, 16}, rng, -2.0, 2.0));
    NodeId gamma = g.input(Tensor<double>::full({16}, 1.0));
    NodeId beta = g.input(Tensor<double>::zeros({16}));
    NodeId y = layer_norm_rows(g, x, gamma, beta, 1e-9);
    const Tensor<double>& out = g.value(y);
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < 16; ++j) mean += out(r, j);
        mean /= 16;
        for (std::size_t j = 0; j < 16; ++j) var += (out(r, j) - mean) * (out(r, j) - mean);
        var /= 16;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("softmax: fixtures and shift invariance") {
    Graph<double> g;
    NodeId a = softmax_rows(g, g.input(Tensor<double>::matrix(1, 2, {0, 0})));
    CHECK(g.value(a)[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g.value(a)[1] == doctest::Approx(0.5).epsilon(1e-12));

    NodeId b = softmax_rows(g, g.input(Tensor<double>::matrix(1, 3, {4.2, 4.2, 4.2})));
    for (int j = 0; j < 3; ++j) CHECK(g.value(b)[static_cast<std::size_t>(j)] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // direct 64-bit evaluation oracle for [1,2,3]
    NodeId c = softmax_rows(g, g.input(Tensor<double>::matrix(1, 3, {1, 2, 3})));
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(g.value(c)[static_cast<std::size_t>(j)] - std::exp(1.0 + j) / z) < 1e-7);
}

TEST_CASE("softmax: rows sum to one and shifting is a no-op") {
    DetRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> x = random_tensor({4, 7}, rng, -3.0, 3.0);
        Tensor<double> shifted = x;
        double c = rng.uniform(-10.0, 10.0);
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += c;
        Graph<double> g;
        const Tensor<double>& y = g.value(softmax_rows(g, g.input(x)));
        const Tensor<double>& ys = g.value(softmax_rows(g, g.input(shifted)));
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < 7; ++j) sum += y(r, j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ys[i]) < 1e-6);
    }
}

TEST_CASE("attention: single token gets weight exactly one") {
    DetRng rng(17);
    std::size_t h = 6;
    Tensor<double> x = random_tensor({1, h}, rng);
    Tensor<double> wq = random_tensor({h, h}, rng), wk = random_tensor({h, h}, rng);
    Tensor<double> wv = random_tensor({h, h}, rng), wo = random_tensor({h, h}, rng);
    Tensor<double> bq = random_tensor({h}, rng), bk = random_tensor({h}, rng);
    Tensor<double> bv = random_tensor({h}, rng), bo = random_tensor({h}, rng);
    Graph<double> g;
    NodeId y = multi_head_self_attention(g, g.input(x), g.input(wq), g.input(bq), g.input(wk),
                                         g.input(bk), g.input(wv), g.input(bv), g.input(wo),
                                         g.input(bo), 2);
    // with one token the value projection passes straight through to the output projection
    Tensor<double> v = naive_matmul(x, wv);
    for (std::size_t j = 0; j < h; ++j) v[j] += bv[j];
    Tensor<double> expect = naive_matmul(v, wo);
    for (std::size_t j = 0; j < h; ++j) expect[j] += bo[j];
    for (std::size_t j = 0; j < h; ++j) CHECK(g.value(y)[j] == doctest::Approx(expect[j]).epsilon(1e-10));
}

TEST_CASE("attention: identical tokens produce identical outputs") {
    DetRng rng(19);
    std::size_t h = 8, n = 5;
    Tensor<double> x({n, h});
    for (std::size_t j = 0; j < h; ++j) {
        double v = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) x(i, j) = v;
    }
    Graph<double> g;
    NodeId y = multi_head_self_attention(
        g, g.input(x), g.input(random_tensor({h, h}, rng)), g.input(random_tensor({h}, rng)),
        g.input(random_tensor({h, h}, rng)), g.input(random_tensor({h}, rng)),
        g.input(random_tensor({h, h}, rng)), g.input(random_tensor({h}, rng)),
        g.input(random_tensor({h, h}, rng)), g.input(random_tensor({h}, rng)), 4);
    const Tensor<double>& out = g.value(y);
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = 0; j < h; ++j) CHECK(out(i, j) == doctest::Approx(out(0, j)).epsilon(1e-10));
}

TEST_CASE("attention: one head matches an unfused step-by-step oracle") {
    DetRng rng(23);
    std::size_t h = 4, n = 3;
    Tensor<double> x = random_tensor({n, h}, rng);
    Tensor<double> wq = random_tensor({h, h}, rng), wk = random_tensor({h, h}, rng);
    Tensor<double> wv = random_tensor({h, h}, rng), wo = random_tensor({h, h}, rng);
    Tensor<double> bq = random_tensor({h}, rng), bk = random_tensor({h}, rng);
    Tensor<double> bv = random_tensor({h}, rng), bo = random_tensor({h}, rng);

    // unfused reference: explicit q/k/v, score matrix, softmax, weighted sum
    auto affine = [&](const Tensor<double>& w, const Tensor<double>& b) {
        Tensor<double> r = naive_matmul(x, w);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h; ++j) r(i, j) += b[j];
        return r;
    };
    Tensor<double> q = affine(wq, bq), k = affine(wk, bk), v = affine(wv, bv);
    Tensor<double> expect({n, h});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> score(n);
        double mx = -1e300;
        for (std::size_t t = 0; t < n; ++t) {
            double s = 0;
            for (std::size_t j = 0; j < h; ++j) s += q(i, j) * k(t, j);
            score[t] = s / std::sqrt(static_cast<double>(h));
            mx = std::max(mx, score[t]);
        }
        double z = 0;
        for (std::size_t t = 0; t < n; ++t) {
            score[t] = std::exp(score[t] - mx);
            z += score[t];
        }
        for (std::size_t j = 0; j < h; ++j) {
            double acc = 0;
            for (std::size_t t = 0; t < n; ++t) acc += score[t] / z * v(t, j);
            expect(i, j) = acc;
        }
    }
    Tensor<double> projected = naive_matmul(expect, wo);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h; ++j) projected(i, j) += bo[j];

    Graph<double> g;
    NodeId y = multi_head_self_attention(g, g.input(x), g.input(wq), g.input(bq), g.input(wk),
                                         g.input(bk), g.input(wv), g.input(bv), g.input(wo),
                                         g.input(bo), 1);
    for (std::size_t i = 0; i < projected.size(); ++i) CHECK(std::abs(g.value(y)[i] - projected[i]) < 1e-5);
}

TEST_CASE("attention: indivisible head count raises") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::zeros({2, 6}));
    NodeId w = g.input(Tensor<double>::zeros({6, 6}));
    NodeId b = g.input(Tensor<double>::zeros({6}));
    CHECK_THROWS_AS(multi_head_self_attention(g, x, w, b, w, b, w, b, w, b, 4), config_error);
}

TEST_CASE("backward: sum and squared norm leaf gradients") {
    Parameter<double> p("x", Tensor<double>::vec({0.5, -1.25, 2.0, 0.0}));

    Graph<double> g;
    g.backward(reduce_sum(g, g.param(p)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(p.grad[i] == doctest::Approx(1.0).epsilon(1e-15));

    p.zero_grad();
    Graph<double> g2;
    g2.backward(sum_sq(g2, g2.param(p)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(p.grad[i] == doctest::Approx(2.0 * p.value[i]).epsilon(1e-15));
}

TEST_CASE("backward: rejects non-scalar losses") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::zeros({2, 2}));
    CHECK_THROWS_AS(g.backward(x), contract_error);
}

TEST_CASE("backward: second call without zeroing doubles leaf gradients exactly") {
    DetRng rng(29);
    Parameter<double> w("w", random_tensor({3, 3}, rng));
    Graph<double> g;
    NodeId loss = sum_sq(g, matmul(g, g.input(random_tensor({2, 3}, rng)), g.param(w)));
    g.backward(loss);
    Tensor<double> once = w.grad;
    g.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad[i] == 2.0 * once[i]);
}

TEST_CASE("backward: gradient reaching a guarded input raises a contract error") {
    Graph<double> g;
    NodeId guard = g.guarded_input(Tensor<double>::vec({1.0, 2.0}), "stop-gradient violated");
    NodeId loss = reduce_sum(g, guard);
    CHECK_THROWS_AS(g.backward(loss), contract_error);
}

TEST_CASE("grad_check: quadratic form agrees to floating precision") {
    DetRng rng(31);
    Parameter<double> x("x", random_tensor({1, 5}, rng));
    Tensor<double> q = random_tensor({5, 5}, rng);
    auto build = [&](Graph<double>& g) {
        NodeId xn = g.param(x);
        return reduce_sum(g, hadamard(g, xn, matmul(g, xn, g.input(q))));
    };
    GradCheckReport rep = grad_check(build, {&x}, 1e-4, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("grad_check: single attention layer") {
    DetRng rng(37);
    std::size_t h = 6, n = 4;
    Parameter<double> wq("wq", random_tensor({h, h}, rng, -0.3, 0.3));
    Parameter<double> wk("wk", random_tensor({h, h}, rng, -0.3, 0.3));
    Parameter<double> wv("wv", random_tensor({h, h}, rng, -0.3, 0.3));
    Parameter<double> wo("wo", random_tensor({h, h}, rng, -0.3, 0.3));
    Parameter<double> bq("bq", random_tensor({h}, rng, -0.1, 0.1));
    Parameter<double> bk("bk", random_tensor({h}, rng, -0.1, 0.1));
    Parameter<double> bv("bv", random_tensor({h}, rng, -0.1, 0.1));
    Parameter<double> bo("bo", random_tensor({h}, rng, -0.1, 0.1));
    Tensor<double> x = random_tensor({n, h}, rng);
    auto build = [&](Graph<double>& g) {
        NodeId y = multi_head_self_attention(g, g.input(x), g.param(wq), g.param(bq), g.param(wk),
                                             g.param(bk), g.param(wv), g.param(bv), g.param(wo),
                                             g.param(bo), 2);
        return sum_sq(g, y);
    };
    GradCheckReport rep = grad_check(build, {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo});
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("grad_check: every primitive op against central differences") {
    DetRng rng(41);
    auto check = [&](const char* what, const std::function<NodeId(Graph<double>&)>& build,
                     std::vector<Parameter<double>*> params) {
        GradCheckReport rep = grad_check(build, params);
        INFO(what << " max rel err " << rep.max_rel_err);
        CHECK(rep.pass);
    };

    Parameter<double> a("a", random_tensor({3, 4}, rng));
    Parameter<double> b("b", random_tensor({3, 4}, rng));
    Parameter<double> w("w", random_tensor({4, 5}, rng));
    Parameter<double> bias("bias", random_tensor({5}, rng));

    check("matmul", [&](Graph<double>& g) { return sum_sq(g, matmul(g, g.param(a), g.param(w))); },
          {&a, &w});
    check("linear",
          [&](Graph<double>& g) { return sum_sq(g, linear(g, g.param(a), g.param(w), g.param(bias))); },
          {&a, &w, &bias});
    check("add", [&](Graph<double>& g) { return sum_sq(g, add(g, g.param(a), g.param(b))); }, {&a, &b});
    check("sub", [&](Graph<double>& g) { return sum_sq(g, sub(g, g.param(a), g.param(b))); }, {&a, &b});
    check("hadamard", [&](Graph<double>& g) { return sum_sq(g, hadamard(g, g.param(a), g.param(b))); },
          {&a, &b});
    check("scale", [&](Graph<double>& g) { return sum_sq(g, scale(g, g.param(a), 3.25)); }, {&a});
    check("transpose", [&](Graph<double>& g) { return sum_sq(g, transpose(g, g.param(a))); }, {&a});
    check("concat_rows",
          [&](Graph<double>& g) {
              return sum_sq(g, concat_rows(g, {g.param(a), g.param(b)}));
          },
          {&a, &b});
    check("concat_cols",
          [&](Graph<double>& g) {
              return sum_sq(g, concat_cols(g, {g.param(a), g.param(b)}));
          },
          {&a, &b});
    check("slice_rows", [&](Graph<double>& g) { return sum_sq(g, slice_rows(g, g.param(a), 1, 2)); },
          {&a});
    check("slice_cols", [&](Graph<double>& g) { return sum_sq(g, slice_cols(g, g.param(a), 1, 2)); },
          {&a});
    check("gather_rows",
          [&](Graph<double>& g) { return sum_sq(g, gather_rows(g, g.param(a), {2, 0, 2})); }, {&a});
    check("reshape",
          [&](Graph<double>& g) { return sum_sq(g, reshape(g, g.param(a), {2, 6})); }, {&a});
    check("reduce_mean", [&](Graph<double>& g) { return reduce_mean(g, g.param(a)); }, {&a});
    check("add_n",
          [&](Graph<double>& g) {
              return sum_sq(g, add_n(g, {g.param(a), g.param(b), g.param(a)}));
          },
          {&a, &b});
    check("gelu", [&](Graph<double>& g) { return sum_sq(g, gelu(g, g.param(a))); }, {&a});
    check("softmax", [&](Graph<double>& g) { return sum_sq(g, softmax_rows(g, g.param(a))); }, {&a});

    // relu needs values away from the kink
    Parameter<double> ar("ar", random_tensor({3, 4}, rng));
    for (std::size_t i = 0; i < ar.value.size(); ++i)
        if (std::abs(ar.value[i]) < 0.05) ar.value[i] += ar.value[i] >= 0 ? 0.1 : -0.1;
    check("relu", [&](Graph<double>& g) { return sum_sq(g, relu(g, g.param(ar))); }, {&ar});

    Parameter<double> gamma("gamma", random_tensor({4}, rng, 0.5, 1.5));
    Parameter<double> beta("beta", random_tensor({4}, rng, -0.5, 0.5));
    check("layer_norm",
          [&](Graph<double>& g) {
              return sum_sq(g, layer_norm_rows(g, g.param(a), g.param(gamma), g.param(beta), 1e-5));
          },
          {&a, &gamma, &beta});

    Parameter<double> bn_gamma("bn_gamma", random_tensor({4}, rng, 0.5, 1.5));
    Parameter<double> bn_beta("bn_beta", random_tensor({4}, rng, -0.5, 0.5));
    check("batch_norm_train",
          [&](Graph<double>& g) {
              BatchNormState<double> st(4);
              return sum_sq(g, batch_norm(g, g.param(a), g.param(bn_gamma), g.param(bn_beta), st, true));
          },
          {&a, &bn_gamma, &bn_beta});
    BatchNormState<double> bn_eval(4);
    for (std::size_t j = 0; j < 4; ++j) {
        bn_eval.running_mean[j] = 0.1 * static_cast<double>(j);
        bn_eval.running_var[j] = 0.5 + 0.2 * static_cast<double>(j);
    }
    check("batch_norm_eval",
          [&](Graph<double>& g) {
              return sum_sq(g, batch_norm(g, g.param(a), g.param(bn_gamma), g.param(bn_beta), bn_eval, false));
          },
          {&a, &bn_gamma, &bn_beta});

    Parameter<double> img("img", random_tensor({2, 2, 4, 6}, rng));
    Parameter<double> kern("kern", random_tensor({3, 2, 3, 3}, rng, -0.4, 0.4));
    Parameter<double> kbias("kbias", random_tensor({3}, rng, -0.2, 0.2));
    check("conv2d",
          [&](Graph<double>& g) {
              return sum_sq(g, conv2d_3x3(g, g.param(img), g.param(kern), g.param(kbias)));
          },
          {&img, &kern, &kbias});
    check("maxpool",
          [&](Graph<double>& g) { return sum_sq(g, maxpool2d_2x2(g, g.param(img))); }, {&img});

    Parameter<double> logits("logits", random_tensor({5, 3}, rng));
    check("cross_entropy",
          [&](Graph<double>& g) {
              return cross_entropy_mean(g, g.param(logits), {0, 2, 1, 1, 0});
          },
          {&logits});

    check("dropout",
          [&](Graph<double>& g) {
              DetRng drop_rng(99);  // same mask on every rebuild
              return sum_sq(g, dropout(g, g.param(a), 0.4, drop_rng));
          },
          {&a});
}

TEST_CASE("forward ops stay finite on finite input") {
    DetRng rng(47);
    for (int trial = 0; trial < 10; ++trial) {
        Graph<double> g;
        NodeId x = g.input(random_tensor({5, 8}, rng, -50.0, 50.0));
        NodeId gamma = g.input(Tensor<double>::full({8}, 1.0));
        NodeId beta = g.input(Tensor<double>::zeros({8}));
        CHECK(g.value(softmax_rows(g, x)).all_finite());
        CHECK(g.value(layer_norm_rows(g, x, gamma, beta, 1e-5)).all_finite());
        CHECK(g.value(gelu(g, x)).all_finite());
    }
    // zero-variance row guarded by eps
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::full({1, 4}, 2.0));
    NodeId y = layer_norm_rows(g, x, g.input(Tensor<double>::full({4}, 1.0)),
                               g.input(Tensor<double>::zeros({4})), 1e-5);
    CHECK(g.value(y).all_finite());
}

TEST_CASE("grad_check: non-finite loss is reported as a diagnostic failure") {
    Parameter<double> p("p", Tensor<double>::vec({1.0}));
    auto build = [&](Graph<double>& g) {
        NodeId bad = g.input(Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN()));
        return reduce_sum(g, hadamard(g, g.param(p), bad));
    };
    GradCheckReport rep = grad_check(build, {&p});
    CHECK_FALSE(rep.finite);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("grad_check: composite encoder-style loss") {
    // two linear layers with gelu and a layer norm, checked end to end
    DetRng rng(53);
    std::size_t h = 6;
    Parameter<double> w1("w1", random_tensor({h, h}, rng, -0.4, 0.4));
    Parameter<double> b1("b1", random_tensor({h}, rng, -0.1, 0.1));
    Parameter<double> w2("w2", random_tensor({h, h}, rng, -0.4, 0.4));
    Parameter<double> b2("b2", random_tensor({h}, rng, -0.1, 0.1));
    Parameter<double> gm("gm", random_tensor({h}, rng, 0.8, 1.2));
    Parameter<double> bt("bt", random_tensor({h}, rng, -0.1, 0.1));
    Tensor<double> x = random_tensor({3, h}, rng);
    auto build = [&](Graph<double>& g) {
        NodeId t = layer_norm_rows(g, g.input(x), g.param(gm), g.param(bt), 1e-5);
        t = gelu(g, linear(g, t, g.param(w1), g.param(b1)));
        t = linear(g, t, g.param(w2), g.param(b2));
        return sum_sq(g, t);
    };
    GradCheckReport rep = grad_check(build, {&w1, &b1, &w2, &b2, &gm, &bt});
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-4);
}
