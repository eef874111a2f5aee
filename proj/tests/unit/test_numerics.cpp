#include <cmath>
#include <numeric>

#include "doctest.h"
#include "../support/gradcheck.h"
#include "siren/nn/ops.h"
#include "siren/nn/optim.h"

using namespace siren::nn;

TEST_CASE("softmax hand values") {
    Tensor t({2}, {0.0f, 0.0f});
    auto s = softmax(t, 0);
    CHECK(s[0] == doctest::Approx(0.5));
    CHECK(s[1] == doctest::Approx(0.5));

    Tensor u({2}, {static_cast<float>(std::log(2.0)), 0.0f});
    auto su = softmax(u, 0);
    CHECK(std::abs(su[0] - 2.0 / 3.0) < 1e-6);
    CHECK(std::abs(su[1] - 1.0 / 3.0) < 1e-6);
}

TEST_CASE("softmax sums to one and is shift invariant") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = normal_tensor<float>({3, 7, 5}, 3.0, rng);
        for (int axis = 0; axis < 3; ++axis) {
            auto s = softmax(x, axis);
            Tensor shifted = x;
            for (auto& v : shifted.data) {
                v += 4.25f;
            }
            auto s2 = softmax(shifted, axis);
            for (size_t i = 0; i < s.numel(); ++i) {
                CHECK(std::abs(s[i] - s2[i]) < 1e-6);
            }
        }
        auto s = softmax(x, 2);
        for (int r = 0; r < 21; ++r) {
            float tot = 0;
            for (int c = 0; c < 5; ++c) {
                tot += s.data[static_cast<size_t>(r * 5 + c)];
            }
            CHECK(std::abs(tot - 1.0f) < 1e-6);
        }
    }
}

TEST_CASE("softmax rejects non-finite input and bad axis") {
    Tensor x({2}, {1.0f, NAN});
    CHECK_THROWS_AS(softmax(x, 0), std::domain_error);
    Tensor y({2}, {1.0f, 2.0f});
    CHECK_THROWS(softmax(y, 1));
}

TEST_CASE("cross entropy values") {
    CHECK(cross_entropy(Tensor({3}, {1, 1, 1}), 0) == doctest::Approx(1.098612).epsilon(1e-6));
    CHECK(cross_entropy(Tensor({3}, {20, -20, -20}), 0) < 1e-8);
    Tensor uni({64}, 0.5f);
    CHECK(cross_entropy(uni, 17) == doctest::Approx(std::log(64.0)).epsilon(1e-6));
    CHECK_THROWS_AS(cross_entropy(Tensor({3}, {1, 1, 1}), 3), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy(Tensor({3}, {1, 1, 1}), -1), std::out_of_range);
}

TEST_CASE("cross entropy graph matches eager") {
    Rng rng(3);
    Tensor logits = normal_tensor<float>({4, 6}, 2.0, rng);
    std::vector<int> tgt = {0, 5, 2, 2};
    Graph g;
    Var l = cross_entropy(g, g.view(logits), tgt);
    double ref = 0;
    for (int i = 0; i < 4; ++i) {
        Tensor row({6}, std::vector<float>(logits.row(i), logits.row(i) + 6));
        ref += cross_entropy(row, tgt[static_cast<size_t>(i)]);
    }
    CHECK(g.value(l)[0] == doctest::Approx(ref / 4).epsilon(1e-6));
}

TEST_CASE("backward of x squared") {
    Parameter x{"x", Tensor({1}, {3.0f}), Tensor({1})};
    Graph g;
    Var v = g.param(x);
    g.backward(sum(g, mul(g, v, v)));
    CHECK(x.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Parameter x{"x", Tensor({2}, {3.0f, 1.0f}), Tensor({2})};
    Graph g;
    Var v = g.param(x);
    CHECK_THROWS_AS(g.backward(mul(g, v, v)), std::invalid_argument);
}

TEST_CASE("unused parameter gets zero gradient") {
    Parameter a{"a", Tensor({2}, {1.0f, 2.0f}), Tensor({2})};
    Parameter b{"b", Tensor({2}, {5.0f, 6.0f}), Tensor({2})};
    Graph g;
    Var va = g.param(a);
    g.param(b);
    g.backward(sum(g, mul(g, va, va)));
    CHECK(b.grad[0] == 0.0f);
    CHECK(b.grad[1] == 0.0f);
    CHECK(a.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("matmul softmax cross entropy composite matches finite differences") {
    Rng rng(11);
    using D = double;
    BasicParameter<D> x{"x", normal_tensor<D>({3, 4}, 1.0, rng), BasicTensor<D>({3, 4})};
    BasicParameter<D> w{"w", normal_tensor<D>({4, 5}, 1.0, rng), BasicTensor<D>({4, 5})};
    std::vector<int> tgt = {1, 4, 0};
    auto loss = [&](BasicGraph<D>& g) {
        Var p = softmax(g, matmul(g, g.param(x), g.param(w)));
        return cross_entropy(g, p, tgt);
    };
    {
        BasicGraph<D> g;
        g.backward(loss(g));
    }
    const D h = 1e-6;
    for (auto* prm : {&x, &w}) {
        for (size_t i = 0; i < prm->value.numel(); ++i) {
            const D o = prm->value.data[i];
            prm->value.data[i] = o + h;
            BasicGraph<D> g1(false);
            const D fp = g1.value(loss(g1))[0];
            prm->value.data[i] = o - h;
            BasicGraph<D> g2(false);
            const D fm = g2.value(loss(g2))[0];
            prm->value.data[i] = o;
            const D num = (fp - fm) / (2 * h);
            CHECK(std::abs(num - prm->grad.data[i]) <= 1e-4 * std::max(1e-3, std::abs(num)));
        }
    }
}

TEST_CASE("random graphs agree with finite differences") {
    double worst = 0;
    for (uint64_t s = 0; s < 100; ++s) {
        auto r = siren::testing::check_random_graph(1000 + s);
        worst = std::max(worst, r.rel_error);
        CHECK_MESSAGE(r.rel_error < 1e-4, "seed ", 1000 + s);
    }
    MESSAGE("worst relative error ", worst);
}

TEST_CASE("float ops track double ops") {
    Rng rng(5);
    Tensor xf = normal_tensor<float>({6, 8}, 1.0, rng);
    Tensor wf = normal_tensor<float>({16, 4}, 0.5, rng);
    BasicTensor<double> xd(xf.shape), wd(wf.shape);
    for (size_t i = 0; i < xf.numel(); ++i) xd.data[i] = xf.data[i];
    for (size_t i = 0; i < wf.numel(); ++i) wd.data[i] = wf.data[i];
    Graph gf;
    BasicGraph<double> gd;
    Var yf = conv1d(gf, gf.view(xf), gf.view(wf), Var{}, 2, 2, 2, 1);
    Var yd = conv1d(gd, gd.view(xd), gd.view(wd), Var{}, 2, 2, 2, 1);
    REQUIRE(gf.value(yf).shape == gd.value(yd).shape);
    for (size_t i = 0; i < gf.value(yf).numel(); ++i) {
        CHECK(std::abs(gf.value(yf).data[i] - gd.value(yd).data[i]) < 1e-5);
    }
}

TEST_CASE("conv transpose inverts the shape of strided conv") {
    Rng rng(9);
    Graph g;
    Tensor x = normal_tensor<float>({2 * 16, 3}, 1.0, rng);
    Tensor w = normal_tensor<float>({4 * 3, 5}, 1.0, rng);
    Var y = conv1d(g, g.view(x), g.view(w), Var{}, 2, 4, 2, 1);
    CHECK(g.value(y).rows() == 2 * 8);
    Tensor wt = normal_tensor<float>({5, 4 * 3}, 1.0, rng);
    Var z = conv_transpose1d(g, y, g.view(wt), Var{}, 2, 4, 2, 1);
    CHECK(g.value(z).rows() == 2 * 16);
    CHECK(g.value(z).cols() == 3);
}

TEST_CASE("causal attention ignores future rows") {
    Rng rng(2);
    Tensor x = normal_tensor<float>({5, 8}, 1.0, rng);
    Graph g1;
    Var a = attention(g1, g1.view(x), g1.view(x), g1.view(x), 2, 1, true);
    Tensor x2 = x;
    for (int j = 0; j < 8; ++j) x2.row(4)[j] += 1.0f;
    Graph g2;
    Var b = attention(g2, g2.view(x2), g2.view(x2), g2.view(x2), 2, 1, true);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 8; ++j) {
            CHECK(g1.value(a).row(i)[j] == g2.value(b).row(i)[j]);
        }
    }
}

TEST_CASE("clip and minimum follow their piecewise rules") {
    Parameter r{"r", Tensor({3}, {1.5f, 0.5f, 1.0f}), Tensor({3})};
    Graph g;
    Var v = g.param(r);
    Var c = clamp(g, v, 0.8f, 1.2f);
    CHECK(g.value(c)[0] == doctest::Approx(1.2));
    CHECK(g.value(c)[1] == doctest::Approx(0.8));
    Var m = minimum(g, v, c);
    g.backward(sum(g, m));
    CHECK(r.grad[0] == 0.0f);
    CHECK(r.grad[1] == 1.0f);
    CHECK(r.grad[2] == 1.0f);
}

TEST_CASE("adamw hand values") {
    Parameter p{"p", Tensor({2}, {0.5f, -2.0f}), Tensor({2})};
    std::vector<Parameter*> ps = {&p};
    AdamWState st;
    AdamWConfig cfg;
    cfg.lr = 1e-3f;
    adamw_step(ps, st, cfg);
    CHECK(p.value[0] == 0.5f);
    CHECK(p.value[1] == -2.0f);
    CHECK(st.step == 1);

    Parameter q{"q", Tensor({1}, {1.0f}), Tensor({1}, {1.0f})};
    std::vector<Parameter*> qs = {&q};
    AdamWState sq;
    adamw_step(qs, sq, cfg);
    CHECK(q.value[0] - 1.0f == doctest::Approx(-1e-3).epsilon(1e-4));

    Parameter d{"d", Tensor({1}, {2.0f}), Tensor({1})};
    std::vector<Parameter*> ds = {&d};
    AdamWState sd;
    AdamWConfig dc;
    dc.lr = 1e-3f;
    dc.weight_decay = 0.1f;
    adamw_step(ds, sd, dc);
    CHECK(d.value[0] == doctest::Approx(2.0 * (1 - 1e-4)).epsilon(1e-7));

    std::vector<Parameter*> none;
    AdamWState se;
    adamw_step(none, se, cfg);
    CHECK(se.step == 0);
}

TEST_CASE("identical seeds give identical tensors") {
    Rng a(123), b(123);
    auto x = normal_tensor<float>({4, 4}, 1.0, a);
    auto y = normal_tensor<float>({4, 4}, 1.0, b);
    CHECK(x.data == y.data);
}
