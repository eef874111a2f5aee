#include <cmath>
#include <numeric>

#include "doctest.h"
#include "siren/lm/model.h"
#include "siren/lm/train.h"
#include "siren/nn/ops.h"
#include "../support/lm_fixtures.h"

using namespace siren;
using namespace siren::lm;
using siren::testing::random_books;
using siren::testing::random_grid;
using siren::testing::small_config;

namespace {

CodeModel::Batch one(const CodeGrid& g, int cls, int len) {
    CodeModel::Batch b;
    b.grids = {&g};
    b.classes = {cls};
    b.starts = {0};
    b.window = len;
    return b;
}

std::vector<Tensor> logits_of(const CodeModel& m, const CodeGrid& g, int cls) {
    Graph graph(false);
    auto out = m.forward(graph, one(g, cls, g.length));
    std::vector<Tensor> res;
    for (Var v : out.logits) {
        res.push_back(graph.value(v));
    }
    return res;
}

bool rows_equal(const Tensor& a, const Tensor& b, int row) {
    for (int j = 0; j < a.cols(); ++j) {
        if (a.row(row)[j] != b.row(row)[j]) {
            return false;
        }
    }
    return true;
}

TokenSet token_set(const LmConfig& cfg, int n, int len, uint64_t seed) {
    TokenSet ts;
    for (int i = 0; i < n; ++i) {
        ts.grids.push_back(random_grid(cfg, len, seed + static_cast<uint64_t>(i)));
        ts.classes.push_back(i % cfg.num_classes);
    }
    return ts;
}

}  // namespace

TEST_CASE("config validation") {
    LmConfig cfg = small_config(4, 3);
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config(12, 2);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.models() == 6);
    CHECK(parse_mode("accumulated") == ConditionMode::accumulated);
    CHECK_THROWS_AS(parse_mode("sideways"), std::invalid_argument);
    auto books = random_books(small_config(4, 2), 1);
    books.pop_back();
    CHECK_THROWS_AS(CodeModel::collaborative(small_config(4, 2), 0, books), std::invalid_argument);
}

TEST_CASE("summed input embedding matches direct summation") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 2);
    const auto m = CodeModel::collaborative(cfg, 0, books);
    const auto g = random_grid(cfg, 10, 3);
    const Tensor s = m.summed_embeddings(g);
    for (int t = 0; t < g.length; ++t) {
        for (int i = 0; i < cfg.code_dim; ++i) {
            double acc = 0.0;
            for (int j = 0; j < cfg.depth; ++j) {
                acc += books[static_cast<size_t>(j)].row(g.at(j, t))[i];
            }
            CHECK(s.row(t)[i] == static_cast<float>(acc));
        }
    }
    auto g2 = g;
    g2.codes[static_cast<size_t>(2) * g.length + 4] = (g.at(2, 4) + 1) % cfg.vocab;
    const Tensor s2 = m.summed_embeddings(g2);
    CHECK_FALSE(rows_equal(s, s2, 4));
    CHECK(rows_equal(s, s2, 3));
    g2.codes[0] = cfg.vocab;
    CHECK_THROWS_AS(m.summed_embeddings(g2), std::out_of_range);
}

TEST_CASE("first step sees only the start slot") {
    const auto cfg = small_config(4, 2);
    const auto m = CodeModel::collaborative(cfg, 0, random_books(cfg, 4));
    const auto a = m.hidden_at(random_grid(cfg, 8, 5), 0, 3);
    const auto b = m.hidden_at(random_grid(cfg, 8, 6), 0, 3);
    CHECK(a == b);
    CHECK(a.size() == static_cast<size_t>(cfg.width));
}

TEST_CASE("temporal causality: future tokens leave earlier logits bit-identical") {
    for (int variant = 0; variant < 2; ++variant) {
        const auto cfg = small_config(4, 2);
        const auto books = random_books(cfg, 7);
        const auto m = variant == 0 ? CodeModel::collaborative(cfg, 1, books) : CodeModel::baseline(cfg, books);
        const auto g = random_grid(cfg, 16, 8);
        const auto base = logits_of(m, g, 2);
        const int t = 6;
        auto g2 = g;
        for (int j = 0; j < cfg.depth; ++j) {
            for (int u = t + 1; u < g.length; ++u) {
                g2.codes[static_cast<size_t>(j) * g.length + u] = (g.at(j, u) + 5) % cfg.vocab;
            }
        }
        const auto pert = logits_of(m, g2, 2);
        for (size_t p = 0; p < base.size(); ++p) {
            for (int u = 0; u <= t; ++u) {
                CHECK(rows_equal(base[p], pert[p], u));
            }
            bool changed = false;
            for (int u = t + 1; u < g.length; ++u) {
                changed = changed || !rows_equal(base[p], pert[p], u);
            }
            CHECK(changed);
        }
    }
}

TEST_CASE("residual anti-leak: deeper same-step codes leave shallower predictions bit-identical") {
    const auto cfg = small_config(6, 3);
    const auto books = random_books(cfg, 9);
    for (auto mode : {ConditionMode::accumulated, ConditionMode::residual_prev, ConditionMode::independent}) {
        auto c = cfg;
        c.mode = mode;
        const auto m = CodeModel::collaborative(c, 1, books);  // layers 3, 4, 5
        const auto g = random_grid(c, 12, 10);
        const auto base = logits_of(m, g, 1);
        for (int p = 0; p < m.owned(); ++p) {
            auto g2 = g;
            const int t = 5;
            for (int j = m.owned_layer(p); j < c.depth; ++j) {
                g2.codes[static_cast<size_t>(j) * g.length + t] = (g.at(j, t) + 3) % c.vocab;
            }
            const auto pert = logits_of(m, g2, 1);
            CHECK(rows_equal(base[static_cast<size_t>(p)], pert[static_cast<size_t>(p)], t));
        }
    }
}

TEST_CASE("accumulated conditioning slots equal sos plus cumulative sums") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 11);
    const auto m = CodeModel::collaborative(cfg, 1, books);  // layers 2, 3
    const std::vector<int> same = {3, 7, 12};
    const Tensor slots = m.conditioning_slots(same, 2);
    const Tensor& sos = m.params().at("dec.sos").value;
    for (int p = 0; p < 2; ++p) {
        for (int i = 0; i < cfg.code_dim; ++i) {
            double acc = 0.0;
            for (int j = 0; j < 2 + p; ++j) {
                acc += books[static_cast<size_t>(j)].row(same[static_cast<size_t>(j)])[i];
            }
            CHECK(slots.row(p)[i] == static_cast<float>(acc) + sos.data[static_cast<size_t>(i)]);
        }
    }
    CHECK_THROWS_AS(m.conditioning_slots(std::vector<int>{3, 7}, 2), std::invalid_argument);
    CHECK_THROWS_AS(m.position_logits(std::vector<float>(static_cast<size_t>(cfg.width)), std::vector<int>{3}, 0),
                    std::invalid_argument);
}

TEST_CASE("residual_prev slots hold only the previous layer embedding") {
    auto cfg = small_config(4, 2);
    cfg.mode = ConditionMode::residual_prev;
    const auto books = random_books(cfg, 12);
    const auto m = CodeModel::collaborative(cfg, 1, books);
    const std::vector<int> same = {3, 7, 12};
    const Tensor slots = m.conditioning_slots(same, 2);
    const Tensor& sos = m.params().at("dec.sos").value;
    for (int i = 0; i < cfg.code_dim; ++i) {
        CHECK(slots.row(0)[i] == books[1].row(7)[i] + sos.data[static_cast<size_t>(i)]);
        CHECK(slots.row(1)[i] == books[2].row(12)[i] + sos.data[static_cast<size_t>(i)]);
    }
}

TEST_CASE("independent mode ignores every same-step code") {
    auto cfg = small_config(4, 2);
    cfg.mode = ConditionMode::independent;
    const auto m = CodeModel::collaborative(cfg, 1, random_books(cfg, 13));
    const auto g = random_grid(cfg, 10, 14);
    const auto base = logits_of(m, g, 0);
    auto g2 = g;
    const int t = 4;
    for (int j = 0; j < cfg.depth; ++j) {
        g2.codes[static_cast<size_t>(j) * g.length + t] = (g.at(j, t) + 1) % cfg.vocab;
    }
    const auto pert = logits_of(m, g2, 0);
    for (size_t p = 0; p < base.size(); ++p) {
        CHECK(rows_equal(base[p], pert[p], t));
    }
}

TEST_CASE("condition changes the hidden state") {
    const auto cfg = small_config(4, 2);
    const auto m = CodeModel::collaborative(cfg, 0, random_books(cfg, 15));
    const auto g = random_grid(cfg, 8, 16);
    bool differs = false;
    for (int t = 0; t < g.length; ++t) {
        differs = differs || m.hidden_at(g, t, 0) != m.hidden_at(g, t, 9);
    }
    CHECK(differs);
    Graph graph(false);
    auto out = m.forward(graph, one(g, 0, 8));
    CHECK(graph.value(out.hidden).shape == std::vector<int>{8, cfg.width});
}

TEST_CASE("incremental step reproduces the full-prefix hidden state bit-exactly") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 17);
    const auto m = CodeModel::collaborative(cfg, 1, books);
    const auto g = random_grid(cfg, 12, 18);
    auto cache = m.start_cache(4);
    std::vector<float> prev(static_cast<size_t>(cfg.code_dim));
    for (int t = 0; t < g.length; ++t) {
        if (t > 0) {
            m.step_embedding(g, t - 1, prev.data());
        }
        CHECK(m.step(cache, prev) == m.hidden_at(g, t, 4));
    }
}

TEST_CASE("teacher-forced logits agree with per-step decoding") {
    const auto cfg = small_config(4, 2);
    const auto m = CodeModel::collaborative(cfg, 1, random_books(cfg, 19));
    const auto g = random_grid(cfg, 9, 20);
    const auto full = logits_of(m, g, 6);
    for (int t = 0; t < g.length; ++t) {
        const auto h = m.hidden_at(g, t, 6);
        std::vector<int> same;
        for (int j = 0; j < cfg.depth; ++j) {
            same.push_back(g.at(j, t));
        }
        for (int p = 0; p < m.owned(); ++p) {
            const auto l = m.position_logits(h, same, p);
            for (int v = 0; v < cfg.vocab; ++v) {
                CHECK(l[static_cast<size_t>(v)] == full[static_cast<size_t>(p)].row(t)[v]);
            }
        }
    }
}

TEST_CASE("initial loss is close to log V") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 21);
    const auto data = token_set(cfg, 16, 16, 100);
    for (int k = 0; k < cfg.models(); ++k) {
        const auto m = CodeModel::collaborative(cfg, k, books);
        for (double ce : evaluate(m, data, 16)) {
            CHECK(std::abs(ce - std::log(cfg.vocab)) < 0.15 * std::log(cfg.vocab));
        }
    }
    const auto b = CodeModel::baseline(cfg, books);
    for (double ce : evaluate(b, data, 16)) {
        CHECK(std::abs(ce - std::log(cfg.vocab)) < 0.15 * std::log(cfg.vocab));
    }
}

TEST_CASE("single batch overfit") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 22);
    const auto data = token_set(cfg, 4, 16, 200);
    auto m = CodeModel::collaborative(cfg, 0, books);
    TrainOptions o;
    o.steps = 2000;
    o.batch = 4;
    o.lr = 3e-3;
    o.eval_every = 0;
    o.warmup = 20;
    const auto hist = train_model(m, data, data, o);
    const auto final_ce = evaluate(m, data, 4);
    MESSAGE("overfit CE " << final_ce[0] << " " << final_ce[1]);
    CHECK(final_ce[0] + final_ce[1] < 0.1);
    CHECK(hist.eval.size() == 2);
}

TEST_CASE("training one model leaves the others bit-identical") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 23);
    auto group = make_group(cfg, books);
    const auto data = token_set(cfg, 8, 12, 300);
    const uint64_t before1 = parameter_hash(group[1].params());
    const uint64_t before0 = parameter_hash(group[0].params());
    TrainOptions o;
    o.steps = 5;
    o.batch = 2;
    o.eval_every = 0;
    train_model(group[0], data, TokenSet{}, o);
    CHECK(parameter_hash(group[1].params()) == before1);
    CHECK(parameter_hash(group[0].params()) != before0);
    // Stores are separate objects with separate storage.
    CHECK(group[0].params().at("ctx.start").value.data.data() != group[1].params().at("ctx.start").value.data.data());
}

TEST_CASE("shared initialisation across group members") {
    const auto cfg = small_config(6, 2);
    const auto group = make_group(cfg, random_books(cfg, 24));
    CHECK(parameter_hash(group[0].params()) == parameter_hash(group[2].params()));
    CHECK(group[2].first_layer() == 4);
}

TEST_CASE("same seed gives the same loss trajectory; gradient hook contract") {
    const auto cfg = small_config(4, 2);
    const auto books = random_books(cfg, 25);
    const auto data = token_set(cfg, 8, 12, 400);
    TrainOptions o;
    o.steps = 6;
    o.batch = 2;
    o.eval_every = 0;
    o.capture_every = 2;
    int calls = 0;
    TrainHooks hooks;
    hooks.on_gradients = [&](int, const std::vector<std::vector<float>>& g) {
        ++calls;
        CHECK(g.size() == static_cast<size_t>(cfg.depth));
        CHECK(g.front().size() == static_cast<size_t>(cfg.width * cfg.mlp_ratio));
    };
    auto a = CodeModel::baseline(cfg, books);
    auto b = CodeModel::baseline(cfg, books);
    const auto ha = train_model(a, data, TokenSet{}, o, hooks);
    const auto hb = train_model(b, data, TokenSet{}, o);
    CHECK(calls == 3);
    REQUIRE(ha.train.size() == hb.train.size());
    for (size_t i = 0; i < ha.train.size(); ++i) {
        CHECK(ha.train[i].ce == hb.train[i].ce);
    }
    CHECK(parameter_hash(a.params()) == parameter_hash(b.params()));
}

TEST_CASE("loss balance metrics") {
    auto lb = loss_balance_metrics({{0, 0, 0.2}, {0, 1, 0.3}}, 2);
    CHECK(lb.loss_mean == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(lb.loss_ratio == doctest::Approx(1.5).epsilon(1e-12));
    lb = loss_balance_metrics({{0, 0, 0.7}, {0, 1, 0.7}, {0, 2, 0.7}}, 3);
    CHECK(lb.loss_ratio == 1.0);
    lb = loss_balance_metrics({{0, 0, 2.0}, {0, 1, 3.0}, {10, 0, 1.0}, {10, 1, 3.0}, {20, 0, 2.0}, {20, 1, 4.0}}, 2);
    CHECK(lb.step == 10);
    CHECK(lb.loss_ratio == 3.0);
    CHECK_THROWS_AS(loss_balance_metrics({{0, 0, 0.0}, {0, 1, 0.3}}, 2), std::domain_error);
    CHECK_THROWS_AS(loss_balance_metrics({{0, 0, 0.2}}, 2), std::invalid_argument);
}
