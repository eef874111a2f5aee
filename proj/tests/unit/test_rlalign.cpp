#include <cmath>

#include "doctest.h"
#include "siren/lm/train.h"
#include "siren/rl/grpo.h"
#include "siren/rl/reward.h"
#include "../support/lm_fixtures.h"

using namespace siren;
using namespace siren::rl;
using siren::testing::pointers;
using siren::testing::random_books;
using siren::testing::small_config;

namespace {

struct Fixture {
    lm::LmConfig cfg = small_config(4, 2);
    rvq::Tokenizer tok;
    std::vector<lm::CodeModel> group;
    RewardModel rm{RewardConfig{}};

    Fixture() {
        rvq::TokenizerConfig tc;
        tc.vocab = cfg.vocab;
        tc.code_dim = cfg.code_dim;
        tc.depth = cfg.depth;
        tc.channels = 8;
        tok = rvq::Tokenizer(tc);
        const auto books = random_books(cfg, 31);
        for (int j = 0; j < cfg.depth; ++j) {
            tok.mutable_codebooks()[static_cast<size_t>(j)].table = books[static_cast<size_t>(j)];
        }
        group = lm::make_group(cfg, books);
    }

    RLConfig rl() const {
        RLConfig c;
        c.group_size = 4;
        c.length = 8;
        c.top_k = cfg.vocab;
        c.lr = 1e-3;
        return c;
    }
};

}  // namespace

TEST_CASE("group advantages use the population standard deviation") {
    const auto a = group_advantages({1.0, 0.5, 0.0});
    CHECK(a[0] == doctest::Approx(1.224745).epsilon(1e-6));
    CHECK(std::abs(a[1]) < 1e-12);
    CHECK(a[2] == doctest::Approx(-1.224745).epsilon(1e-6));
    // Independent evaluation of (R - mean) / sqrt(mean((R - mean)^2)).
    const double sd = std::sqrt((0.25 + 0.0 + 0.25) / 3.0);
    CHECK(std::abs(a[0] - 0.5 / sd) < 1e-12);
}

TEST_CASE("group advantage guard and normalisation identity") {
    for (double v : group_advantages({0.3, 0.3, 0.3, 0.3})) {
        CHECK(v == 0.0);
    }
    for (double v : group_advantages({0.3, 0.3 + 1e-10})) {
        CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(group_advantages({1.0}), std::invalid_argument);
    nn::Rng rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(8);
        for (auto& x : r) {
            x = nd(rng);
        }
        const auto a = group_advantages(r);
        double s = 0, ss = 0;
        for (double x : a) {
            s += x;
            ss += x * x;
        }
        CHECK(std::abs(s) < 1e-6);
        CHECK(std::abs(ss / 8.0 - 1.0) < 1e-9);
    }
}

TEST_CASE("clipped surrogate hand cases") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2, 0.2) == 1.2);
    CHECK(clipped_surrogate(0.5, -1.0, 0.2, 0.2) == -0.8);
    CHECK(clipped_surrogate(1.0, 0.7, 0.2, 0.28) == 0.7);
    CHECK(clipped_surrogate(1.5, 1.0, 0.2, 0.28) == 1.28);
    // Pessimistic side is never clipped.
    CHECK(clipped_surrogate(0.5, 1.0, 0.2, 0.28) == 0.5);
    CHECK(clipped_surrogate(1.5, -1.0, 0.2, 0.28) == -1.5);
}

TEST_CASE("advantage filter keeps exactly |A| >= gamma") {
    std::vector<Rollout> rs(5);
    const double adv[] = {0.49, -0.5, 0.5, -0.1, 2.0};
    for (size_t i = 0; i < rs.size(); ++i) {
        rs[i].advantage = adv[i];
    }
    CHECK(apply_filter(rs, 0.5) == 3);
    CHECK_FALSE(rs[0].retained);
    CHECK(rs[1].retained);
    CHECK(rs[2].retained);
    CHECK_FALSE(rs[3].retained);
    CHECK(rs[4].retained);
}

TEST_CASE("rl config validation and direction mapping") {
    RLConfig c;
    CHECK_NOTHROW(c.validate());
    c.group_size = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RLConfig{};
    c.eps_up = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RLConfig{};
    c.inner_iters = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(aligned_index(Direction::anti_causal, 6) == 0);
    CHECK(aligned_index(Direction::causal, 6) == 5);
    CHECK(parse_direction("causal") == Direction::causal);
    CHECK_THROWS_AS(parse_direction("sideways"), std::invalid_argument);
}

TEST_CASE("reward is a bounded deterministic cosine") {
    Fixture f;
    const auto clip = data::generate_clip(4, 99);
    const double r1 = f.rm.score(clip, 4);
    CHECK(r1 == f.rm.score(clip, 4));
    CHECK(r1 >= -1.0);
    CHECK(r1 <= 1.0);
    CHECK(f.rm.audio_embedding(clip) == f.rm.audio_embedding(clip));
    const auto e = f.rm.text_embedding(2);
    CHECK(cosine(e, e) == 1.0);
    rvq::CodeGrid zeros;
    zeros.layers = f.cfg.depth;
    zeros.length = 8;
    zeros.codes.assign(32, 0);
    CHECK(std::isfinite(compute_reward(zeros, 0, f.tok, f.rm)));
    rvq::CodeGrid bad = zeros;
    bad.codes[3] = f.cfg.vocab;
    CHECK_THROWS(compute_reward(bad, 0, f.tok, f.rm));
    // Split form concatenates action and proxy layers.
    rvq::CodeGrid action = zeros, proxy = zeros;
    action.layers = proxy.layers = 2;
    action.codes.assign(16, 1);
    proxy.codes.assign(16, 2);
    rvq::CodeGrid full = zeros;
    for (int t = 0; t < 8; ++t) {
        full.codes[static_cast<size_t>(t)] = 1;
        full.codes[static_cast<size_t>(8 + t)] = 1;
        full.codes[static_cast<size_t>(16 + t)] = 2;
        full.codes[static_cast<size_t>(24 + t)] = 2;
    }
    CHECK(compute_reward(action, proxy, 3, f.tok, f.rm) == compute_reward(full, 3, f.tok, f.rm));
}

TEST_CASE("rollouts: complete grids, faithful old log-probs, frozen models untouched") {
    Fixture f;
    const auto ptrs = pointers(f.group);
    const uint64_t frozen = lm::parameter_hash(f.group[1].params());
    const auto rs = rollout_group(ptrs, 0, f.tok, f.rm, 5, f.rl(), 77);
    REQUIRE(rs.size() == 4);
    for (const auto& r : rs) {
        CHECK(r.grid.layers == f.cfg.depth);
        CHECK(r.grid.length == 8);
        CHECK(r.old_log_probs.size() == 2);
        CHECK(std::isfinite(r.reward));
    }
    const auto lp = policy_log_probs(f.group[0], rs);
    for (size_t i = 0; i < rs.size(); ++i) {
        for (int p = 0; p < 2; ++p) {
            for (int t = 0; t < 8; ++t) {
                CHECK(std::abs(lp[i][static_cast<size_t>(p)][static_cast<size_t>(t)] -
                               rs[i].old_log_probs[static_cast<size_t>(p)][static_cast<size_t>(t)]) < 1e-5);
            }
        }
    }
    CHECK(lm::parameter_hash(f.group[1].params()) == frozen);
    std::vector<const lm::CodeModel*> missing = {ptrs[0]};
    CHECK_THROWS_AS(rollout_group(missing, 0, f.tok, f.rm, 5, f.rl(), 77), std::invalid_argument);
}

TEST_CASE("first inner iteration surrogate equals mean retained advantage") {
    Fixture f;
    auto cfg = f.rl();
    cfg.inner_iters = 3;
    auto rs = rollout_group(pointers(f.group), 0, f.tok, f.rm, 2, cfg, 5);
    const std::vector<double> adv = {1.5, -0.05, -1.0, 0.3};
    for (size_t i = 0; i < rs.size(); ++i) {
        rs[i].advantage = adv[i];
    }
    apply_filter(rs, cfg.gamma);
    nn::AdamWState opt;
    const uint64_t before = lm::parameter_hash(f.group[0].params());
    const auto st = grpo_update(f.group[0], rs, cfg, opt);
    CHECK(st.retained == 3);
    REQUIRE(st.objective.size() == 3);
    CHECK(st.objective[0] == doctest::Approx((1.5 - 1.0 + 0.3) / 3.0).epsilon(1e-5));
    CHECK(lm::parameter_hash(f.group[0].params()) != before);
    // The surrogate improves over the inner iterations.
    CHECK(st.objective[2] > st.objective[0]);
}

TEST_CASE("update is skipped when every rollout is filtered") {
    Fixture f;
    auto rs = rollout_group(pointers(f.group), 0, f.tok, f.rm, 2, f.rl(), 6);
    for (auto& r : rs) {
        r.advantage = 0.01;
    }
    apply_filter(rs, 0.1);
    nn::AdamWState opt;
    const uint64_t before = lm::parameter_hash(f.group[0].params());
    const auto st = grpo_update(f.group[0], rs, f.rl(), opt);
    CHECK(st.skipped);
    CHECK(lm::parameter_hash(f.group[0].params()) == before);
}

TEST_CASE("rl_run trace length and frozen-model hashes") {
    for (auto dir : {Direction::anti_causal, Direction::causal}) {
        Fixture f;
        auto cfg = f.rl();
        cfg.outer_steps = 3;
        cfg.direction = dir;
        const int a = aligned_index(dir, 2);
        const uint64_t frozen = lm::parameter_hash(f.group[static_cast<size_t>(1 - a)].params());
        int seen = 0;
        const auto res = rl_run(f.group, f.tok, f.rm, {1, 2, 3}, cfg, [&](const RewardTrace&) { ++seen; });
        CHECK(res.trace.size() == 3);
        CHECK(seen == 3);
        CHECK(res.frozen_hash_before == res.frozen_hash_after);
        CHECK(lm::parameter_hash(f.group[static_cast<size_t>(1 - a)].params()) == frozen);
        for (const auto& t : res.trace) {
            CHECK(t.retained_fraction >= 0.0);
            CHECK(t.retained_fraction <= 1.0);
        }
    }
}
