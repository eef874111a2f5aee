// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Pass criterion numbers as arguments to run a
// subset. Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "siren/analysis/analysis.h"
#include "siren/cli/cli.h"
#include "siren/io/checkpoint.h"
#include "siren/io/metrics.h"
#include "siren/lm/train.h"
#include "siren/rl/grpo.h"
#include "siren/sampler/sampler.h"
#include "../support/gradcheck.h"

using namespace siren;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void log(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// Desk-scale shared state, built lazily so subsets of criteria stay cheap.
class Workbench {
public:
    const data::Dataset& dataset() {
        if (!dataset_) {
            data::DatasetConfig dc;
            dc.train_size = 600;
            dc.val_size = 300;
            dc.rl_size = 100;
            dataset_ = data::build_dataset(dc);
        }
        return *dataset_;
    }

    rvq::TokenizerConfig tokenizer_config(int depth) const {
        rvq::TokenizerConfig tc;
        tc.depth = depth;
        tc.steps = 1500;
        return tc;
    }

    const rvq::Tokenizer& tokenizer(int depth) {
        auto it = tokenizers_.find(depth);
        if (it == tokenizers_.end()) {
            const auto t0 = Clock::now();
            const double c0 = cpu_seconds();
            auto tok = rvq::train_tokenizer(dataset().train.items, tokenizer_config(depth));
            tokenizer_cpu_[depth] = cpu_seconds() - c0;
            log("tokenizer r=" + std::to_string(depth) + " trained in " + fmt("%.1f s", seconds_since(t0)));
            it = tokenizers_.emplace(depth, std::move(tok)).first;
        }
        return it->second;
    }

    double tokenizer_cpu(int depth) {
        tokenizer(depth);
        return tokenizer_cpu_.at(depth);
    }

    const rvq::Tokenizer& tok12() { return tokenizer(12); }

    lm::LmConfig lm_config() const { return lm::LmConfig{}; }

    lm::TrainOptions train_options() const {
        lm::TrainOptions o;
        o.steps = 1500;
        o.eval_every = 250;
        o.eval_items = 100;
        o.capture_every = 250;
        return o;
    }

    const lm::TokenSet& train_tokens() {
        tokenize();
        return *train_tokens_;
    }
    const lm::TokenSet& val_tokens() {
        tokenize();
        return *val_tokens_;
    }

    std::vector<nn::Tensor> books() { return lm::codebook_tables(tok12(), 12); }

    struct Trained {
        std::vector<lm::CodeModel> models;
        lm::TrainHistory history;
        std::map<int, std::vector<std::vector<float>>> head_grads;
    };

    Trained& baseline() {
        if (!baseline_) {
            baseline_.emplace();
            baseline_->models.push_back(lm::CodeModel::baseline(lm_config(), books()));
            lm::TrainHooks hooks;
            hooks.on_gradients = [&](int step, const std::vector<std::vector<float>>& g) {
                baseline_->head_grads[step] = g;
            };
            const auto t0 = Clock::now();
            baseline_->history = lm::train_model(baseline_->models[0], train_tokens(), val_tokens(), train_options(), hooks);
            log("baseline trained in " + fmt("%.1f s", seconds_since(t0)));
        }
        return *baseline_;
    }

    Trained& group() {
        if (!group_) {
            group_.emplace();
            group_->models = lm::make_group(lm_config(), books());
            const auto t0 = Clock::now();
            group_->history = lm::train_group(group_->models, train_tokens(), val_tokens(), train_options());
            log("collaborative group trained in " + fmt("%.1f s", seconds_since(t0)));
        }
        return *group_;
    }

    const rl::RewardModel& reward() {
        if (!reward_) {
            double acc = 0.0;
            reward_ = rl::train_reward_probe(dataset().train.items, dataset().val.items, rl::RewardConfig{}, &acc);
            log("reward probe held-out retrieval accuracy " + fmt("%.3f", acc));
        }
        return *reward_;
    }

private:
    std::optional<data::Dataset> dataset_;
    std::map<int, rvq::Tokenizer> tokenizers_;
    std::map<int, double> tokenizer_cpu_;
    std::optional<lm::TokenSet> train_tokens_;
    std::optional<lm::TokenSet> val_tokens_;
    std::optional<Trained> baseline_;
    std::optional<Trained> group_;
    std::optional<rl::RewardModel> reward_;

    void tokenize() {
        if (!train_tokens_) {
            train_tokens_ = lm::tokenize_split(tok12(), dataset().train.items, 12);
            val_tokens_ = lm::tokenize_split(tok12(), dataset().val.items, 12);
        }
    }
};

// Nearest codebook row by exhaustive squared distance in long double.
int brute_nearest(const std::vector<float>& x, const rvq::Codebook& book) {
    int best = 0;
    long double bd = std::numeric_limits<long double>::infinity();
    for (int k = 0; k < book.vocab(); ++k) {
        long double d = 0;
        for (int i = 0; i < book.dim(); ++i) {
            const long double e = static_cast<long double>(x[static_cast<size_t>(i)]) - book.table.row(k)[i];
            d += e * e;
        }
        if (d < bd) {
            bd = d;
            best = k;
        }
    }
    return best;
}

Outcome quantizer_exactness(Workbench&) {
    const auto t0 = Clock::now();
    nn::Rng rng(2024);
    std::uniform_int_distribution<int> vdist(2, 128), cdist(1, 48);
    int agree = 0;
    const int cases = 10000;
    for (int c = 0; c < cases; ++c) {
        const int v = vdist(rng), d = cdist(rng);
        rvq::Codebook book;
        book.table = nn::normal_tensor<float>({v, d}, 1.0, rng);
        if (c % 10 == 0) {
            // duplicated rows exercise the lowest-index tie rule
            std::copy(book.table.row(0), book.table.row(0) + d, book.table.row(v - 1));
        }
        const auto x = nn::normal_tensor<float>({d}, 1.0, rng).data;
        const auto q = rvq::quantize_layer(std::span<const float>(x), book);
        agree += q.code == brute_nearest(x, book) ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    return {agree == cases && secs < 10.0,
            std::to_string(agree) + "/" + std::to_string(cases) + " match brute force in " + fmt("%.2f s", secs)};
}

Outcome telescoping(Workbench& wb) {
    const auto& tok = wb.tok12();
    const auto& ds = wb.dataset();
    std::vector<const data::Example*> clips;
    for (const auto* split : {&ds.train, &ds.val, &ds.rl}) {
        for (const auto& e : split->items) {
            clips.push_back(&e);
        }
    }
    size_t mismatches = 0, checked = 0;
    const auto books = tok.codebooks();
    for (const auto* e : clips) {
        const auto f = tok.encode(e->wave);
        const auto res = rvq::rvq_tokenize(f, books, tok.depth());
        const int c = f.dim();
        for (int t = 0; t < f.length(); ++t) {
            for (int i = 0; i < c; ++i) {
                double acc = 0.0;
                for (int j = 0; j < tok.depth(); ++j) {
                    acc += books[static_cast<size_t>(j)].table.row(res.grid.at(j, t))[i];
                }
                const double rebuilt = acc + res.residual[static_cast<size_t>(t) * c + i];
                mismatches += rebuilt == static_cast<double>(f.values.row(t)[i]) ? 0 : 1;
                ++checked;
            }
        }
    }
    return {mismatches == 0 && clips.size() >= 1000,
            std::to_string(clips.size()) + " clips, " + std::to_string(checked) + " values, " +
                std::to_string(mismatches) + " mismatches"};
}

Outcome depth_trend(Workbench& wb) {
    const std::vector<int> depths = {1, 2, 4, 8, 12};
    std::vector<double> mse;
    double cpu = 0.0;
    for (int r : depths) {
        cpu += wb.tokenizer_cpu(r);
        mse.push_back(rvq::reconstruction_mse(wb.tokenizer(r), wb.dataset().val.items));
    }
    // Four adjacent pairs plus the endpoint pair (r=1 against r=12).
    int ok = 0;
    for (size_t i = 0; i + 1 < mse.size(); ++i) {
        ok += mse[i + 1] <= mse[i] ? 1 : 0;
    }
    ok += mse.back() <= mse.front() ? 1 : 0;
    std::ostringstream d;
    d << "val MSE";
    for (size_t i = 0; i < depths.size(); ++i) {
        d << " r" << depths[i] << "=" << fmt("%.5f", mse[i]);
    }
    d << "; " << ok << "/5 pairs non-increasing; " << fmt("%.0f s CPU", cpu);
    return {ok >= 4 && cpu <= 1800.0, d.str()};
}

Outcome layer_independence(Workbench& wb) {
    const std::vector<data::Example> clips(wb.dataset().val.items.begin(), wb.dataset().val.items.begin() + 100);
    const auto a = analysis::layer_cosine_stats(wb.tok12(), clips, analysis::CosineMode::per_step);
    const auto b = analysis::layer_cosine_stats(wb.tok12(), clips, analysis::CosineMode::pooled);
    const bool self = a.self_cosine_min == 1.0 && a.self_cosine_max == 1.0 && b.self_cosine_min == 1.0 &&
                      b.self_cosine_max == 1.0;
    return {a.mean_abs_distinct < 0.3 && b.mean_abs_distinct < 0.3 && self,
            "mean |cos| per-step " + fmt("%.4f", a.mean_abs_distinct) + ", pooled " +
                fmt("%.4f", b.mean_abs_distinct) + ", self-cosine exactly 1: " + (self ? "yes" : "no")};
}

Outcome gradient_angles(Workbench& wb) {
    auto& base = wb.baseline();
    const auto it = base.head_grads.find(1000);
    if (it == base.head_grads.end()) {
        return {false, "no gradient capture at step 1000"};
    }
    const auto st = analysis::angle_stats(it->second);
    std::ostringstream d;
    d << "step 1000: mean pairwise angle " << fmt("%.1f", st.mean) << " deg over " << st.angles.size()
      << " head pairs (min " << fmt("%.1f", st.min) << ", max " << fmt("%.1f", st.max) << ")";
    for (const auto& [step, g] : base.head_grads) {
        if (step != 1000) {
            d << "; step " << step << " " << fmt("%.1f", analysis::angle_stats(g).mean);
        }
    }
    return {st.mean >= 60.0 && st.mean <= 120.0, d.str()};
}

Outcome semantic_probe(Workbench& wb) {
    const auto& ds = wb.dataset();
    const analysis::ProbeConfig pc;
    const auto acc = analysis::semantic_probe_accuracy(wb.tok12(), ds.train.items, ds.val.items, pc);
    std::vector<int> ytr, yte;
    for (const auto& e : ds.train.items) {
        ytr.push_back(e.cond.class_id);
    }
    for (const auto& e : ds.val.items) {
        yte.push_back(e.cond.class_id);
    }
    const double chance = analysis::chance_probe_accuracy(ytr, yte, wb.tok12().config().code_dim, pc);
    const double gap = acc.front() - acc.back();
    const double expected = 1.0 / data::kNumClasses;
    std::ostringstream d;
    d << "layer accuracy";
    for (double a : acc) {
        d << " " << fmt("%.3f", a);
    }
    d << "; layer1-layer12 " << fmt("%.3f", gap) << "; chance probe " << fmt("%.4f", chance) << " vs "
      << fmt("%.4f", expected);
    return {gap >= 0.10 && std::abs(chance - expected) <= 0.05, d.str()};
}

Outcome loss_balance(Workbench& wb) {
    const auto bl = lm::loss_balance_metrics(wb.baseline().history.eval, 12);
    const auto gr = lm::loss_balance_metrics(wb.group().history.eval, 12);
    const bool ratio = gr.loss_ratio < bl.loss_ratio;
    const bool mean = gr.loss_mean < bl.loss_mean;
    auto layer_ce = [](const lm::TrainHistory& h, int step) {
        std::string s;
        for (const auto& r : h.eval) {
            if (r.step == step) {
                s += fmt(" %.3f", r.ce);
            }
        }
        return s;
    };
    std::ostringstream d;
    d << "collaborative ratio " << fmt("%.3f", gr.loss_ratio) << " mean " << fmt("%.4f", gr.loss_mean)
      << " vs baseline ratio " << fmt("%.3f", bl.loss_ratio) << " mean " << fmt("%.4f", bl.loss_mean)
      << " (ratio " << (ratio ? "lower" : "NOT lower") << ", mean " << (mean ? "lower" : "NOT lower") << ")";
    log("collaborative per-layer CE at step " + std::to_string(gr.step) + ":" + layer_ce(wb.group().history, gr.step));
    log("baseline per-layer CE at step " + std::to_string(bl.step) + ":" + layer_ce(wb.baseline().history, bl.step));
    return {ratio && mean, d.str()};
}

std::vector<nn::Tensor> logits_of(const lm::CodeModel& m, const rvq::CodeGrid& g, int cls, int window) {
    nn::Graph graph(false);
    lm::CodeModel::Batch b{{&g}, {cls}, {0}, window};
    const auto out = m.forward(graph, b);
    std::vector<nn::Tensor> res;
    for (auto v : out.logits) {
        res.push_back(graph.value(v));
    }
    return res;
}

bool rows_equal(const nn::Tensor& a, const nn::Tensor& b, int row) {
    return std::equal(a.row(row), a.row(row) + a.cols(), b.row(row));
}

Outcome causality(Workbench& wb) {
    auto& group = wb.group();
    auto& base = wb.baseline();
    const auto& grids = wb.val_tokens().grids;
    const int window = std::min(grids.front().length, wb.lm_config().max_len);
    int temporal_fail = 0, temporal_checks = 0, leak_fail = 0, leak_checks = 0;
    std::vector<const lm::CodeModel*> models;
    for (const auto& m : group.models) {
        models.push_back(&m);
    }
    models.push_back(&base.models.front());
    for (int item = 0; item < 3; ++item) {
        const auto& g = grids[static_cast<size_t>(item)];
        const int cls = wb.val_tokens().classes[static_cast<size_t>(item)];
        for (const auto* m : models) {
            const auto ref = logits_of(*m, g, cls, window);
            for (int t : {0, window / 2, window - 2}) {
                auto g2 = g;
                for (int j = 0; j < g.layers; ++j) {
                    for (int u = t + 1; u < g.length; ++u) {
                        g2.at(j, u) = (g.at(j, u) + 17) % wb.lm_config().vocab;
                    }
                }
                const auto pert = logits_of(*m, g2, cls, window);
                for (size_t p = 0; p < ref.size(); ++p) {
                    for (int u = 0; u <= t; ++u) {
                        ++temporal_checks;
                        temporal_fail += rows_equal(ref[p], pert[p], u) ? 0 : 1;
                    }
                }
            }
            if (!m->has_decoder()) {
                continue;
            }
            for (int p = 0; p < m->owned(); ++p) {
                for (int t : {1, window / 3, window - 1}) {
                    auto g2 = g;
                    for (int j = m->owned_layer(p); j < g.layers; ++j) {
                        g2.at(j, t) = (g.at(j, t) + 29) % wb.lm_config().vocab;
                    }
                    const auto pert = logits_of(*m, g2, cls, window);
                    ++leak_checks;
                    leak_fail += rows_equal(ref[static_cast<size_t>(p)], pert[static_cast<size_t>(p)], t) ? 0 : 1;
                }
            }
        }
    }
    // Isolation: train a copy of one model and compare hashes of the others.
    auto copy = group.models;
    std::vector<uint64_t> before;
    for (const auto& m : copy) {
        before.push_back(lm::parameter_hash(m.params()));
    }
    lm::TrainOptions o;
    o.steps = 3;
    o.eval_every = 0;
    o.window = 32;
    lm::train_model(copy[2], wb.train_tokens(), lm::TokenSet{}, o);
    int isolation_fail = 0;
    for (size_t k = 0; k < copy.size(); ++k) {
        const bool same = lm::parameter_hash(copy[k].params()) == before[k];
        isolation_fail += (k == 2) == same ? 1 : 0;
    }
    std::ostringstream d;
    d << "temporal " << temporal_checks - temporal_fail << "/" << temporal_checks << " rows identical; anti-leak "
      << leak_checks - leak_fail << "/" << leak_checks << "; isolation "
      << (isolation_fail == 0 ? "other models bit-identical" : "VIOLATED");
    return {temporal_fail == 0 && leak_fail == 0 && isolation_fail == 0, d.str()};
}

Outcome grpo_math(Workbench&) {
    std::vector<std::string> failed;
    const auto a = rl::group_advantages({1.0, 0.5, 0.0});
    if (!(std::abs(a[0] - 1.224745) <= 1e-6 && std::abs(a[1]) <= 1e-6 && std::abs(a[2] + 1.224745) <= 1e-6)) {
        failed.push_back("advantages");
    }
    if (rl::clipped_surrogate(1.5, 1.0, 0.2, 0.2) != 1.2) {
        failed.push_back("upper clip");
    }
    if (rl::clipped_surrogate(0.5, -1.0, 0.2, 0.2) != -0.8) {
        failed.push_back("lower clip");
    }
    std::vector<rl::Rollout> rs(6);
    const double adv[] = {0.05, -0.2, 0.09999, 0.1, -0.1, 3.0};
    for (size_t i = 0; i < rs.size(); ++i) {
        rs[i].advantage = adv[i];
    }
    const int kept = rl::apply_filter(rs, 0.1);
    bool filter_ok = kept == 4;
    for (size_t i = 0; i < rs.size(); ++i) {
        filter_ok = filter_ok && rs[i].retained == (std::abs(adv[i]) >= 0.1);
    }
    if (!filter_ok) {
        failed.push_back("gamma filter");
    }
    const auto z = rl::group_advantages({0.7, 0.7, 0.7, 0.7});
    if (!std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; })) {
        failed.push_back("constant-reward guard");
    }
    std::string d = "advantages [" + fmt("%.6f", a[0]) + ", " + fmt("%.6f", a[1]) + ", " + fmt("%.6f", a[2]) +
                    "]; clips 1.2 / -0.8; filter kept " + std::to_string(kept) + "/6; constant guard zeros";
    for (const auto& f : failed) {
        d += "; FAILED " + f;
    }
    return {failed.empty(), d};
}

rl::RLConfig rl_config(uint64_t seed, rl::Direction dir) {
    rl::RLConfig c;
    c.outer_steps = 200;
    c.direction = dir;
    c.seed = seed;
    return c;
}

struct RlRuns {
    double before = 0.0;
    std::map<rl::Direction, std::vector<double>> after;
    bool frozen_ok = true;
};

std::vector<int> eval_prompts(Workbench& wb) {
    std::vector<int> p;
    for (const auto& e : wb.dataset().val.items) {
        p.push_back(e.cond.class_id);
    }
    return p;
}

RlRuns& rl_runs(Workbench& wb, bool with_causal) {
    static std::optional<RlRuns> runs;
    if (!runs) {
        runs.emplace();
        const auto& tok = wb.tok12();
        const auto& rm = wb.reward();
        const auto& trained = wb.group().models;
        std::vector<const lm::CodeModel*> ptrs;
        for (const auto& m : trained) {
            ptrs.push_back(&m);
        }
        runs->before = rl::mean_policy_reward(ptrs, tok, rm, eval_prompts(wb), rl_config(0, rl::Direction::anti_causal),
                                              0xe7a1);
        log("held-out reward before alignment " + fmt("%.4f", runs->before));
    }
    std::vector<rl::Direction> dirs = {rl::Direction::anti_causal};
    if (with_causal) {
        dirs.push_back(rl::Direction::causal);
    }
    for (auto dir : dirs) {
        if (runs->after.count(dir)) {
            continue;
        }
        std::vector<int> prompts;
        for (const auto& e : wb.dataset().rl.items) {
            prompts.push_back(e.cond.class_id);
        }
        for (uint64_t seed : {1, 2, 3}) {
            auto models = wb.group().models;
            const auto t0 = Clock::now();
            const auto res = rl::rl_run(models, wb.tok12(), wb.reward(), prompts, rl_config(seed, dir));
            std::vector<const lm::CodeModel*> ptrs;
            for (const auto& m : models) {
                ptrs.push_back(&m);
            }
            const double after =
                rl::mean_policy_reward(ptrs, wb.tok12(), wb.reward(), eval_prompts(wb), rl_config(seed, dir), 0xe7a1);
            runs->after[dir].push_back(after);
            runs->frozen_ok = runs->frozen_ok && res.frozen_hash_before == res.frozen_hash_after;
            double first = 0, last = 0;
            const size_t n = std::min<size_t>(20, res.trace.size());
            for (size_t i = 0; i < n; ++i) {
                first += res.trace[i].mean_reward / static_cast<double>(n);
                last += res.trace[res.trace.size() - 1 - i].mean_reward / static_cast<double>(n);
            }
            log(std::string(rl::direction_name(dir)) + " seed " + std::to_string(seed) + ": held-out " +
                fmt("%.4f", after) + ", training reward first/last 20 steps " + fmt("%.4f", first) + " / " +
                fmt("%.4f", last) + ", " + fmt("%.0f s", seconds_since(t0)));
        }
    }
    return *runs;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

Outcome rl_improvement(Workbench& wb) {
    auto& runs = rl_runs(wb, false);
    const double after = mean_of(runs.after.at(rl::Direction::anti_causal));
    return {after > runs.before && runs.frozen_ok,
            "held-out reward over " + std::to_string(eval_prompts(wb).size()) + " prompts " + fmt("%.4f", runs.before) + " -> " + fmt("%.4f", after) +
                " (mean of 3 seeds); frozen models " + (runs.frozen_ok ? "hash-identical" : "CHANGED")};
}

Outcome rl_direction(Workbench& wb) {
    auto& runs = rl_runs(wb, true);
    const double anti = mean_of(runs.after.at(rl::Direction::anti_causal)) - runs.before;
    const double causal = mean_of(runs.after.at(rl::Direction::causal)) - runs.before;
    return {anti > causal, "gain aligning first model " + fmt("%+.4f", anti) + " vs last model " +
                               fmt("%+.4f", causal) + " (mean of 3 seeds each)"};
}

Outcome sampling_determinism(Workbench& wb) {
    auto& group = wb.group();
    std::vector<const lm::CodeModel*> ptrs;
    for (const auto& m : group.models) {
        ptrs.push_back(&m);
    }
    int checks = 0, fails = 0;
    for (int cls : {0, 7, 14}) {
        sampler::SamplingConfig greedy{0.0, 32, 1, 125, true};
        const auto a = sampler::generate_tokens(ptrs, cls, greedy);
        const auto b = sampler::generate_tokens(ptrs, cls, greedy);
        greedy.kv_cache = false;
        const auto c = sampler::generate_tokens(ptrs, cls, greedy);
        sampler::SamplingConfig stoch{1.0, 32, 77 + static_cast<uint64_t>(cls), 125, true};
        const auto d = sampler::generate_tokens(ptrs, cls, stoch);
        stoch.kv_cache = false;
        const auto e = sampler::generate_tokens(ptrs, cls, stoch);
        checks += 3;
        fails += (a.grid == b.grid ? 0 : 1) + (a.grid == c.grid ? 0 : 1) + (d.grid == e.grid ? 0 : 1);
    }
    return {fails == 0, std::to_string(checks - fails) + "/" + std::to_string(checks) +
                            " comparisons identical (greedy repeat, greedy cache on/off, sampled cache on/off)"};
}

Outcome numerics(Workbench&) {
    double worst = 0.0;
    for (uint64_t s = 0; s < 100; ++s) {
        worst = std::max(worst, siren::testing::check_random_graph(1000 + s).rel_error);
    }
    const auto dir = fs::temp_directory_path() / ("siren-acceptance-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto cfg = lm::LmConfig{};
    nn::Rng rng(3);
    std::vector<nn::Tensor> books;
    for (int j = 0; j < cfg.depth; ++j) {
        books.push_back(nn::normal_tensor<float>({cfg.vocab, cfg.code_dim}, 1.0, rng));
    }
    auto group = lm::make_group(cfg, books);
    for (auto& p : group[0].params()) {
        for (auto& v : p.value.data) {
            v += std::normal_distribution<float>(0.0f, 0.05f)(rng);
        }
    }
    io::Checkpoint ck;
    ck.manifest.kind = "lm-partial";
    ck.arrays = io::store_arrays(group[0].params());
    io::save_checkpoint(ck, (dir / "m.ckpt").string());
    auto fresh = lm::make_group(cfg, books);
    io::load_store(fresh[0].params(), io::load_checkpoint((dir / "m.ckpt").string()));
    bool bit_exact = true;
    for (size_t i = 0; i < fresh[0].params().size(); ++i) {
        const auto& a = fresh[0].params()[static_cast<int>(i)].value.data;
        const auto& b = group[0].params()[static_cast<int>(i)].value.data;
        bit_exact = bit_exact && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
    }
    fs::remove_all(dir);
    return {worst < 1e-4 && bit_exact, "worst finite-difference rel. error " + fmt("%.2e", worst) +
                                            " over 100 graphs; checkpoint round trip " +
                                            (bit_exact ? "bit-exact" : "NOT bit-exact")};
}

Outcome smoke(Workbench&) {
    const auto root = fs::temp_directory_path() / ("siren-smoke-" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string config = std::string(SIREN_SOURCE_DIR) + "/tools/configs/smoke.yaml";
    const auto t0 = Clock::now();
    std::ostringstream out, err;
    auto latest = [&](const std::string& cmd) {
        for (const auto& e : fs::directory_iterator(root)) {
            const auto name = e.path().filename().string();
            if (name.size() > cmd.size() && name.compare(name.size() - cmd.size(), cmd.size(), cmd) == 0) {
                return e.path().string();
            }
        }
        return std::string();
    };
    auto step = [&](std::vector<std::string> args) {
        args.insert(args.end(), {"-c", config, "--run-root", root.string()});
        const int code = cli::run_command(args, out, err);
        if (code != 0) {
            log("smoke step " + args.front() + " failed: " + err.str());
        }
        return code == 0;
    };
    bool ok = step({"gen-data"});
    ok = ok && step({"train-tokenizer", "--from", latest("gen-data")});
    ok = ok && step({"train-lm", "--from", latest("train-tokenizer")});
    ok = ok && step({"rl-align", "--from", latest("train-tokenizer"), "--from", latest("train-lm")});
    ok = ok && step({"sample", "--from", latest("train-tokenizer"), "--from", latest("rl-align")});
    ok = ok && step({"analyze", "--from", latest("train-tokenizer"), "--from", latest("train-lm")});
    const double secs = seconds_since(t0);
    bool wav_ok = false;
    std::string wav_name;
    if (ok) {
        for (const auto& e : fs::directory_iterator(latest("sample"))) {
            if (e.path().extension() == ".wav") {
                const auto w = data::read_wav(e.path().string());
                double energy = 0;
                for (float s : w.samples) {
                    energy += static_cast<double>(s) * s;
                }
                wav_ok = w.sample_rate == 8000 && !w.samples.empty() && energy > 0.0;
                wav_name = e.path().filename().string();
                break;
            }
        }
    }
    fs::remove_all(root);
    return {ok && wav_ok && secs < 900.0, std::string(ok ? "pipeline completed" : "pipeline FAILED") + " in " +
                                              fmt("%.0f s", secs) + "; WAV " +
                                              (wav_ok ? wav_name + " readable, 16-bit PCM, non-silent" : "MISSING")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome(Workbench&)>>> criteria = {
        {"quantizer exactness", quantizer_exactness},
        {"residual telescoping identity", telescoping},
        {"reconstruction improves with depth", depth_trend},
        {"layer features nearly orthogonal", layer_independence},
        {"baseline head gradients conflict", gradient_angles},
        {"semantic content concentrates in shallow layers", semantic_probe},
        {"collaborative group balances layer losses", loss_balance},
        {"causality suite", causality},
        {"group-relative policy optimization math", grpo_math},
        {"alignment raises held-out reward", rl_improvement},
        {"anti-causal alignment beats causal", rl_direction},
        {"sampling determinism and cache equivalence", sampling_determinism},
        {"gradients and checkpoints", numerics},
        {"end-to-end smoke pipeline", smoke},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        selected.insert(std::atoi(argv[i]));
    }
    // Expensive shared artefacts first so the order of lines stays stable.
    Workbench wb;
    int failures = 0;
    std::vector<std::string> lines;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && selected.count(id) == 0) {
            continue;
        }
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second(wb);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        char head[96];
        std::snprintf(head, sizeof head, "%s criterion %2d [%s]", o.pass ? "PASS" : "FAIL", id,
                      criteria[i].first.c_str());
        const std::string line = std::string(head) + " " + o.detail + " (" + fmt("%.0f s", seconds_since(t0)) + ")";
        std::cout << line << std::endl;
        lines.push_back(line);
        failures += o.pass ? 0 : 1;
    }
    std::cout << "---- summary ----" << std::endl;
    for (const auto& l : lines) {
        std::cout << l << std::endl;
    }
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criterion(s) FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
