#include "siren/rl/grpo.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "siren/nn/ops.h"

namespace siren::rl {

const char* direction_name(Direction d) { return d == Direction::anti_causal ? "anti_causal" : "causal"; }

Direction parse_direction(const std::string& s) {
    if (s == "anti_causal") return Direction::anti_causal;
    if (s == "causal") return Direction::causal;
    throw std::invalid_argument("unknown alignment direction '" + s + "' (expected anti_causal or causal)");
}

void RLConfig::validate() const {
    if (group_size < 2) {
        throw std::invalid_argument("rl group size G must be >= 2");
    }
    if (!(eps_down > 0.0) || !(eps_up > 0.0)) {
        throw std::invalid_argument("rl clip bounds must be > 0");
    }
    if (!(gamma >= 0.0)) {
        throw std::invalid_argument("rl advantage threshold must be >= 0");
    }
    if (inner_iters < 1) {
        throw std::invalid_argument("rl inner iterations must be >= 1");
    }
    if (length < 1 || outer_steps < 0 || prompts_per_step < 1) {
        throw std::invalid_argument("rl length, outer steps and prompts per step must be positive");
    }
    if (!(lr > 0.0)) {
        throw std::invalid_argument("rl learning rate must be > 0");
    }
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) {
        throw std::invalid_argument("group_advantages needs at least 2 rewards, got " +
                                    std::to_string(rewards.size()));
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= n;
    double var = 0.0;
    for (double r : rewards) {
        var += (r - mean) * (r - mean);
    }
    const double sd = std::sqrt(var / n);
    std::vector<double> adv(rewards.size(), 0.0);
    if (sd < 1e-8) {
        return adv;
    }
    for (size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - mean) / sd;
    }
    return adv;
}

double clipped_surrogate(double ratio, double adv, double eps_down, double eps_up) {
    const double clipped = std::clamp(ratio, 1.0 - eps_down, 1.0 + eps_up);
    return std::min(ratio * adv, clipped * adv);
}

int apply_filter(std::vector<Rollout>& rollouts, double gamma) {
    int kept = 0;
    for (auto& r : rollouts) {
        r.retained = std::abs(r.advantage) >= gamma;
        kept += r.retained ? 1 : 0;
    }
    return kept;
}

double compute_reward(const CodeGrid& grid, int class_id, const rvq::Tokenizer& tok, const RewardModel& rm) {
    return rm.score(sampler::detokenize(grid, tok), class_id);
}

double compute_reward(const CodeGrid& action, const CodeGrid& proxy, int class_id, const rvq::Tokenizer& tok,
                      const RewardModel& rm) {
    if (action.length != proxy.length) {
        throw std::invalid_argument("action and proxy grids differ in length");
    }
    CodeGrid full;
    full.layers = action.layers + proxy.layers;
    full.length = action.length;
    full.codes = action.codes;
    full.codes.insert(full.codes.end(), proxy.codes.begin(), proxy.codes.end());
    return compute_reward(full, class_id, tok, rm);
}

int aligned_index(Direction d, int models) {
    if (models < 1) {
        throw std::invalid_argument("no models to align");
    }
    return d == Direction::anti_causal ? 0 : models - 1;
}

std::vector<Rollout> rollout_group(const std::vector<const CodeModel*>& models, int policy_index,
                                   const rvq::Tokenizer& tok, const RewardModel& rm, int class_id,
                                   const RLConfig& cfg, uint64_t seed) {
    cfg.validate();
    sampler::check_group(models);
    if (policy_index < 0 || policy_index >= static_cast<int>(models.size())) {
        throw std::out_of_range("policy index outside the model group");
    }
    const CodeModel& policy = *models[static_cast<size_t>(policy_index)];
    std::vector<Rollout> out;
    for (int i = 0; i < cfg.group_size; ++i) {
        sampler::SamplingConfig sc;
        sc.temperature = cfg.temperature;
        sc.top_k = cfg.top_k;
        sc.length = cfg.length;
        sc.seed = nn::derive_seed(seed, static_cast<uint64_t>(i));
        auto res = sampler::generate_tokens(models, class_id, sc);
        Rollout r;
        r.class_id = class_id;
        for (int p = 0; p < policy.owned(); ++p) {
            r.old_log_probs.push_back(res.log_probs[static_cast<size_t>(policy.owned_layer(p))]);
        }
        r.grid = std::move(res.grid);
        r.reward = compute_reward(r.grid, class_id, tok, rm);
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

struct SurrogateGraph {
    nn::Var objective;
    std::vector<nn::Var> picked;  // per owned position, [N*l, 1]
};

CodeModel::Batch rollout_batch(const std::vector<const Rollout*>& rs) {
    CodeModel::Batch b;
    b.window = rs.front()->grid.length;
    for (const auto* r : rs) {
        if (r->grid.length != b.window) {
            throw std::invalid_argument("rollouts differ in length");
        }
        b.grids.push_back(&r->grid);
        b.classes.push_back(r->class_id);
        b.starts.push_back(0);
    }
    return b;
}

template <typename Model>
SurrogateGraph build_surrogate(nn::Graph& g, Model& policy, const std::vector<const Rollout*>& rs,
                               const RLConfig& cfg) {
    auto fw = policy.forward(g, rollout_batch(rs));
    const int len = rs.front()->grid.length;
    const int rows = static_cast<int>(rs.size()) * len;
    nn::Tensor adv({rows, 1});
    for (size_t i = 0; i < rs.size(); ++i) {
        for (int t = 0; t < len; ++t) {
            adv.data[i * static_cast<size_t>(len) + static_cast<size_t>(t)] = static_cast<float>(rs[i]->advantage);
        }
    }
    Var a = g.constant(std::move(adv));
    SurrogateGraph sg;
    std::vector<Var> terms;
    for (int p = 0; p < policy.owned(); ++p) {
        nn::Tensor old({rows, 1});
        for (size_t i = 0; i < rs.size(); ++i) {
            const auto& lp = rs[i]->old_log_probs.at(static_cast<size_t>(p));
            if (static_cast<int>(lp.size()) != len) {
                throw std::invalid_argument("rollout log-probs do not match its length");
            }
            for (int t = 0; t < len; ++t) {
                old.data[i * static_cast<size_t>(len) + static_cast<size_t>(t)] = static_cast<float>(lp[static_cast<size_t>(t)]);
            }
        }
        Var lsm = nn::log_softmax(g, fw.logits[static_cast<size_t>(p)]);
        Var picked = nn::pick(g, lsm, fw.targets[static_cast<size_t>(p)]);
        sg.picked.push_back(picked);
        Var ratio = nn::exp(g, nn::sub(g, picked, g.constant(std::move(old))));
        Var unclipped = nn::mul(g, ratio, a);
        Var clipped = nn::mul(g, nn::clamp(g, ratio, static_cast<float>(1.0 - cfg.eps_down),
                                           static_cast<float>(1.0 + cfg.eps_up)),
                              a);
        terms.push_back(nn::minimum(g, unclipped, clipped));
    }
    sg.objective = nn::mean(g, terms.size() == 1 ? terms.front() : nn::concat_rows(g, terms));
    return sg;
}

}  // namespace

std::vector<std::vector<std::vector<double>>> policy_log_probs(const CodeModel& policy,
                                                               const std::vector<Rollout>& rollouts) {
    std::vector<std::vector<std::vector<double>>> out;
    if (rollouts.empty()) {
        return out;
    }
    std::vector<const Rollout*> rs;
    for (const auto& r : rollouts) {
        rs.push_back(&r);
    }
    nn::Graph g(false);
    RLConfig cfg;
    auto sg = build_surrogate(g, policy, rs, cfg);
    const int len = rollouts.front().grid.length;
    out.assign(rollouts.size(), std::vector<std::vector<double>>(static_cast<size_t>(policy.owned()),
                                                                  std::vector<double>(static_cast<size_t>(len))));
    for (int p = 0; p < policy.owned(); ++p) {
        const auto& v = g.value(sg.picked[static_cast<size_t>(p)]);
        for (size_t i = 0; i < rollouts.size(); ++i) {
            for (int t = 0; t < len; ++t) {
                out[i][static_cast<size_t>(p)][static_cast<size_t>(t)] = v.data[i * static_cast<size_t>(len) + static_cast<size_t>(t)];
            }
        }
    }
    return out;
}

UpdateStats grpo_update(CodeModel& policy, const std::vector<Rollout>& rollouts, const RLConfig& cfg,
                        nn::AdamWState& opt) {
    cfg.validate();
    UpdateStats st;
    std::vector<const Rollout*> kept;
    for (const auto& r : rollouts) {
        if (r.retained) {
            kept.push_back(&r);
        }
    }
    st.retained = static_cast<int>(kept.size());
    if (kept.empty()) {
        st.skipped = true;
        return st;
    }
    auto params = policy.params().pointers();
    nn::AdamWConfig acfg;
    acfg.lr = static_cast<float>(cfg.lr);
    for (int it = 0; it < cfg.inner_iters; ++it) {
        policy.params().zero_grad();
        nn::Graph g;
        auto sg = build_surrogate(g, policy, kept, cfg);
        const double obj = g.value(sg.objective).data[0];
        if (!std::isfinite(obj)) {
            throw std::runtime_error("rl surrogate is not finite at inner iteration " + std::to_string(it));
        }
        st.objective.push_back(obj);
        g.backward(nn::scale(g, sg.objective, -1.0f));
        nn::clip_grad_norm(params, 1.0);
        nn::adamw_step(params, opt, acfg);
    }
    return st;
}

RLResult rl_run(std::vector<CodeModel>& models, const rvq::Tokenizer& tok, const RewardModel& rm,
                const std::vector<int>& prompts, const RLConfig& cfg, const TraceSink& sink) {
    cfg.validate();
    if (prompts.empty()) {
        throw std::invalid_argument("rl_run: no prompts");
    }
    const int a = aligned_index(cfg.direction, static_cast<int>(models.size()));
    std::vector<const CodeModel*> ptrs;
    for (const auto& m : models) {
        ptrs.push_back(&m);
    }
    sampler::check_group(ptrs);
    RLResult res;
    for (size_t k = 0; k < models.size(); ++k) {
        if (static_cast<int>(k) != a) {
            res.frozen_hash_before.push_back(lm::parameter_hash(models[k].params()));
        }
    }
    nn::AdamWState opt;
    nn::Rng rng(nn::derive_seed(cfg.seed, 0x5052));
    std::uniform_int_distribution<size_t> pick(0, prompts.size() - 1);
    for (int step = 0; step < cfg.outer_steps; ++step) {
        std::vector<Rollout> batch;
        for (int b = 0; b < cfg.prompts_per_step; ++b) {
            const int cls = prompts[pick(rng)];
            auto group = rollout_group(ptrs, a, tok, rm, cls, cfg,
                                       nn::derive_seed(cfg.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b) + 1));
            std::vector<double> rewards;
            for (const auto& r : group) {
                rewards.push_back(r.reward);
            }
            const auto adv = group_advantages(rewards);
            for (size_t i = 0; i < group.size(); ++i) {
                group[i].advantage = adv[i];
            }
            apply_filter(group, cfg.gamma);
            for (auto& r : group) {
                batch.push_back(std::move(r));
            }
        }
        RewardTrace tr;
        tr.step = step;
        double s = 0, ss = 0;
        int kept = 0;
        for (const auto& r : batch) {
            s += r.reward;
            kept += r.retained ? 1 : 0;
        }
        tr.mean_reward = s / static_cast<double>(batch.size());
        for (const auto& r : batch) {
            ss += (r.reward - tr.mean_reward) * (r.reward - tr.mean_reward);
        }
        tr.std_reward = std::sqrt(ss / static_cast<double>(batch.size()));
        tr.retained_fraction = static_cast<double>(kept) / static_cast<double>(batch.size());
        const auto st = grpo_update(models[static_cast<size_t>(a)], batch, cfg, opt);
        res.skipped_updates += st.skipped ? 1 : 0;
        res.trace.push_back(tr);
        if (sink) {
            sink(tr);
        }
    }
    for (size_t k = 0; k < models.size(); ++k) {
        if (static_cast<int>(k) != a) {
            res.frozen_hash_after.push_back(lm::parameter_hash(models[k].params()));
        }
    }
    return res;
}

double mean_policy_reward(const std::vector<const CodeModel*>& models, const rvq::Tokenizer& tok,
                          const RewardModel& rm, const std::vector<int>& prompts, const RLConfig& cfg,
                          uint64_t seed) {
    if (prompts.empty()) {
        throw std::invalid_argument("mean_policy_reward: no prompts");
    }
    double total = 0.0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        sampler::SamplingConfig sc;
        sc.temperature = cfg.temperature;
        sc.top_k = cfg.top_k;
        sc.length = cfg.length;
        sc.seed = nn::derive_seed(seed, static_cast<uint64_t>(i));
        auto res = sampler::generate_tokens(models, prompts[i], sc);
        total += compute_reward(res.grid, prompts[i], tok, rm);
    }
    return total / static_cast<double>(prompts.size());
}

}  // namespace siren::rl
