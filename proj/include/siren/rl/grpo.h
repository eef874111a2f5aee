#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "siren/lm/model.h"
#include "siren/nn/optim.h"
#include "siren/rl/reward.h"
#include "siren/rvq/tokenizer.h"
#include "siren/sampler/sampler.h"

namespace siren::rl {

using lm::CodeModel;
using rvq::CodeGrid;
using nn::Var;

enum class Direction { anti_causal, causal };

const char* direction_name(Direction d);
Direction parse_direction(const std::string& s);

struct RLConfig {
    int group_size = 8;     // G
    double gamma = 0.1;     // advantage threshold
    double eps_down = 0.2;
    double eps_up = 0.28;
    int inner_iters = 2;    // mu
    double lr = 1e-5;
    int length = 125;       // rollout length in steps
    int outer_steps = 200;
    int prompts_per_step = 1;
    double temperature = 1.0;
    int top_k = 32;
    Direction direction = Direction::anti_causal;
    uint64_t seed = 3;

    void validate() const;
};

struct Rollout {
    int class_id = 0;
    CodeGrid grid;  // all r layers: action layers from the policy, the rest from frozen models
    std::vector<std::vector<double>> old_log_probs;  // [owned position][t]
    double reward = 0.0;
    double advantage = 0.0;
    bool retained = false;
};

// Population-std standardisation; all zeros when std < 1e-8. Throws for
// fewer than two rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards);

// min(ratio * adv, clip(ratio, 1 - eps_down, 1 + eps_up) * adv)
double clipped_surrogate(double ratio, double adv, double eps_down, double eps_up);

// Marks rollouts with |A| >= gamma as retained; returns how many.
int apply_filter(std::vector<Rollout>& rollouts, double gamma);

// Concatenates action and proxy layers (in layer order) and scores the
// detokenized waveform against the condition.
double compute_reward(const CodeGrid& grid, int class_id, const rvq::Tokenizer& tok, const RewardModel& rm);
double compute_reward(const CodeGrid& action, const CodeGrid& proxy, int class_id, const rvq::Tokenizer& tok,
                      const RewardModel& rm);

// Index of the aligned model for a direction and group size.
int aligned_index(Direction d, int models);

// G rollouts for one condition. `models` is the full group in layer order;
// the model at `policy_index` is the policy being aligned.
std::vector<Rollout> rollout_group(const std::vector<const CodeModel*>& models, int policy_index,
                                   const rvq::Tokenizer& tok, const RewardModel& rm, int class_id,
                                   const RLConfig& cfg, uint64_t seed);

// Current-policy log-probs of each rollout's action layers, [rollout][position][t].
std::vector<std::vector<std::vector<double>>> policy_log_probs(const CodeModel& policy,
                                                               const std::vector<Rollout>& rollouts);

struct UpdateStats {
    std::vector<double> objective;  // surrogate value at each inner iteration (before its step)
    int retained = 0;
    bool skipped = false;
};

// mu gradient-ascent iterations on the clipped surrogate over retained
// rollouts. Ratios are taken against the rollouts' stored log-probs.
UpdateStats grpo_update(CodeModel& policy, const std::vector<Rollout>& rollouts, const RLConfig& cfg,
                        nn::AdamWState& opt);

struct RewardTrace {
    int step = 0;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double retained_fraction = 0.0;
};

struct RLResult {
    std::vector<RewardTrace> trace;
    std::vector<uint64_t> frozen_hash_before;
    std::vector<uint64_t> frozen_hash_after;
    int skipped_updates = 0;
};

using TraceSink = std::function<void(const RewardTrace&)>;

// Outer loop: snapshot, sample prompts from `prompts`, roll out, score,
// standardise, filter, update. Only models[aligned_index(...)] changes.
RLResult rl_run(std::vector<CodeModel>& models, const rvq::Tokenizer& tok, const RewardModel& rm,
                const std::vector<int>& prompts, const RLConfig& cfg, const TraceSink& sink = {});

// Mean reward of sampled generations; request i uses class prompts[i] and
// seed derive_seed(seed, i).
double mean_policy_reward(const std::vector<const CodeModel*>& models, const rvq::Tokenizer& tok,
                          const RewardModel& rm, const std::vector<int>& prompts, const RLConfig& cfg,
                          uint64_t seed);

}  // namespace siren::rl
