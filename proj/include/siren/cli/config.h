#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "siren/analysis/analysis.h"
#include "siren/data/synth.h"
#include "siren/lm/model.h"
#include "siren/lm/train.h"
#include "siren/rl/grpo.h"
#include "siren/rl/reward.h"
#include "siren/rvq/tokenizer.h"
#include "siren/sampler/sampler.h"

namespace siren::cli {

// Invalid configuration. `line` is 1-based, 0 when not tied to a line.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& msg);
    int line() const { return line_; }

private:
    int line_;
};

struct LmSection {
    lm::LmConfig model;
    lm::TrainOptions train;
    int eval_clips = 100;
};

struct RlSection {
    rl::RLConfig grpo;
    rl::RewardConfig reward;
    int eval_prompts = 30;
};

struct AnalysisSection {
    analysis::ProbeConfig probe;
    int cosine_clips = 50;
    int probe_train_clips = 600;
    int probe_heldout_clips = 300;
    int gradient_batch = 8;
};

struct IoSection {
    std::string run_root = "runs";
    std::string tokenizer_checkpoint;  // empty: look in --from run directories
    std::string lm_checkpoint;
    std::string baseline_checkpoint;
    std::string reward_checkpoint;
    int threads = 1;
    int samples = 4;
    int sample_class = -1;  // -1 cycles through classes
    int checkpoint_every = 250;
};

struct RunConfig {
    data::DatasetConfig data;
    rvq::TokenizerConfig tokenizer;
    LmSection lm;
    sampler::SamplingConfig sampling;
    RlSection rl;
    AnalysisSection analysis;
    IoSection io;

    // Cross-section consistency: r, m and K, vocabulary and code widths.
    void validate(const std::string& source = "config") const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "config");
RunConfig load_run_config(const std::string& path);
// Canonical YAML with every field, in declaration order.
std::string dump_run_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

}  // namespace siren::cli
