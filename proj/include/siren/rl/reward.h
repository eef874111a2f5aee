#pragma once

#include <cstdint>
#include <vector>

#include "siren/data/synth.h"
#include "siren/nn/parameter.h"

namespace siren::rl {

struct RewardConfig {
    int hidden = 64;
    int embed = 32;
    int steps = 1500;
    int batch = 32;
    float lr = 3e-3f;
    float logit_scale = 10.0f;
    uint64_t seed = 17;
    double min_accuracy = 0.9;
};

// Audio and condition embedders for the proxy reward. Audio path: mean log
// power spectrum, standardised, then a two-layer MLP; condition path: a
// class table. Both outputs are centred and scaled to unit length so the
// reward is a cosine in [-1, 1].
class RewardModel {
public:
    RewardModel() = default;
    explicit RewardModel(const RewardConfig& cfg);

    const RewardConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    static std::vector<float> spectrum(const data::Waveform& w);
    std::vector<float> audio_embedding(const data::Waveform& w) const;
    std::vector<float> audio_embedding_from_spectrum(const std::vector<float>& spec) const;
    std::vector<float> text_embedding(int class_id) const;
    double score(const data::Waveform& w, int class_id) const;
    // Nearest class embedding by cosine.
    int retrieve(const data::Waveform& w) const;

private:
    RewardConfig cfg_;
    nn::ParameterStore params_;
};

double cosine(const std::vector<float>& a, const std::vector<float>& b);

// Trains the probe contrastively against the class table. Throws
// std::runtime_error when held-out retrieval accuracy falls below
// cfg.min_accuracy.
RewardModel train_reward_probe(const std::vector<data::Example>& train, const std::vector<data::Example>& heldout,
                               const RewardConfig& cfg, double* heldout_accuracy = nullptr);

double retrieval_accuracy(const RewardModel& rm, const std::vector<data::Example>& clips);

}  // namespace siren::rl
