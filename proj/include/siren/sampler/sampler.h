#pragma once

#include <cstdint>
#include <vector>

#include "siren/data/synth.h"
#include "siren/lm/model.h"
#include "siren/nn/parameter.h"
#include "siren/rvq/tokenizer.h"

namespace siren::sampler {

using lm::CodeModel;
using rvq::CodeGrid;

struct SamplingConfig {
    double temperature = 1.0;  // 0 = greedy
    int top_k = 32;
    uint64_t seed = 1;
    int length = 125;
    bool kv_cache = true;

    void validate(int vocab, int max_len) const;
};

struct GenerationResult {
    CodeGrid grid;
    // log_probs[j][t]: untempered log-probability of the chosen code under
    // the model that produced layer j.
    std::vector<std::vector<double>> log_probs;
    int class_id = 0;
};

// Checks that the models own consecutive layer ranges covering [0, depth)
// in order, and returns depth.
int check_group(const std::vector<const CodeModel*>& models);

// Outer loop over time, inner loop over models, owned layers in ascending
// order, each conditioned on the codes already chosen at that step.
GenerationResult generate_tokens(const std::vector<const CodeModel*>& models, int class_id,
                                 const SamplingConfig& cfg);

// Samples one code from logits. Temperature 0 picks the lowest-index argmax.
int sample_code(std::span<const float> logits, double temperature, int top_k, nn::Rng& rng);

// Teacher-forced log-probabilities of every code of `grid`, [layer][t].
std::vector<std::vector<double>> score_grid(const std::vector<const CodeModel*>& models, const CodeGrid& grid,
                                            int class_id);

data::Waveform detokenize(const CodeGrid& grid, const rvq::Tokenizer& tok);

struct Request {
    int class_id = 0;
    uint64_t seed = 0;
};

struct Generated {
    GenerationResult result;
    data::Waveform wave;
};

// Each item uses its own seed; results do not depend on position in the list.
std::vector<Generated> batch_generate(const std::vector<const CodeModel*>& models, const rvq::Tokenizer& tok,
                                      const std::vector<Request>& requests, const SamplingConfig& cfg);

}  // namespace siren::sampler
