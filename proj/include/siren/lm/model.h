#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "siren/nn/graph.h"
#include "siren/nn/parameter.h"
#include "siren/rvq/tokenizer.h"

namespace siren::lm {

using nn::Graph;
using nn::Tensor;
using nn::Var;
using rvq::CodeGrid;

enum class ConditionMode { independent, residual_prev, accumulated };

const char* mode_name(ConditionMode m);
ConditionMode parse_mode(const std::string& s);

struct LmConfig {
    int depth = 12;            // r
    int codes_per_model = 2;   // m
    int vocab = 64;
    int code_dim = 32;
    // Desk-scale sizes. Reference full-scale sizes: width 1024, 14 backbone
    // layers, 2 decoder layers, 12 heads.
    int width = 64;
    int backbone_layers = 2;
    int heads = 4;
    int decoder_layers = 1;
    int mlp_ratio = 4;
    int max_len = 128;
    int num_classes = 15;
    ConditionMode mode = ConditionMode::accumulated;
    uint64_t init_seed = 11;

    int models() const { return depth / codes_per_model; }
    void validate() const;
};

// One transformer of the group: backbone over the time axis plus, for the
// collaborative models, a small residual decoder over the owned layers of
// the current step. The shared baseline is the decoder-free variant that
// owns all layers.
class CodeModel {
public:
    CodeModel() = default;
    CodeModel(const LmConfig& cfg, int first_layer, int owned, bool use_decoder, std::vector<Tensor> codebooks);

    static CodeModel collaborative(const LmConfig& cfg, int k, std::vector<Tensor> codebooks);
    static CodeModel baseline(const LmConfig& cfg, std::vector<Tensor> codebooks);

    const LmConfig& config() const { return cfg_; }
    int first_layer() const { return first_; }
    int owned() const { return owned_; }
    bool has_decoder() const { return use_decoder_; }
    int owned_layer(int p) const { return first_ + p; }

    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    const std::vector<Tensor>& codebooks() const { return books_; }

    // Pre-projection input for each step: row t is sum_j Z^j[q_t^j].
    Tensor summed_embeddings(const CodeGrid& grid) const;
    void step_embedding(const CodeGrid& grid, int t, float* out) const;

    // Pre-projection conditioning vectors (sos + folded code sums) for owned
    // positions 0..count-1 at one time step. `same_step` holds codes of layers
    // 0..first+count-2 at that step.
    Tensor conditioning_slots(std::span<const int> same_step, int count) const;

    struct Batch {
        std::vector<const CodeGrid*> grids;
        std::vector<int> classes;
        std::vector<int> starts;
        int window = 0;
    };

    struct Output {
        Var hidden;                // [B*W, width]
        std::vector<Var> logits;   // per owned position, [B*W, vocab]
        std::vector<std::vector<int>> targets;
    };

    // Teacher-forced forward over windows [start, start+window) of each grid.
    Output forward(Graph& g, const Batch& batch);
    Output forward(Graph& g, const Batch& batch) const;

    // Incremental inference state for one sequence.
    struct Cache {
        std::vector<Tensor> k;
        std::vector<Tensor> v;
        std::vector<Tensor> cross_k;
        std::vector<Tensor> cross_v;
        int length = 0;
        int class_id = 0;
    };

    Cache start_cache(int class_id) const;
    // Appends step t = cache.length. prev_sum is the pre-projection input for
    // the previous step (ignored at t = 0). Returns h_t.
    std::vector<float> step(Cache& cache, std::span<const float> prev_sum) const;
    // Same quantity recomputed from scratch over the whole prefix.
    std::vector<float> hidden_at(const CodeGrid& grid, int t, int class_id) const;

    // Logits for owned position p given h_t and the codes already chosen at
    // this step for layers < first + p.
    std::vector<float> position_logits(std::span<const float> hidden, std::span<const int> same_step, int p) const;

private:
    LmConfig cfg_;
    int first_ = 0;
    int owned_ = 0;
    bool use_decoder_ = false;
    nn::ParameterStore params_;
    std::vector<Tensor> books_;

    void init_params();
    void required_codes(std::span<const int> same_step, int count) const;
    template <typename Self>
    static Output forward_impl(Self& self, Graph& g, const Batch& batch);
};

uint64_t parameter_hash(const nn::ParameterStore& ps);

}  // namespace siren::lm
