#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "siren/data/synth.h"
#include "siren/nn/optim.h"
#include "siren/nn/parameter.h"
#include "siren/nn/tensor.h"

namespace siren::rvq {

using nn::Tensor;

struct TokenizerConfig {
    int vocab = 64;
    int code_dim = 32;
    int depth = 12;
    int channels = 64;
    std::vector<int> strides = {4, 4, 2, 2};
    float lr = 3e-3f;
    float commitment = 0.25f;
    float ema_decay = 0.99f;
    int batch = 8;
    int crop = 2048;
    int steps = 2000;
    int reseed_every = 100;
    uint64_t seed = 7;

    int hop() const;
};

// Width of encoder stage i; shallow high-rate stages are narrower.
int stage_channels(const TokenizerConfig& cfg, int stage);

enum class Provenance { encoded, quantized_partial_sum };

struct LatentFeature {
    Tensor values;  // [l, code_dim]
    Provenance provenance = Provenance::encoded;

    int length() const { return values.rows(); }
    int dim() const { return values.cols(); }
};

struct Codebook {
    int layer = 0;
    Tensor table;  // [vocab, code_dim]
    std::vector<int64_t> usage;

    int vocab() const { return table.rows(); }
    int dim() const { return table.cols(); }
};

// Row-major r x l grid: codes[j * length + t] is layer j at step t.
struct CodeGrid {
    int layers = 0;
    int length = 0;
    std::vector<int> codes;

    CodeGrid() = default;
    CodeGrid(int r, int l) : layers(r), length(l), codes(static_cast<size_t>(r) * l, 0) {}

    int& at(int j, int t) { return codes[static_cast<size_t>(j) * length + t]; }
    int at(int j, int t) const { return codes[static_cast<size_t>(j) * length + t]; }
    std::span<const int> layer(int j) const {
        return {codes.data() + static_cast<size_t>(j) * length, static_cast<size_t>(length)};
    }
    bool operator==(const CodeGrid&) const = default;
};

struct LayerQuant {
    int code = 0;
    std::vector<float> embedding;
    std::vector<double> next_residual;
};

// Nearest code by Euclidean distance; ties resolve to the lowest index.
LayerQuant quantize_layer(std::span<const double> residual, const Codebook& book);
LayerQuant quantize_layer(std::span<const float> residual, const Codebook& book);

std::vector<float> lookup(const Codebook& book, int code);

struct RvqResult {
    CodeGrid grid;
    Tensor quantized_sum;            // [l, code_dim], sum of the selected embeddings
    std::vector<double> residual;    // final residual, [l * code_dim], carried in double
};

// Residual recursion runs in double so that feature == sum + residual holds
// exactly for ordinary magnitudes.
RvqResult rvq_tokenize(const LatentFeature& feature, std::span<const Codebook> books, int r);

// Sum over layers of lookup(Z^j, q^j), accumulated in double in layer order.
Tensor lookup_sum(const CodeGrid& grid, std::span<const Codebook> books);

// Per-layer squared residual norms: row j holds ||f_t^j||^2 for every t, j = 0..r.
struct ResidualEnergy {
    std::vector<std::vector<double>> per_step;
    std::vector<double> mean;
    std::vector<double> median;
};

class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(const TokenizerConfig& cfg);

    const TokenizerConfig& config() const { return cfg_; }
    int hop() const { return cfg_.hop(); }
    int depth() const { return cfg_.depth; }
    int64_t trained_steps() const { return trained_steps_; }
    bool trained() const { return trained_steps_ > 0; }

    LatentFeature encode(const data::Waveform& w) const;
    data::Waveform decode(const Tensor& quantized_sum, int sample_rate = 8000) const;
    RvqResult tokenize(const data::Waveform& w, int r = -1) const;
    CodeGrid codes(const data::Waveform& w, int r = -1) const { return tokenize(w, r).grid; }
    data::Waveform reconstruct(const data::Waveform& w, int r = -1) const;
    data::Waveform detokenize(const CodeGrid& grid, int sample_rate = 8000) const;

    std::span<const Codebook> codebooks() const { return books_; }
    std::vector<Codebook>& mutable_codebooks() { return books_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    // All persistent state as named float arrays (parameters, codebooks, EMA stats).
    std::vector<std::pair<std::string, Tensor>> state() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& arrays, int64_t trained_steps);

    struct StepStats {
        double loss = 0;
        double recon = 0;
        double commit = 0;
    };

    // One optimisation step on a batch of equal-length crops.
    StepStats train_step(const std::vector<std::vector<float>>& crops, nn::Rng& rng);
    ResidualEnergy residual_energy(const data::Waveform& w) const;

private:
    TokenizerConfig cfg_;
    nn::ParameterStore params_;
    std::vector<Codebook> books_;
    std::vector<Tensor> ema_count_;
    std::vector<Tensor> ema_sum_;
    std::vector<std::vector<int64_t>> window_usage_;
    nn::AdamWState opt_;
    bool books_initialised_ = false;
    int64_t trained_steps_ = 0;

    void init_params();
    void init_codebooks(const Tensor& features, nn::Rng& rng);
};

struct TrainLog {
    int step = 0;
    double loss = 0;
    double recon = 0;
};

using TokenizerProgress = std::function<void(const TrainLog&)>;

Tokenizer train_tokenizer(const std::vector<data::Example>& clips, const TokenizerConfig& cfg,
                          const TokenizerProgress& progress = {});
// Continues training an existing tokenizer for `steps` more steps.
void continue_training(Tokenizer& tok, const std::vector<data::Example>& clips, int steps,
                       const TokenizerProgress& progress = {});

ResidualEnergy layer_residual_energy(const LatentFeature& feature, const Tokenizer& tok);

double reconstruction_mse(const Tokenizer& tok, const std::vector<data::Example>& clips, int r = -1);

// Fraction of each layer's codes used at least once on the given clips.
std::vector<double> codebook_usage(const Tokenizer& tok, const std::vector<data::Example>& clips);

}  // namespace siren::rvq
