#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "siren/data/synth.h"
#include "siren/lm/model.h"
#include "siren/nn/optim.h"
#include "siren/rvq/tokenizer.h"

namespace siren::lm {

// Tokenized clips with their class ids.
struct TokenSet {
    std::vector<CodeGrid> grids;
    std::vector<int> classes;

    size_t size() const { return grids.size(); }
};

TokenSet tokenize_split(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips, int depth);

// Frozen copies of the first `depth` codebook tables.
std::vector<Tensor> codebook_tables(const rvq::Tokenizer& tok, int depth);

struct TrainOptions {
    int steps = 1500;
    int batch = 8;
    int window = 0;  // 0 trains on whole sequences
    double lr = 1e-3;
    double min_lr_frac = 0.1;
    int warmup = 50;
    double clip = 1.0;
    double weight_decay = 0.0;
    uint64_t seed = 5;
    int eval_every = 100;  // 0 disables periodic evaluation
    int eval_items = 64;
    int capture_every = 0;  // baseline per-head gradient capture period, 0 = off
};

struct LossRecord {
    int step = 0;
    int layer = 0;  // zero-based RVQ layer
    double ce = 0.0;
};

struct TrainHistory {
    std::vector<LossRecord> train;  // every step, training batch
    std::vector<LossRecord> eval;   // every eval_every steps and at the end
};

// Called with (step, one flattened gradient per head).
using GradientHook = std::function<void(int, const std::vector<std::vector<float>>&)>;
using StepCallback = std::function<void(int step, double loss)>;

struct TrainHooks {
    StepCallback on_step;
    GradientHook on_gradients;
};

// Teacher-forced training of one model. Throws std::runtime_error on a
// non-finite loss.
TrainHistory train_model(CodeModel& model, const TokenSet& train, const TokenSet& eval, const TrainOptions& opts,
                         const TrainHooks& hooks = {});

// Trains every model of a collaborative group independently. Records use
// global layer indices.
TrainHistory train_group(std::vector<CodeModel>& models, const TokenSet& train, const TokenSet& eval,
                         const TrainOptions& opts, const TrainHooks& hooks = {});

std::vector<CodeModel> make_group(const LmConfig& cfg, const std::vector<Tensor>& codebooks);

// Mean teacher-forced CE per owned layer over the first `max_items` items.
std::vector<double> evaluate(const CodeModel& model, const TokenSet& data, int max_items);

// Per-head gradient of the last shared linear layer (output projection of the
// last backbone block), averaged along its output dimension: one vector of
// input-neuron gradients per head.
std::vector<std::vector<float>> head_gradients(CodeModel& model, const CodeModel::Batch& batch);

struct LossBalance {
    double loss_mean = 0.0;
    double loss_ratio = 0.0;
    int step = 0;
};

// loss_mean: minimum over checkpoints of the mean CE across layers.
// loss_ratio: CE of the deepest layer over CE of layer 0 at that checkpoint.
LossBalance loss_balance_metrics(const std::vector<LossRecord>& records, int depth);

}  // namespace siren::lm
