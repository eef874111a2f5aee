#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siren/data/synth.h"
#include "siren/lm/model.h"
#include "siren/lm/train.h"
#include "siren/rvq/tokenizer.h"

#include <json.hpp>

namespace siren::analysis {

// a.b / sqrt(|a|^2 |b|^2) in double; a vector against itself gives exactly 1.
// Zero vectors give nullopt.
std::optional<double> cosine(std::span<const float> a, std::span<const float> b);
// Angle in degrees; throws on a zero vector.
double angle_degrees(std::span<const float> a, std::span<const float> b);

struct Histogram {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<int64_t> counts;

    Histogram() = default;
    Histogram(double lo_, double hi_, int bins) : lo(lo_), hi(hi_), counts(static_cast<size_t>(bins), 0) {}
    void add(double v);
    int64_t total() const;
};

enum class CosineMode { per_step, pooled };
const char* cosine_mode_name(CosineMode m);

struct IntervalStats {
    int64_t count = 0;
    double mean = 0.0;
    double mean_abs = 0.0;
    Histogram hist{-1.0, 1.0, 40};
};

struct CosineStats {
    CosineMode mode = CosineMode::per_step;
    std::map<int, IntervalStats> by_interval;  // key |j1 - j2|, 0 = a layer with itself
    double mean_abs_distinct = 0.0;
    double self_cosine_min = 0.0;
    double self_cosine_max = 0.0;
};

// Quantized per-layer features Z^j[q^j_t] of one clip, [layer][t][dim].
std::vector<std::vector<std::vector<float>>> layer_features(const rvq::Tokenizer& tok, const data::Waveform& w,
                                                            int depth);

CosineStats layer_cosine_stats(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips, CosineMode mode,
                               int depth = -1);

struct AngleStats {
    std::vector<double> angles;  // one per unordered head pair
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    Histogram hist{0.0, 180.0, 36};
};

AngleStats angle_stats(const std::vector<std::vector<float>>& vectors);

// Per-head gradient of the last shared linear layer (the last backbone
// block's output projection), averaged along its output dimension.
std::vector<std::vector<float>> head_input_gradients(lm::CodeModel& baseline, const lm::CodeModel::Batch& batch);
AngleStats gradient_angle_stats(lm::CodeModel& baseline, const lm::CodeModel::Batch& batch);

struct ProbeConfig {
    int hidden = 64;
    int steps = 800;
    int batch = 64;
    float lr = 3e-3f;
    uint64_t seed = 23;
};

// Two dense layers with a GELU in between, trained on standardised inputs;
// returns held-out top-1 accuracy.
double probe_accuracy(const nn::Tensor& train_x, const std::vector<int>& train_y, const nn::Tensor& test_x,
                      const std::vector<int>& test_y, const ProbeConfig& cfg);

// Mean over time of f^j for every clip, [clips, dim] per layer.
std::vector<nn::Tensor> pooled_layer_features(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips,
                                              int depth);

// Per-layer accuracy; rejects splits whose class histogram spread exceeds 1.
std::vector<double> semantic_probe_accuracy(const rvq::Tokenizer& tok, const std::vector<data::Example>& train,
                                            const std::vector<data::Example>& heldout, const ProbeConfig& cfg,
                                            int depth = -1);

// Probe fed Gaussian noise features with the given labels.
double chance_probe_accuracy(const std::vector<int>& train_y, const std::vector<int>& test_y, int dim,
                             const ProbeConfig& cfg);

std::vector<double> ema_smooth(const std::vector<double>& x, double alpha);
// Average ranks for ties; nullopt when either side has zero variance.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ConvergenceReport {
    std::vector<int> layers;
    std::vector<std::vector<int>> steps;
    std::vector<std::vector<double>> smoothed;
    std::vector<double> final_loss;
    double spearman = 0.0;
    bool degenerate = false;
};

ConvergenceReport convergence_report(const std::vector<lm::LossRecord>& records, double alpha = 0.05);

struct GroupSimilarity {
    std::string group;
    std::vector<std::optional<double>> pairwise;  // K choose 2, in (a, b) order with a < b
    std::optional<double> median;
    int flagged = 0;  // pairs with a zero task vector
};

std::string structure_group(const std::string& param_name);

std::vector<GroupSimilarity> task_vector_similarity(const nn::ParameterStore& init,
                                                    const std::vector<const nn::ParameterStore*>& trained);

// Named tables plus metadata, serialisable to JSON.
struct AnalysisReport {
    nlohmann::json metadata = nlohmann::json::object();
    nlohmann::json tables = nlohmann::json::object();

    nlohmann::json to_json() const;
    static AnalysisReport from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const CosineStats& s);
nlohmann::json to_json(const AngleStats& s);
nlohmann::json to_json(const ConvergenceReport& r);
nlohmann::json to_json(const std::vector<GroupSimilarity>& g);

}  // namespace siren::analysis
