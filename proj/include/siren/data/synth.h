#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace siren::data {

inline constexpr int kNumClasses = 15;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 8000;

    double duration() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

struct Condition {
    int class_id = 0;
    std::string label;
};

const std::string& class_label(int class_id);
int class_from_label(const std::string& label);
Condition make_condition(int class_id);

struct ClassSignature {
    double f0 = 0;
    std::array<double, 4> harmonics{};
    double am_rate = 0;
    double am_depth = 0;
};

ClassSignature class_signature(int class_id);

struct ClipParams {
    double duration = 1.0;
    int sample_rate = 8000;
    double noise_std = 0.02;
};

Waveform generate_clip(int class_id, uint64_t seed, const ClipParams& params = {});

// Deterministic noise-free rendering of a class at its nominal settings.
Waveform class_template(int class_id, const ClipParams& params = {});

enum class Split { train, val, rl };
const char* split_name(Split s);

struct Example {
    Waveform wave;
    Condition cond;
    uint64_t identity = 0;
    uint64_t seed = 0;
};

struct DatasetSplit {
    Split tag = Split::train;
    uint64_t master_seed = 0;
    std::vector<Example> items;
};

struct DatasetConfig {
    uint64_t master_seed = 1234;
    int train_size = 3000;
    int val_size = 500;
    int rl_size = 200;
    uint64_t train_offset = 0;
    uint64_t val_offset = 1000000;
    uint64_t rl_offset = 2000000;
    ClipParams clip;
};

struct Dataset {
    DatasetSplit train;
    DatasetSplit val;
    DatasetSplit rl;
};

uint64_t clip_seed(uint64_t master_seed, uint64_t identity);
DatasetSplit build_split(const DatasetConfig& cfg, Split tag);
Dataset build_dataset(const DatasetConfig& cfg);

// FNV-1a over class ids and raw sample bytes.
uint64_t split_checksum(const DatasetSplit& split);

std::vector<int> class_histogram(const DatasetSplit& split);

struct OracleResult {
    int class_id = 0;
    bool low_confidence = false;
    double distance = 0;
};

// Nearest centroid over the mean log-magnitude spectrum; centroids come from
// the noise-free class templates, never from a trained model.
class SpectralOracle {
public:
    explicit SpectralOracle(const ClipParams& params = {});
    OracleResult classify(const Waveform& w) const;
    static std::vector<float> log_spectrum(const Waveform& w, int frame = 512);

private:
    ClipParams params_;
    std::vector<std::vector<float>> centroids_;
};

OracleResult oracle_classify(const Waveform& w);

void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

}  // namespace siren::data
