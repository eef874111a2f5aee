#include "siren/data/synth.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "siren/nn/parameter.h"

namespace siren::data {

namespace {

constexpr double kTwoPi = 6.283185307179586;

void check_class(int class_id) {
    if (class_id < 0 || class_id >= kNumClasses) {
        throw std::invalid_argument("class id " + std::to_string(class_id) + " outside [0, " +
                                    std::to_string(kNumClasses) + ")");
    }
}

double unit_hash(uint64_t a, uint64_t b) {
    return static_cast<double>(nn::derive_seed(0x5157a11dULL, a, b) >> 11) * 0x1.0p-53;
}

const std::vector<std::string>& labels() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (int c = 0; c < kNumClasses; ++c) {
            v.push_back("class_" + std::string(c < 10 ? "0" : "") + std::to_string(c));
        }
        return v;
    }();
    return names;
}

struct Render {
    double f0;
    std::array<double, 4> phase{};
    double am_phase = 0;
    double gain = 0.65;
};

Waveform render(int class_id, const Render& rp, const ClipParams& params, std::mt19937_64* noise) {
    if (params.sample_rate <= 0 || params.duration <= 0) {
        throw std::invalid_argument("clip duration and sample rate must be positive");
    }
    const ClassSignature sig = class_signature(class_id);
    const size_t n = static_cast<size_t>(std::llround(params.duration * params.sample_rate));
    const double nyquist = 0.5 * params.sample_rate;
    Waveform w;
    w.sample_rate = params.sample_rate;
    w.samples.resize(n);
    double norm = 0;
    for (size_t h = 0; h < sig.harmonics.size(); ++h) {
        if (rp.f0 * static_cast<double>(h + 1) < nyquist) {
            norm += sig.harmonics[h];
        }
    }
    std::normal_distribution<double> gauss(0.0, params.noise_std);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / params.sample_rate;
        double s = 0;
        for (size_t h = 0; h < sig.harmonics.size(); ++h) {
            const double f = rp.f0 * static_cast<double>(h + 1);
            if (f >= nyquist) {
                break;
            }
            s += sig.harmonics[h] * std::sin(kTwoPi * f * t + rp.phase[h]);
        }
        s /= norm;
        const double env =
            1.0 - sig.am_depth + sig.am_depth * (0.5 + 0.5 * std::sin(kTwoPi * sig.am_rate * t + rp.am_phase));
        double v = rp.gain * env * s;
        if (noise != nullptr && params.noise_std > 0) {
            v += gauss(*noise);
        }
        w.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
    return w;
}

}  // namespace

const std::string& class_label(int class_id) {
    check_class(class_id);
    return labels()[static_cast<size_t>(class_id)];
}

int class_from_label(const std::string& label) {
    const auto& v = labels();
    auto it = std::find(v.begin(), v.end(), label);
    if (it == v.end()) {
        throw std::invalid_argument("unknown class label: " + label);
    }
    return static_cast<int>(it - v.begin());
}

Condition make_condition(int class_id) { return Condition{class_id, class_label(class_id)}; }

ClassSignature class_signature(int class_id) {
    check_class(class_id);
    ClassSignature s;
    s.f0 = 200.0 * std::pow(8.0, class_id / 14.0);
    s.harmonics[0] = 1.0;
    for (size_t h = 1; h < s.harmonics.size(); ++h) {
        s.harmonics[h] = (0.2 + 0.8 * unit_hash(static_cast<uint64_t>(class_id), h)) * std::pow(0.6, static_cast<double>(h));
    }
    s.am_rate = 1.0 + 7.0 * unit_hash(static_cast<uint64_t>(class_id), 100);
    s.am_depth = 0.2 + 0.5 * unit_hash(static_cast<uint64_t>(class_id), 101);
    return s;
}

Waveform generate_clip(int class_id, uint64_t seed, const ClipParams& params) {
    check_class(class_id);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Render rp;
    rp.f0 = class_signature(class_id).f0 * (1.0 + 0.03 * (u(rng) - 0.5));
    for (auto& p : rp.phase) {
        p = kTwoPi * u(rng);
    }
    rp.am_phase = kTwoPi * u(rng);
    rp.gain = 0.5 + 0.3 * u(rng);
    return render(class_id, rp, params, &rng);
}

Waveform class_template(int class_id, const ClipParams& params) {
    check_class(class_id);
    Render rp;
    rp.f0 = class_signature(class_id).f0;
    return render(class_id, rp, params, nullptr);
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train:
            return "train";
        case Split::val:
            return "val";
        case Split::rl:
            return "rl";
    }
    return "?";
}

uint64_t clip_seed(uint64_t master_seed, uint64_t identity) {
    return nn::derive_seed(master_seed, identity, 0xc11b);
}

namespace {

std::pair<uint64_t, int> split_range(const DatasetConfig& cfg, Split tag) {
    switch (tag) {
        case Split::train:
            return {cfg.train_offset, cfg.train_size};
        case Split::val:
            return {cfg.val_offset, cfg.val_size};
        case Split::rl:
            return {cfg.rl_offset, cfg.rl_size};
    }
    return {0, 0};
}

void validate(const DatasetConfig& cfg) {
    const Split all[] = {Split::train, Split::val, Split::rl};
    for (Split s : all) {
        if (split_range(cfg, s).second <= 0) {
            throw std::invalid_argument(std::string("dataset split '") + split_name(s) +
                                        "' must have a positive size");
        }
    }
    for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
            auto [oa, na] = split_range(cfg, all[a]);
            auto [ob, nb] = split_range(cfg, all[b]);
            if (oa < ob + static_cast<uint64_t>(nb) && ob < oa + static_cast<uint64_t>(na)) {
                throw std::invalid_argument(std::string("overlapping seed ranges for splits '") +
                                            split_name(all[a]) + "' and '" + split_name(all[b]) + "'");
            }
        }
    }
}

}  // namespace

DatasetSplit build_split(const DatasetConfig& cfg, Split tag) {
    validate(cfg);
    auto [offset, size] = split_range(cfg, tag);
    DatasetSplit out;
    out.tag = tag;
    out.master_seed = cfg.master_seed;
    out.items.reserve(static_cast<size_t>(size));
    for (int i = 0; i < size; ++i) {
        Example ex;
        ex.identity = offset + static_cast<uint64_t>(i);
        ex.seed = clip_seed(cfg.master_seed, ex.identity);
        ex.cond = make_condition(i % kNumClasses);
        ex.wave = generate_clip(ex.cond.class_id, ex.seed, cfg.clip);
        out.items.push_back(std::move(ex));
    }
    return out;
}

Dataset build_dataset(const DatasetConfig& cfg) {
    validate(cfg);
    return Dataset{build_split(cfg, Split::train), build_split(cfg, Split::val),
                   build_split(cfg, Split::rl)};
}

uint64_t split_checksum(const DatasetSplit& split) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& ex : split.items) {
        const int32_t c = ex.cond.class_id;
        feed(&c, sizeof c);
        feed(ex.wave.samples.data(), ex.wave.samples.size() * sizeof(float));
    }
    return h;
}

std::vector<int> class_histogram(const DatasetSplit& split) {
    std::vector<int> h(kNumClasses, 0);
    for (const auto& ex : split.items) {
        h[static_cast<size_t>(ex.cond.class_id)] += 1;
    }
    return h;
}

std::vector<float> SpectralOracle::log_spectrum(const Waveform& w, int frame) {
    const int bins = frame / 2 + 1;
    std::vector<double> power(static_cast<size_t>(bins), 0.0);
    std::vector<float> buf(static_cast<size_t>(frame));
    std::vector<fftwf_complex> spec(static_cast<size_t>(bins));
    fftwf_plan plan = fftwf_plan_dft_r2c_1d(frame, buf.data(), spec.data(), FFTW_ESTIMATE);
    int frames = 0;
    const size_t n = w.samples.size();
    for (size_t start = 0; start + static_cast<size_t>(frame) <= n; start += static_cast<size_t>(frame / 2)) {
        for (int i = 0; i < frame; ++i) {
            const double hann = 0.5 - 0.5 * std::cos(kTwoPi * i / frame);
            buf[static_cast<size_t>(i)] = static_cast<float>(hann * w.samples[start + static_cast<size_t>(i)]);
        }
        fftwf_execute(plan);
        for (int b = 0; b < bins; ++b) {
            const double re = spec[static_cast<size_t>(b)][0], im = spec[static_cast<size_t>(b)][1];
            power[static_cast<size_t>(b)] += re * re + im * im;
        }
        ++frames;
    }
    fftwf_destroy_plan(plan);
    std::vector<float> out(static_cast<size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        const double p = frames > 0 ? power[static_cast<size_t>(b)] / frames : 0.0;
        out[static_cast<size_t>(b)] = static_cast<float>(std::log(p + 1.0));
    }
    return out;
}

SpectralOracle::SpectralOracle(const ClipParams& params) : params_(params) {
    for (int c = 0; c < kNumClasses; ++c) {
        centroids_.push_back(log_spectrum(class_template(c, params_)));
    }
}

OracleResult SpectralOracle::classify(const Waveform& w) const {
    OracleResult r;
    float peak = 0;
    for (float x : w.samples) {
        if (!std::isfinite(x)) {
            throw std::domain_error("oracle_classify: non-finite sample");
        }
        peak = std::max(peak, std::abs(x));
    }
    if (peak < 1e-6f) {
        r.class_id = 0;
        r.low_confidence = true;
        return r;
    }
    const auto spec = log_spectrum(w);
    double best = std::numeric_limits<double>::infinity(), second = best;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& cen = centroids_[static_cast<size_t>(c)];
        double d = 0;
        for (size_t i = 0; i < spec.size(); ++i) {
            const double e = spec[i] - cen[i];
            d += e * e;
        }
        if (d < best) {
            second = best;
            best = d;
            r.class_id = c;
        } else if (d < second) {
            second = d;
        }
    }
    r.distance = std::sqrt(best);
    r.low_confidence = second < 1.05 * best;
    return r;
}

OracleResult oracle_classify(const Waveform& w) {
    static const SpectralOracle oracle;
    return oracle.classify(w);
}

namespace {

void put_u32(std::ofstream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
    os.write("RIFF", 4);
    put_u32(os, 36 + data_bytes);
    os.write("WAVEfmt ", 8);
    put_u32(os, 16);
    put_u16(os, 1);
    put_u16(os, 1);
    put_u32(os, static_cast<uint32_t>(w.sample_rate));
    put_u32(os, static_cast<uint32_t>(w.sample_rate) * 2);
    put_u16(os, 2);
    put_u16(os, 16);
    os.write("data", 4);
    put_u32(os, data_bytes);
    for (float x : w.samples) {
        const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
        put_u16(os, static_cast<uint16_t>(static_cast<int16_t>(std::lround(c * 32767.0))));
    }
    if (!os) {
        throw std::runtime_error("write failed for " + path);
    }
}

Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path);
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error(path + ": not a RIFF/WAVE file");
    }
    Waveform w;
    size_t pos = 12;
    bool have_fmt = false;
    while (pos + 8 <= bytes.size()) {
        const uint32_t size = get_u32(&bytes[pos + 4]);
        const unsigned char* body = &bytes[pos + 8];
        if (pos + 8 + size > bytes.size()) {
            throw std::runtime_error(path + ": truncated chunk");
        }
        if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
            if (size < 16 || get_u16(body) != 1 || get_u16(body + 2) != 1 || get_u16(body + 14) != 16) {
                throw std::runtime_error(path + ": only 16-bit PCM mono is supported");
            }
            w.sample_rate = static_cast<int>(get_u32(body + 4));
            have_fmt = true;
        } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
            if (!have_fmt) {
                throw std::runtime_error(path + ": data chunk before fmt chunk");
            }
            w.samples.resize(size / 2);
            for (size_t i = 0; i < w.samples.size(); ++i) {
                w.samples[i] = static_cast<int16_t>(get_u16(body + 2 * i)) / 32767.0f;
            }
            return w;
        }
        pos += 8 + size + (size & 1);
    }
    throw std::runtime_error(path + ": no data chunk");
}

}  // namespace siren::data
