#include "siren/rl/reward.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "siren/nn/ops.h"
#include "siren/nn/optim.h"

namespace siren::rl {

namespace {

constexpr int kFrame = 512;

using nn::Graph;
using nn::Tensor;
using nn::Var;

// Centred unit-length rows: layer norm without affine terms, divided by sqrt(d).
template <typename Store>
Var unit_rows(Graph& g, Var x, Store& ps) {
    Var y = nn::layer_norm(g, x, g.param(ps.at("norm.g")), g.param(ps.at("norm.b")));
    return nn::scale(g, y, 1.0f / std::sqrt(static_cast<float>(g.value(y).cols())));
}

template <typename Store>
Var audio_forward(Graph& g, Store& ps, Var spec) {
    Var x = nn::sub(g, spec, nn::gather_rows(g, g.param(ps.at("feat.mean")),
                                             std::vector<int>(static_cast<size_t>(g.value(spec).rows()), 0)));
    x = nn::mul(g, x, nn::gather_rows(g, g.param(ps.at("feat.inv_std")),
                                      std::vector<int>(static_cast<size_t>(g.value(spec).rows()), 0)));
    Var h = nn::gelu(g, nn::linear(g, x, g.param(ps.at("audio.w1")), g.param(ps.at("audio.b1"))));
    return unit_rows(g, nn::linear(g, h, g.param(ps.at("audio.w2")), g.param(ps.at("audio.b2"))), ps);
}

}  // namespace

RewardModel::RewardModel(const RewardConfig& cfg) : cfg_(cfg) {
    if (cfg.hidden < 1 || cfg.embed < 2) {
        throw std::invalid_argument("reward probe sizes must be positive");
    }
    nn::Rng rng(cfg.seed);
    const int bins = kFrame / 2 + 1;
    params_.add("feat.mean", Tensor({1, bins}));
    params_.add("feat.inv_std", Tensor({1, bins}, 1.0f));
    params_.add("audio.w1", nn::normal_tensor<float>({bins, cfg.hidden}, 1.0 / std::sqrt(bins), rng));
    params_.add("audio.b1", Tensor({cfg.hidden}));
    params_.add("audio.w2", nn::normal_tensor<float>({cfg.hidden, cfg.embed}, 1.0 / std::sqrt(cfg.hidden), rng));
    params_.add("audio.b2", Tensor({cfg.embed}));
    params_.add("text.table", nn::normal_tensor<float>({data::kNumClasses, cfg.embed}, 1.0, rng));
    params_.add("norm.g", Tensor({cfg.embed}, 1.0f));
    params_.add("norm.b", Tensor({cfg.embed}));
}

std::vector<float> RewardModel::spectrum(const data::Waveform& w) {
    return data::SpectralOracle::log_spectrum(w, kFrame);
}

std::vector<float> RewardModel::audio_embedding_from_spectrum(const std::vector<float>& spec) const {
    Graph g(false);
    Var s = g.constant(Tensor({1, static_cast<int>(spec.size())}, spec));
    return g.value(audio_forward(g, params_, s)).data;
}

std::vector<float> RewardModel::audio_embedding(const data::Waveform& w) const {
    for (float v : w.samples) {
        if (!std::isfinite(v)) {
            throw std::domain_error("reward: waveform contains non-finite samples");
        }
    }
    return audio_embedding_from_spectrum(spectrum(w));
}

std::vector<float> RewardModel::text_embedding(int class_id) const {
    if (class_id < 0 || class_id >= data::kNumClasses) {
        throw std::out_of_range("reward: class id out of range");
    }
    Graph g(false);
    Var row = nn::gather_rows(g, g.param(params_.at("text.table")), std::vector<int>{class_id});
    return g.value(unit_rows(g, row, params_)).data;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("cosine: size mismatch");
    }
    double ab = 0, aa = 0, bb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        return 0.0;
    }
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double RewardModel::score(const data::Waveform& w, int class_id) const {
    return cosine(audio_embedding(w), text_embedding(class_id));
}

int RewardModel::retrieve(const data::Waveform& w) const {
    const auto a = audio_embedding(w);
    int best = 0;
    double best_cos = -2.0;
    for (int c = 0; c < data::kNumClasses; ++c) {
        const double s = cosine(a, text_embedding(c));
        if (s > best_cos) {
            best_cos = s;
            best = c;
        }
    }
    return best;
}

double retrieval_accuracy(const RewardModel& rm, const std::vector<data::Example>& clips) {
    if (clips.empty()) {
        throw std::invalid_argument("retrieval_accuracy: no clips");
    }
    int hit = 0;
    for (const auto& ex : clips) {
        hit += rm.retrieve(ex.wave) == ex.cond.class_id ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(clips.size());
}

RewardModel train_reward_probe(const std::vector<data::Example>& train, const std::vector<data::Example>& heldout,
                               const RewardConfig& cfg, double* heldout_accuracy) {
    if (train.empty() || heldout.empty()) {
        throw std::invalid_argument("reward probe needs training and held-out clips");
    }
    RewardModel rm(cfg);
    const int bins = kFrame / 2 + 1;
    const int n = static_cast<int>(train.size());
    Tensor feats({n, bins});
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto s = RewardModel::spectrum(train[static_cast<size_t>(i)].wave);
        std::copy(s.begin(), s.end(), feats.row(i));
        labels[static_cast<size_t>(i)] = train[static_cast<size_t>(i)].cond.class_id;
    }
    auto& mean = rm.params().at("feat.mean").value;
    auto& inv = rm.params().at("feat.inv_std").value;
    for (int b = 0; b < bins; ++b) {
        double s = 0, ss = 0;
        for (int i = 0; i < n; ++i) {
            s += feats.row(i)[b];
        }
        const double mu = s / n;
        for (int i = 0; i < n; ++i) {
            const double d = feats.row(i)[b] - mu;
            ss += d * d;
        }
        mean.data[static_cast<size_t>(b)] = static_cast<float>(mu);
        inv.data[static_cast<size_t>(b)] = static_cast<float>(1.0 / std::sqrt(ss / n + 1e-6));
    }

    std::vector<nn::Parameter*> trainable;
    for (auto& p : rm.params()) {
        if (p.name.rfind("feat.", 0) != 0 && p.name.rfind("norm.", 0) != 0) {
            trainable.push_back(&p);
        }
    }
    nn::AdamWState state;
    nn::AdamWConfig acfg;
    acfg.lr = cfg.lr;
    nn::Rng rng(nn::derive_seed(cfg.seed, 0x9e3));
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int b = std::min(cfg.batch, n);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(static_cast<size_t>(b)), y(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            idx[static_cast<size_t>(i)] = pick(rng);
            y[static_cast<size_t>(i)] = labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        }
        rm.params().zero_grad();
        Graph g;
        Var x = nn::gather_rows(g, g.view(feats), idx);
        Var a = audio_forward(g, rm.params(), x);
        Var t = unit_rows(g, g.param(rm.params().at("text.table")), rm.params());
        Var logits = nn::scale(g, nn::matmul(g, a, nn::transpose(g, t)), cfg.logit_scale);
        Var loss = nn::cross_entropy(g, logits, y);
        if (!std::isfinite(g.value(loss).data[0])) {
            throw std::runtime_error("reward probe training diverged at step " + std::to_string(step));
        }
        g.backward(loss);
        acfg.lr = static_cast<float>(cfg.lr * (0.1 + 0.9 * (1.0 - static_cast<double>(step) / cfg.steps)));
        nn::adamw_step(trainable, state, acfg);
    }
    const double acc = retrieval_accuracy(rm, heldout);
    if (heldout_accuracy != nullptr) {
        *heldout_accuracy = acc;
    }
    if (acc < cfg.min_accuracy) {
        throw std::runtime_error("reward probe held-out retrieval accuracy " + std::to_string(acc) +
                                 " is below the required " + std::to_string(cfg.min_accuracy));
    }
    return rm;
}

}  // namespace siren::rl
