#include "siren/sampler/sampler.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "siren/nn/ops.h"

namespace siren::sampler {

void SamplingConfig::validate(int vocab, int max_len) const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw std::invalid_argument("temperature must be finite and >= 0");
    }
    if (top_k < 1 || top_k > vocab) {
        throw std::invalid_argument("top_k must lie in [1, " + std::to_string(vocab) + "], got " +
                                    std::to_string(top_k));
    }
    if (length < 1 || length > max_len) {
        throw std::invalid_argument("generation length must lie in [1, " + std::to_string(max_len) + "], got " +
                                    std::to_string(length));
    }
}

int check_group(const std::vector<const CodeModel*>& models) {
    if (models.empty() || models.front() == nullptr) {
        throw std::invalid_argument("missing model 0");
    }
    const int depth = models.front()->config().depth;
    int next = 0;
    for (size_t k = 0; k < models.size(); ++k) {
        const CodeModel* m = models[k];
        if (m == nullptr) {
            throw std::invalid_argument("missing model " + std::to_string(k));
        }
        if (m->config().depth != depth || m->first_layer() != next) {
            throw std::invalid_argument("model " + std::to_string(k) + " owns layers from " +
                                        std::to_string(m->first_layer()) + ", expected " + std::to_string(next) +
                                        " (missing model for layer " + std::to_string(next) + ")");
        }
        next += m->owned();
    }
    if (next != depth) {
        throw std::invalid_argument("models cover layers [0, " + std::to_string(next) + ") of " +
                                    std::to_string(depth) + "; missing model for layer " + std::to_string(next));
    }
    return depth;
}

int sample_code(std::span<const float> logits, double temperature, int top_k, nn::Rng& rng) {
    const int v = static_cast<int>(logits.size());
    if (v == 0) {
        throw std::invalid_argument("sample_code: empty logits");
    }
    if (temperature == 0.0) {
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    std::vector<int> idx(static_cast<size_t>(v));
    std::iota(idx.begin(), idx.end(), 0);
    const int k = std::clamp(top_k, 1, v);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)]
                   ? logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)]
                   : a < b;
    });
    std::vector<double> w(static_cast<size_t>(k));
    const double top = logits[static_cast<size_t>(idx[0])] / temperature;
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        w[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(idx[static_cast<size_t>(i)])] / temperature - top);
        total += w[static_cast<size_t>(i)];
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double x = u(rng);
    for (int i = 0; i < k; ++i) {
        x -= w[static_cast<size_t>(i)];
        if (x < 0.0) {
            return idx[static_cast<size_t>(i)];
        }
    }
    return idx[static_cast<size_t>(k - 1)];
}

GenerationResult generate_tokens(const std::vector<const CodeModel*>& models, int class_id,
                                 const SamplingConfig& cfg) {
    const int depth = check_group(models);
    const auto& mc = models.front()->config();
    cfg.validate(mc.vocab, mc.max_len);
    if (class_id < 0 || class_id >= mc.num_classes) {
        throw std::out_of_range("class id " + std::to_string(class_id) + " out of range");
    }
    const int len = cfg.length, c = mc.code_dim;
    GenerationResult res;
    res.class_id = class_id;
    res.grid.layers = depth;
    res.grid.length = len;
    res.grid.codes.assign(static_cast<size_t>(depth) * len, 0);
    res.log_probs.assign(static_cast<size_t>(depth), std::vector<double>(static_cast<size_t>(len), 0.0));

    nn::Rng rng(cfg.seed);
    std::vector<CodeModel::Cache> caches;
    if (cfg.kv_cache) {
        for (const auto* m : models) {
            caches.push_back(m->start_cache(class_id));
        }
    }
    std::vector<float> prev(static_cast<size_t>(c), 0.0f);
    std::vector<int> same_step(static_cast<size_t>(depth));
    std::vector<float> lp(static_cast<size_t>(mc.vocab));
    for (int t = 0; t < len; ++t) {
        if (t > 0) {
            models.front()->step_embedding(res.grid, t - 1, prev.data());
        }
        for (size_t k = 0; k < models.size(); ++k) {
            const CodeModel& m = *models[k];
            const std::vector<float> h = cfg.kv_cache ? m.step(caches[k], prev) : m.hidden_at(res.grid, t, class_id);
            for (int p = 0; p < m.owned(); ++p) {
                const int layer = m.owned_layer(p);
                const auto logits =
                    m.position_logits(h, std::span<const int>(same_step.data(), static_cast<size_t>(layer)), p);
                const int q = sample_code(logits, cfg.temperature, cfg.top_k, rng);
                nn::log_softmax_row(logits.data(), lp.data(), mc.vocab);
                res.grid.codes[static_cast<size_t>(layer) * len + t] = q;
                res.log_probs[static_cast<size_t>(layer)][static_cast<size_t>(t)] = lp[static_cast<size_t>(q)];
                same_step[static_cast<size_t>(layer)] = q;
            }
        }
    }
    return res;
}

std::vector<std::vector<double>> score_grid(const std::vector<const CodeModel*>& models, const CodeGrid& grid,
                                            int class_id) {
    const int depth = check_group(models);
    if (grid.layers != depth) {
        throw std::invalid_argument("grid depth does not match the model group");
    }
    const int vocab = models.front()->config().vocab;
    std::vector<std::vector<double>> out(static_cast<size_t>(depth),
                                         std::vector<double>(static_cast<size_t>(grid.length)));
    std::vector<float> lp(static_cast<size_t>(vocab));
    for (const auto* m : models) {
        CodeModel::Batch b;
        b.grids = {&grid};
        b.classes = {class_id};
        b.starts = {0};
        b.window = grid.length;
        nn::Graph g(false);
        auto fw = m->forward(g, b);
        for (int p = 0; p < m->owned(); ++p) {
            const auto& logits = g.value(fw.logits[static_cast<size_t>(p)]);
            for (int t = 0; t < grid.length; ++t) {
                nn::log_softmax_row(logits.row(t), lp.data(), vocab);
                out[static_cast<size_t>(m->owned_layer(p))][static_cast<size_t>(t)] =
                    lp[static_cast<size_t>(grid.at(m->owned_layer(p), t))];
            }
        }
    }
    return out;
}

data::Waveform detokenize(const CodeGrid& grid, const rvq::Tokenizer& tok) {
    if (grid.codes.size() != static_cast<size_t>(grid.layers) * grid.length || grid.length < 1) {
        throw std::invalid_argument("detokenize: incomplete grid");
    }
    return tok.detokenize(grid);
}

std::vector<Generated> batch_generate(const std::vector<const CodeModel*>& models, const rvq::Tokenizer& tok,
                                      const std::vector<Request>& requests, const SamplingConfig& cfg) {
    if (requests.empty()) {
        throw std::invalid_argument("batch_generate: no requests");
    }
    std::vector<Generated> out;
    out.reserve(requests.size());
    for (size_t i = 0; i < requests.size(); ++i) {
        try {
            SamplingConfig item = cfg;
            item.seed = requests[i].seed;
            Generated g;
            g.result = generate_tokens(models, requests[i].class_id, item);
            g.wave = detokenize(g.result.grid, tok);
            out.push_back(std::move(g));
        } catch (const std::exception& e) {
            throw std::runtime_error("batch item " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace siren::sampler
