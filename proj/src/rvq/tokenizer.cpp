#include "siren/rvq/tokenizer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "siren/nn/ops.h"

namespace siren::rvq {

using nn::Graph;
using nn::Var;

int TokenizerConfig::hop() const {
    int h = 1;
    for (int s : strides) {
        h *= s;
    }
    return h;
}

namespace {

void check_config(const TokenizerConfig& c) {
    if (c.depth < 1) {
        throw std::invalid_argument("tokenizer depth must be >= 1");
    }
    if (c.vocab < 1 || c.code_dim < 1 || c.channels < 1) {
        throw std::invalid_argument("tokenizer vocab, code_dim and channels must be positive");
    }
    for (int s : c.strides) {
        if (s < 2 || s % 2 != 0) {
            throw std::invalid_argument("tokenizer strides must be even and >= 2");
        }
    }
    if (c.crop % c.hop() != 0) {
        throw std::invalid_argument("tokenizer crop must be a multiple of the hop");
    }
}

}  // namespace

int stage_channels(const TokenizerConfig& c, int stage) {
    const int n = static_cast<int>(c.strides.size());
    const int shift = std::max(0, n - 2 - stage);
    return std::max(1, c.channels >> shift);
}

LayerQuant quantize_layer(std::span<const double> residual, const Codebook& book) {
    const int v = book.vocab(), c = book.dim();
    if (v == 0 || book.table.numel() == 0) {
        throw std::invalid_argument("quantize_layer: empty codebook");
    }
    if (static_cast<int>(residual.size()) != c) {
        throw std::invalid_argument("quantize_layer: residual width " + std::to_string(residual.size()) +
                                    " does not match codebook dim " + std::to_string(c));
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < v; ++k) {
        const float* z = book.table.row(k);
        double d = 0;
        for (int i = 0; i < c; ++i) {
            const double e = residual[static_cast<size_t>(i)] - static_cast<double>(z[i]);
            d += e * e;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (!std::isfinite(best_d)) {
        throw std::domain_error("quantize_layer: non-finite residual or codebook");
    }
    LayerQuant q;
    q.code = best;
    q.embedding.assign(book.table.row(best), book.table.row(best) + c);
    q.next_residual.resize(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        q.next_residual[static_cast<size_t>(i)] =
            residual[static_cast<size_t>(i)] - static_cast<double>(q.embedding[static_cast<size_t>(i)]);
    }
    return q;
}

LayerQuant quantize_layer(std::span<const float> residual, const Codebook& book) {
    std::vector<double> r(residual.begin(), residual.end());
    return quantize_layer(std::span<const double>(r), book);
}

std::vector<float> lookup(const Codebook& book, int code) {
    if (code < 0 || code >= book.vocab()) {
        throw std::out_of_range("lookup: code " + std::to_string(code) + " outside [0, " +
                                std::to_string(book.vocab()) + ")");
    }
    return std::vector<float>(book.table.row(code), book.table.row(code) + book.dim());
}

RvqResult rvq_tokenize(const LatentFeature& feature, std::span<const Codebook> books, int r) {
    if (r < 1 || r > static_cast<int>(books.size())) {
        throw std::invalid_argument("rvq_tokenize: depth " + std::to_string(r) + " outside [1, " +
                                    std::to_string(books.size()) + "]");
    }
    const int l = feature.length(), c = feature.dim();
    RvqResult out;
    out.grid = CodeGrid(r, l);
    out.quantized_sum = Tensor({l, c});
    out.residual.resize(static_cast<size_t>(l) * c);
    std::vector<double> res(static_cast<size_t>(c)), acc(static_cast<size_t>(c));
    for (int t = 0; t < l; ++t) {
        const float* f = feature.values.row(t);
        for (int i = 0; i < c; ++i) {
            res[static_cast<size_t>(i)] = f[i];
            acc[static_cast<size_t>(i)] = 0;
        }
        for (int j = 0; j < r; ++j) {
            LayerQuant q = quantize_layer(std::span<const double>(res), books[static_cast<size_t>(j)]);
            out.grid.at(j, t) = q.code;
            for (int i = 0; i < c; ++i) {
                acc[static_cast<size_t>(i)] += q.embedding[static_cast<size_t>(i)];
            }
            res = std::move(q.next_residual);
        }
        float* s = out.quantized_sum.row(t);
        for (int i = 0; i < c; ++i) {
            s[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
            out.residual[static_cast<size_t>(t) * c + static_cast<size_t>(i)] = res[static_cast<size_t>(i)];
        }
    }
    return out;
}

Tensor lookup_sum(const CodeGrid& grid, std::span<const Codebook> books) {
    if (grid.layers > static_cast<int>(books.size())) {
        throw std::invalid_argument("lookup_sum: grid has more layers than codebooks");
    }
    if (grid.layers == 0) {
        throw std::invalid_argument("lookup_sum: empty grid");
    }
    const int c = books[0].dim();
    Tensor out({grid.length, c});
    std::vector<double> acc(static_cast<size_t>(c));
    for (int t = 0; t < grid.length; ++t) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j = 0; j < grid.layers; ++j) {
            const int code = grid.at(j, t);
            const auto& book = books[static_cast<size_t>(j)];
            if (code < 0 || code >= book.vocab()) {
                throw std::out_of_range("lookup_sum: code " + std::to_string(code) + " at layer " +
                                        std::to_string(j) + ", step " + std::to_string(t) +
                                        " outside [0, " + std::to_string(book.vocab()) + ")");
            }
            const float* z = book.table.row(code);
            for (int i = 0; i < c; ++i) {
                acc[static_cast<size_t>(i)] += z[i];
            }
        }
        for (int i = 0; i < c; ++i) {
            out.row(t)[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
        }
    }
    return out;
}

namespace {

// Store is const for inference (parameters become plain views) and mutable for training.
template <typename Store>
Var encoder_forward(Graph& g, Store& ps, const TokenizerConfig& cfg, Var x, int groups) {
    Var h = x;
    for (size_t i = 0; i < cfg.strides.size(); ++i) {
        const int s = cfg.strides[i];
        const std::string p = "enc." + std::to_string(i);
        h = nn::conv1d(g, h, g.param(ps.at(p + ".w")), g.param(ps.at(p + ".b")), groups, 2 * s, s, s / 2);
        h = nn::gelu(g, h);
    }
    return nn::linear(g, h, g.param(ps.at("enc.out.w")), g.param(ps.at("enc.out.b")));
}

template <typename Store>
Var decoder_forward(Graph& g, Store& ps, const TokenizerConfig& cfg, Var z, int groups) {
    Var h = nn::gelu(g, nn::linear(g, z, g.param(ps.at("dec.in.w")), g.param(ps.at("dec.in.b"))));
    const int n = static_cast<int>(cfg.strides.size());
    for (int i = 0; i < n; ++i) {
        const int s = cfg.strides[static_cast<size_t>(n - 1 - i)];
        const std::string p = "dec." + std::to_string(i);
        h = nn::conv_transpose1d(g, h, g.param(ps.at(p + ".w")), g.param(ps.at(p + ".b")), groups, 2 * s, s,
                                 s / 2);
        h = nn::gelu(g, h);
    }
    return nn::linear(g, h, g.param(ps.at("dec.out.w")), g.param(ps.at("dec.out.b")));
}

}  // namespace

Tokenizer::Tokenizer(const TokenizerConfig& cfg) : cfg_(cfg) {
    check_config(cfg_);
    init_params();
}

void Tokenizer::init_params() {
    nn::Rng rng(nn::derive_seed(cfg_.seed, 0x70c));

    const int n = static_cast<int>(cfg_.strides.size());
    int cin = 1;
    for (int i = 0; i < n; ++i) {
        const int k = 2 * cfg_.strides[static_cast<size_t>(i)];
        const int ch = stage_channels(cfg_, i);
        const std::string p = "enc." + std::to_string(i);
        params_.add(p + ".w", nn::normal_tensor<float>({k * cin, ch}, 1.0 / std::sqrt(k * cin), rng));
        params_.add(p + ".b", Tensor({ch}));
        cin = ch;
    }
    params_.add("enc.out.w", nn::normal_tensor<float>({cin, cfg_.code_dim}, 1.0 / std::sqrt(cin), rng));
    params_.add("enc.out.b", Tensor({cfg_.code_dim}));
    params_.add("dec.in.w", nn::normal_tensor<float>({cfg_.code_dim, cin}, 1.0 / std::sqrt(cfg_.code_dim), rng));
    params_.add("dec.in.b", Tensor({cin}));
    for (int i = 0; i < n; ++i) {
        const int k = 2 * cfg_.strides[static_cast<size_t>(n - 1 - i)];
        const int out = stage_channels(cfg_, std::max(0, n - 2 - i));
        const std::string p = "dec." + std::to_string(i);
        params_.add(p + ".w", nn::normal_tensor<float>({cin, k * out}, 1.0 / std::sqrt(cin * 2), rng));
        params_.add(p + ".b", Tensor({out}));
        cin = out;
    }
    params_.add("dec.out.w", nn::normal_tensor<float>({cin, 1}, 1.0 / std::sqrt(cin), rng));
    params_.add("dec.out.b", Tensor({1}));

    books_.clear();
    ema_count_.clear();
    ema_sum_.clear();
    window_usage_.clear();
    for (int j = 0; j < cfg_.depth; ++j) {
        Codebook b;
        b.layer = j;
        b.table = nn::normal_tensor<float>({cfg_.vocab, cfg_.code_dim}, 0.1, rng);
        b.usage.assign(static_cast<size_t>(cfg_.vocab), 0);
        books_.push_back(std::move(b));
        ema_count_.emplace_back(std::vector<int>{cfg_.vocab}, 1.0f);
        ema_sum_.push_back(books_.back().table);
        window_usage_.emplace_back(static_cast<size_t>(cfg_.vocab), 0);
    }
}

LatentFeature Tokenizer::encode(const data::Waveform& w) const {
    const int n = static_cast<int>(w.samples.size());
    if (n == 0 || n % hop() != 0) {
        throw std::invalid_argument("encode: waveform length " + std::to_string(n) +
                                    " is not a positive multiple of the hop " + std::to_string(hop()));
    }
    Graph g(false);
    Tensor x({n, 1}, w.samples);
    Var f = encoder_forward(g, params_, cfg_, g.view(x), 1);
    return LatentFeature{g.value(f), Provenance::encoded};
}

data::Waveform Tokenizer::decode(const Tensor& quantized_sum, int sample_rate) const {
    if (quantized_sum.rank() != 2 || quantized_sum.cols() != cfg_.code_dim || quantized_sum.rows() < 1) {
        throw std::invalid_argument("decode: expected [l, " + std::to_string(cfg_.code_dim) + "], got " +
                                    nn::shape_string(quantized_sum.shape));
    }
    Graph g(false);
    Var y = decoder_forward(g, params_, cfg_, g.view(quantized_sum), 1);
    data::Waveform w;
    w.sample_rate = sample_rate;
    w.samples = g.value(y).data;
    return w;
}

RvqResult Tokenizer::tokenize(const data::Waveform& w, int r) const {
    return rvq_tokenize(encode(w), books_, r < 0 ? cfg_.depth : r);
}

data::Waveform Tokenizer::reconstruct(const data::Waveform& w, int r) const {
    return decode(tokenize(w, r).quantized_sum, w.sample_rate);
}

data::Waveform Tokenizer::detokenize(const CodeGrid& grid, int sample_rate) const {
    return decode(lookup_sum(grid, books_), sample_rate);
}

std::vector<std::pair<std::string, Tensor>> Tokenizer::state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& p : params_) {
        out.emplace_back(p.name, p.value);
    }
    for (int j = 0; j < cfg_.depth; ++j) {
        const std::string s = std::to_string(j);
        out.emplace_back("codebook." + s, books_[static_cast<size_t>(j)].table);
        out.emplace_back("ema_count." + s, ema_count_[static_cast<size_t>(j)]);
        out.emplace_back("ema_sum." + s, ema_sum_[static_cast<size_t>(j)]);
    }
    return out;
}

void Tokenizer::load_state(const std::vector<std::pair<std::string, Tensor>>& arrays, int64_t trained_steps) {
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : arrays) {
            if (n == name) {
                return t;
            }
        }
        throw std::invalid_argument("tokenizer state is missing array '" + name + "'");
    };
    auto assign = [&](Tensor& dst, const std::string& name) {
        const Tensor& src = find(name);
        if (src.shape != dst.shape) {
            throw std::invalid_argument("tokenizer array '" + name + "' has shape " + nn::shape_string(src.shape) +
                                        ", expected " + nn::shape_string(dst.shape));
        }
        dst = src;
    };
    for (auto& p : params_) {
        assign(p.value, p.name);
    }
    for (int j = 0; j < cfg_.depth; ++j) {
        const std::string s = std::to_string(j);
        assign(books_[static_cast<size_t>(j)].table, "codebook." + s);
        assign(ema_count_[static_cast<size_t>(j)], "ema_count." + s);
        assign(ema_sum_[static_cast<size_t>(j)], "ema_sum." + s);
    }
    books_initialised_ = true;
    trained_steps_ = trained_steps;
    opt_ = nn::AdamWState{};
}

void Tokenizer::init_codebooks(const Tensor& features, nn::Rng& rng) {
    const int n = features.rows(), c = features.cols();
    std::vector<double> res(features.data.begin(), features.data.end());
    for (int j = 0; j < cfg_.depth; ++j) {
        auto& book = books_[static_cast<size_t>(j)];
        for (int k = 0; k < cfg_.vocab; ++k) {
            const int row = std::uniform_int_distribution<int>(0, n - 1)(rng);
            for (int i = 0; i < c; ++i) {
                book.table.row(k)[i] = static_cast<float>(res[static_cast<size_t>(row) * c + i]);
            }
        }
        ema_sum_[static_cast<size_t>(j)] = book.table;
        std::fill(ema_count_[static_cast<size_t>(j)].data.begin(), ema_count_[static_cast<size_t>(j)].data.end(), 1.0f);
        for (int t = 0; t < n; ++t) {
            auto q = quantize_layer(std::span<const double>(&res[static_cast<size_t>(t) * c], static_cast<size_t>(c)), book);
            std::copy(q.next_residual.begin(), q.next_residual.end(), res.begin() + static_cast<std::ptrdiff_t>(t) * c);
        }
    }
    books_initialised_ = true;
}

Tokenizer::StepStats Tokenizer::train_step(const std::vector<std::vector<float>>& crops, nn::Rng& rng) {
    if (crops.empty()) {
        throw std::invalid_argument("train_step: empty batch");
    }
    const int len = static_cast<int>(crops[0].size());
    const int b = static_cast<int>(crops.size());
    if (len % hop() != 0) {
        throw std::invalid_argument("train_step: crop length must be a multiple of the hop");
    }
    Tensor x({b * len, 1});
    for (int i = 0; i < b; ++i) {
        if (static_cast<int>(crops[static_cast<size_t>(i)].size()) != len) {
            throw std::invalid_argument("train_step: crops differ in length");
        }
        std::copy(crops[static_cast<size_t>(i)].begin(), crops[static_cast<size_t>(i)].end(),
                  x.data.begin() + static_cast<std::ptrdiff_t>(i) * len);
    }

    params_.zero_grad();
    Graph g;
    Var xv = g.view(x);
    Var f = encoder_forward(g, params_, cfg_, xv, b);
    const Tensor& fv = g.value(f);
    if (!books_initialised_) {
        init_codebooks(fv, rng);
    }
    const int rows = fv.rows(), c = fv.cols(), depth = cfg_.depth;

    // quantize every row through all layers, keeping per-layer residual inputs
    std::vector<std::vector<double>> layer_in(static_cast<size_t>(depth), std::vector<double>(static_cast<size_t>(rows) * c));
    std::vector<std::vector<int>> assign(static_cast<size_t>(depth), std::vector<int>(static_cast<size_t>(rows)));
    std::vector<Tensor> cum(static_cast<size_t>(depth), Tensor({rows, c}));
    {
        std::vector<double> res(fv.data.begin(), fv.data.end());
        std::vector<double> acc(static_cast<size_t>(rows) * c, 0.0);
        for (int j = 0; j < depth; ++j) {
            layer_in[static_cast<size_t>(j)] = res;
            const auto& book = books_[static_cast<size_t>(j)];
            for (int t = 0; t < rows; ++t) {
                auto q = quantize_layer(std::span<const double>(&res[static_cast<size_t>(t) * c], static_cast<size_t>(c)), book);
                assign[static_cast<size_t>(j)][static_cast<size_t>(t)] = q.code;
                for (int i = 0; i < c; ++i) {
                    const size_t idx = static_cast<size_t>(t) * c + i;
                    res[idx] = q.next_residual[static_cast<size_t>(i)];
                    acc[idx] += q.embedding[static_cast<size_t>(i)];
                    cum[static_cast<size_t>(j)].data[idx] = static_cast<float>(acc[idx]);
                }
            }
        }
    }

    Var zq = nn::straight_through(g, f, g.constant(cum.back()));
    Var y = decoder_forward(g, params_, cfg_, zq, b);
    Var recon = nn::mse(g, y, xv);
    std::vector<Var> commits;
    for (int j = 0; j < depth; ++j) {
        commits.push_back(nn::mse(g, f, g.constant(cum[static_cast<size_t>(j)])));
    }
    Var commit = commits[0];
    for (size_t j = 1; j < commits.size(); ++j) {
        commit = nn::add(g, commit, commits[j]);
    }
    commit = nn::scale(g, commit, 1.0f / static_cast<float>(depth));
    Var loss = nn::add(g, recon, nn::scale(g, commit, cfg_.commitment));

    StepStats st;
    st.loss = g.value(loss)[0];
    st.recon = g.value(recon)[0];
    st.commit = g.value(commit)[0];
    if (!std::isfinite(st.loss)) {
        throw std::runtime_error("tokenizer training diverged at step " + std::to_string(trained_steps_ + 1) +
                                 ": loss=" + std::to_string(st.loss) + " recon=" + std::to_string(st.recon));
    }
    g.backward(loss);
    auto ptrs = params_.pointers();
    nn::clip_grad_norm(ptrs, 1.0);
    nn::AdamWConfig oc;
    oc.lr = cfg_.lr;
    if (cfg_.steps > 0) {
        const double progress = std::min(1.0, static_cast<double>(trained_steps_) / cfg_.steps);
        oc.lr = static_cast<float>(cfg_.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.141592653589793 * progress))));
    }
    nn::adamw_step(ptrs, opt_, oc);

    // EMA codebook update
    const float d = cfg_.ema_decay;
    for (int j = 0; j < depth; ++j) {
        auto& book = books_[static_cast<size_t>(j)];
        Tensor& cnt = ema_count_[static_cast<size_t>(j)];
        Tensor& sum = ema_sum_[static_cast<size_t>(j)];
        std::vector<double> n(static_cast<size_t>(cfg_.vocab), 0.0);
        std::vector<double> s(static_cast<size_t>(cfg_.vocab) * c, 0.0);
        for (int t = 0; t < rows; ++t) {
            const int k = assign[static_cast<size_t>(j)][static_cast<size_t>(t)];
            n[static_cast<size_t>(k)] += 1;
            for (int i = 0; i < c; ++i) {
                s[static_cast<size_t>(k) * c + i] += layer_in[static_cast<size_t>(j)][static_cast<size_t>(t) * c + i];
            }
            book.usage[static_cast<size_t>(k)] += 1;
            window_usage_[static_cast<size_t>(j)][static_cast<size_t>(k)] += 1;
        }
        double total = 0;
        for (int k = 0; k < cfg_.vocab; ++k) {
            cnt.data[static_cast<size_t>(k)] = d * cnt.data[static_cast<size_t>(k)] + (1 - d) * static_cast<float>(n[static_cast<size_t>(k)]);
            total += cnt.data[static_cast<size_t>(k)];
            for (int i = 0; i < c; ++i) {
                float& sv = sum.row(k)[i];
                sv = d * sv + (1 - d) * static_cast<float>(s[static_cast<size_t>(k) * c + i]);
            }
        }
        const double eps = 1e-5;
        for (int k = 0; k < cfg_.vocab; ++k) {
            const double sm = (cnt.data[static_cast<size_t>(k)] + eps) / (total + cfg_.vocab * eps) * total;
            for (int i = 0; i < c; ++i) {
                book.table.row(k)[i] = static_cast<float>(sum.row(k)[i] / sm);
            }
        }
    }

    trained_steps_ += 1;
    if (cfg_.reseed_every > 0 && trained_steps_ % cfg_.reseed_every == 0) {
        for (int j = 0; j < depth; ++j) {
            auto& book = books_[static_cast<size_t>(j)];
            auto& win = window_usage_[static_cast<size_t>(j)];
            for (int k = 0; k < cfg_.vocab; ++k) {
                if (win[static_cast<size_t>(k)] == 0) {
                    const int row = std::uniform_int_distribution<int>(0, rows - 1)(rng);
                    for (int i = 0; i < c; ++i) {
                        const float v = static_cast<float>(layer_in[static_cast<size_t>(j)][static_cast<size_t>(row) * c + i]);
                        book.table.row(k)[i] = v;
                        ema_sum_[static_cast<size_t>(j)].row(k)[i] = v;
                    }
                    ema_count_[static_cast<size_t>(j)].data[static_cast<size_t>(k)] = 1.0f;
                }
            }
            std::fill(win.begin(), win.end(), 0);
        }
    }
    return st;
}

ResidualEnergy layer_residual_energy(const LatentFeature& feature, const Tokenizer& tok) {
    if (!tok.trained()) {
        throw std::invalid_argument("layer_residual_energy: tokenizer has not been trained");
    }
    const int l = feature.length(), c = feature.dim(), r = tok.depth();
    ResidualEnergy e;
    e.per_step.assign(static_cast<size_t>(r) + 1, std::vector<double>(static_cast<size_t>(l)));
    auto books = tok.codebooks();
    std::vector<double> res(static_cast<size_t>(c));
    for (int t = 0; t < l; ++t) {
        for (int i = 0; i < c; ++i) {
            res[static_cast<size_t>(i)] = feature.values.row(t)[i];
        }
        for (int j = 0; j <= r; ++j) {
            double s = 0;
            for (double v : res) {
                s += v * v;
            }
            e.per_step[static_cast<size_t>(j)][static_cast<size_t>(t)] = s;
            if (j < r) {
                res = quantize_layer(std::span<const double>(res), books[static_cast<size_t>(j)]).next_residual;
            }
        }
    }
    for (const auto& row : e.per_step) {
        e.mean.push_back(std::accumulate(row.begin(), row.end(), 0.0) / std::max<size_t>(row.size(), 1));
        std::vector<double> tmp = row;
        std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2), tmp.end());
        e.median.push_back(tmp.empty() ? 0.0 : tmp[tmp.size() / 2]);
    }
    return e;
}

ResidualEnergy Tokenizer::residual_energy(const data::Waveform& w) const {
    return layer_residual_energy(encode(w), *this);
}

void continue_training(Tokenizer& tok, const std::vector<data::Example>& clips, int steps,
                       const TokenizerProgress& progress) {
    if (clips.empty()) {
        throw std::invalid_argument("train_tokenizer: dataset is empty");
    }
    const auto& cfg = tok.config();
    nn::Rng rng(nn::derive_seed(cfg.seed, 0xda7a, static_cast<uint64_t>(tok.trained_steps())));
    const int hop = cfg.hop();
    for (int s = 0; s < steps; ++s) {
        std::vector<std::vector<float>> crops;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& w = clips[std::uniform_int_distribution<size_t>(0, clips.size() - 1)(rng)].wave.samples;
            const int n = static_cast<int>(w.size());
            const int crop = std::min(cfg.crop, n - n % hop);
            if (crop <= 0) {
                throw std::invalid_argument("train_tokenizer: clip shorter than one hop");
            }
            const int start = std::uniform_int_distribution<int>(0, n - crop)(rng);
            crops.emplace_back(w.begin() + start, w.begin() + start + crop);
        }
        auto st = tok.train_step(crops, rng);
        if (progress) {
            progress(TrainLog{static_cast<int>(tok.trained_steps()), st.loss, st.recon});
        }
    }
}

Tokenizer train_tokenizer(const std::vector<data::Example>& clips, const TokenizerConfig& cfg,
                          const TokenizerProgress& progress) {
    Tokenizer tok(cfg);
    continue_training(tok, clips, cfg.steps, progress);
    return tok;
}

double reconstruction_mse(const Tokenizer& tok, const std::vector<data::Example>& clips, int r) {
    if (clips.empty()) {
        throw std::invalid_argument("reconstruction_mse: no clips");
    }
    double total = 0;
    for (const auto& ex : clips) {
        auto y = tok.reconstruct(ex.wave, r);
        double s = 0;
        for (size_t i = 0; i < y.samples.size(); ++i) {
            const double e = static_cast<double>(y.samples[i]) - ex.wave.samples[i];
            s += e * e;
        }
        total += s / static_cast<double>(y.samples.size());
    }
    return total / static_cast<double>(clips.size());
}

std::vector<double> codebook_usage(const Tokenizer& tok, const std::vector<data::Example>& clips) {
    const int r = tok.depth(), v = tok.config().vocab;
    std::vector<std::vector<char>> seen(static_cast<size_t>(r), std::vector<char>(static_cast<size_t>(v), 0));
    for (const auto& ex : clips) {
        auto grid = tok.codes(ex.wave);
        for (int j = 0; j < r; ++j) {
            for (int t = 0; t < grid.length; ++t) {
                seen[static_cast<size_t>(j)][static_cast<size_t>(grid.at(j, t))] = 1;
            }
        }
    }
    std::vector<double> out;
    for (const auto& s : seen) {
        out.push_back(static_cast<double>(std::count(s.begin(), s.end(), 1)) / v);
    }
    return out;
}

}  // namespace siren::rvq
