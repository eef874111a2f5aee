#include "siren/lm/train.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include "siren/nn/ops.h"

namespace siren::lm {

TokenSet tokenize_split(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips, int depth) {
    TokenSet out;
    out.grids.reserve(clips.size());
    out.classes.reserve(clips.size());
    for (const auto& ex : clips) {
        out.grids.push_back(tok.codes(ex.wave, depth));
        out.classes.push_back(ex.cond.class_id);
    }
    return out;
}

std::vector<Tensor> codebook_tables(const rvq::Tokenizer& tok, int depth) {
    auto books = tok.codebooks();
    if (depth > static_cast<int>(books.size())) {
        throw std::invalid_argument("tokenizer has " + std::to_string(books.size()) + " codebooks, need " +
                                    std::to_string(depth));
    }
    std::vector<Tensor> out;
    for (int j = 0; j < depth; ++j) {
        out.push_back(books[static_cast<size_t>(j)].table);
    }
    return out;
}

std::vector<CodeModel> make_group(const LmConfig& cfg, const std::vector<Tensor>& codebooks) {
    cfg.validate();
    std::vector<CodeModel> group;
    for (int k = 0; k < cfg.models(); ++k) {
        group.push_back(CodeModel::collaborative(cfg, k, codebooks));
    }
    return group;
}

namespace {


CodeModel::Batch draw_batch(const TokenSet& data, const TrainOptions& opts, int max_len, nn::Rng& rng) {
    CodeModel::Batch b;
    std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
    const int len = data.grids.front().length;
    const int w = opts.window > 0 ? std::min({opts.window, len, max_len}) : std::min(len, max_len);
    b.window = w;
    std::uniform_int_distribution<int> start(0, std::min(len, max_len) - w);
    for (int i = 0; i < opts.batch; ++i) {
        const size_t idx = pick(rng);
        b.grids.push_back(&data.grids[idx]);
        b.classes.push_back(data.classes[idx]);
        b.starts.push_back(start(rng));
    }
    return b;
}

double lr_at(const TrainOptions& opts, int step) {
    if (opts.warmup > 0 && step < opts.warmup) {
        return opts.lr * (step + 1) / opts.warmup;
    }
    const double span = std::max(1, opts.steps - opts.warmup);
    const double prog = std::clamp((step - opts.warmup) / span, 0.0, 1.0);
    const double cosv = 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
    return opts.lr * (opts.min_lr_frac + (1.0 - opts.min_lr_frac) * cosv);
}

void check_data(const CodeModel& model, const TokenSet& data, const char* what) {
    if (data.size() == 0) {
        throw std::invalid_argument(std::string(what) + " token set is empty");
    }
    const int len = data.grids.front().length;
    for (const auto& g : data.grids) {
        if (g.layers < model.config().depth) {
            throw std::invalid_argument(std::string(what) + " grids have fewer layers than the model depth");
        }
        if (g.length != len) {
            throw std::invalid_argument(std::string(what) + " grids differ in length");
        }
    }
}

void record_eval(const CodeModel& model, const TokenSet& eval, const TrainOptions& opts, int step,
                 TrainHistory& hist) {
    if (eval.size() == 0) {
        return;
    }
    const auto ce = evaluate(model, eval, opts.eval_items);
    for (int p = 0; p < model.owned(); ++p) {
        hist.eval.push_back({step, model.owned_layer(p), ce[static_cast<size_t>(p)]});
    }
}

}  // namespace

std::vector<double> evaluate(const CodeModel& model, const TokenSet& data, int max_items) {
    const int n = max_items > 0 ? std::min(static_cast<int>(data.size()), max_items) : static_cast<int>(data.size());
    std::vector<double> total(static_cast<size_t>(model.owned()), 0.0);
    if (n == 0) {
        throw std::invalid_argument("evaluate: empty token set");
    }
    const int len = std::min(data.grids.front().length, model.config().max_len);
    const int chunk = 8;
    for (int s = 0; s < n; s += chunk) {
        CodeModel::Batch b;
        b.window = len;
        for (int i = s; i < std::min(n, s + chunk); ++i) {
            b.grids.push_back(&data.grids[static_cast<size_t>(i)]);
            b.classes.push_back(data.classes[static_cast<size_t>(i)]);
            b.starts.push_back(0);
        }
        Graph g(false);
        auto out = model.forward(g, b);
        for (int p = 0; p < model.owned(); ++p) {
            Var ce = nn::cross_entropy(g, out.logits[static_cast<size_t>(p)], out.targets[static_cast<size_t>(p)]);
            total[static_cast<size_t>(p)] += g.value(ce).data[0] * static_cast<double>(b.grids.size());
        }
    }
    for (auto& t : total) {
        t /= n;
    }
    return total;
}

std::vector<std::vector<float>> head_gradients(CodeModel& model, const CodeModel::Batch& batch) {
    auto& ps = model.params();
    nn::Parameter& w = ps.at("bb." + std::to_string(model.config().backbone_layers - 1) + ".mlp.w2");
    // Preserve any gradient already accumulated by the caller.
    std::vector<Tensor> saved;
    for (auto& p : ps) {
        saved.push_back(p.grad);
    }
    const int in = w.value.rows(), out_dim = w.value.cols();
    std::vector<std::vector<float>> out;
    for (int p = 0; p < model.owned(); ++p) {
        ps.zero_grad();
        Graph g;
        auto fw = model.forward(g, batch);
        Var ce = nn::cross_entropy(g, fw.logits[static_cast<size_t>(p)], fw.targets[static_cast<size_t>(p)]);
        g.backward(ce);
        std::vector<float> v(static_cast<size_t>(in));
        for (int i = 0; i < in; ++i) {
            double s = 0.0;
            for (int j = 0; j < out_dim; ++j) {
                s += w.grad.row(i)[j];
            }
            v[static_cast<size_t>(i)] = static_cast<float>(s / out_dim);
        }
        out.push_back(std::move(v));
    }
    size_t i = 0;
    for (auto& p : ps) {
        p.grad = std::move(saved[i++]);
    }
    return out;
}

TrainHistory train_model(CodeModel& model, const TokenSet& train, const TokenSet& eval, const TrainOptions& opts,
                         const TrainHooks& hooks) {
    check_data(model, train, "training");
    if (eval.size() > 0) {
        check_data(model, eval, "evaluation");
    }
    if (opts.steps < 0 || opts.batch < 1) {
        throw std::invalid_argument("train_model: steps must be >= 0 and batch >= 1");
    }
    TrainHistory hist;
    nn::Rng rng(nn::derive_seed(opts.seed, static_cast<uint64_t>(model.first_layer()),
                                model.has_decoder() ? 1 : 2));
    nn::AdamWState state;
    auto params = model.params().pointers();
    nn::AdamWConfig acfg;
    acfg.weight_decay = static_cast<float>(opts.weight_decay);

    for (int step = 0; step < opts.steps; ++step) {
        if (opts.eval_every > 0 && step % opts.eval_every == 0) {
            record_eval(model, eval, opts, step, hist);
        }
        auto batch = draw_batch(train, opts, model.config().max_len, rng);
        if (hooks.on_gradients && opts.capture_every > 0 && step % opts.capture_every == 0) {
            hooks.on_gradients(step, head_gradients(model, batch));
        }
        model.params().zero_grad();
        Graph g;
        auto out = model.forward(g, batch);
        std::vector<Var> terms;
        double total = 0.0;
        for (int p = 0; p < model.owned(); ++p) {
            Var ce = nn::cross_entropy(g, out.logits[static_cast<size_t>(p)], out.targets[static_cast<size_t>(p)]);
            const double v = g.value(ce).data[0];
            if (!std::isfinite(v)) {
                throw std::runtime_error("lm training diverged at step " + std::to_string(step) + " (layer " +
                                         std::to_string(model.owned_layer(p)) + " loss " + std::to_string(v) +
                                         ")");
            }
            hist.train.push_back({step, model.owned_layer(p), v});
            total += v;
            terms.push_back(ce);
        }
        Var loss = terms.size() == 1 ? terms.front() : nn::sum(g, nn::concat_rows(g, terms));
        g.backward(loss);
        if (opts.clip > 0) {
            const double norm = nn::clip_grad_norm(params, opts.clip);
            if (!std::isfinite(norm)) {
                throw std::runtime_error("lm training diverged at step " + std::to_string(step) +
                                         " (non-finite gradient)");
            }
        }
        acfg.lr = static_cast<float>(lr_at(opts, step));
        nn::adamw_step(params, state, acfg);
        if (hooks.on_step) {
            hooks.on_step(step, total);
        }
    }
    record_eval(model, eval, opts, opts.steps, hist);
    return hist;
}

TrainHistory train_group(std::vector<CodeModel>& models, const TokenSet& train, const TokenSet& eval,
                         const TrainOptions& opts, const TrainHooks& hooks) {
    TrainHistory all;
    for (auto& m : models) {
        auto h = train_model(m, train, eval, opts, hooks);
        all.train.insert(all.train.end(), h.train.begin(), h.train.end());
        all.eval.insert(all.eval.end(), h.eval.begin(), h.eval.end());
    }
    auto order = [](const LossRecord& a, const LossRecord& b) {
        return a.step != b.step ? a.step < b.step : a.layer < b.layer;
    };
    std::stable_sort(all.train.begin(), all.train.end(), order);
    std::stable_sort(all.eval.begin(), all.eval.end(), order);
    return all;
}

LossBalance loss_balance_metrics(const std::vector<LossRecord>& records, int depth) {
    if (depth < 1) {
        throw std::invalid_argument("loss_balance_metrics: depth must be >= 1");
    }
    std::map<int, std::map<int, double>> by_step;
    std::vector<bool> seen(static_cast<size_t>(depth), false);
    for (const auto& r : records) {
        if (r.layer < 0 || r.layer >= depth) {
            throw std::out_of_range("loss record layer " + std::to_string(r.layer) + " outside [0, depth)");
        }
        by_step[r.step][r.layer] = r.ce;
        seen[static_cast<size_t>(r.layer)] = true;
    }
    for (int j = 0; j < depth; ++j) {
        if (!seen[static_cast<size_t>(j)]) {
            throw std::invalid_argument("loss history missing layer " + std::to_string(j));
        }
    }
    LossBalance best;
    bool found = false;
    for (const auto& [step, layers] : by_step) {
        if (static_cast<int>(layers.size()) != depth) {
            continue;
        }
        double mean = 0.0;
        for (const auto& [j, ce] : layers) {
            mean += ce;
        }
        mean /= depth;
        if (!found || mean < best.loss_mean) {
            best.loss_mean = mean;
            best.step = step;
            found = true;
        }
    }
    if (!found) {
        throw std::invalid_argument("no checkpoint has losses for every layer");
    }
    const auto& at = by_step[best.step];
    const double first = at.at(0);
    if (first == 0.0) {
        throw std::domain_error("loss ratio undefined: layer 0 loss is zero at step " + std::to_string(best.step));
    }
    best.loss_ratio = at.at(depth - 1) / first;
    return best;
}

}  // namespace siren::lm
