#include "siren/analysis/analysis.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "siren/nn/ops.h"
#include "siren/nn/optim.h"

namespace siren::analysis {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::optional<double> cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("cosine: vectors differ in length");
    }
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        return std::nullopt;
    }
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double angle_degrees(std::span<const float> a, std::span<const float> b) {
    const auto c = cosine(a, b);
    if (!c) {
        throw std::invalid_argument("angle of a zero vector is undefined");
    }
    return std::acos(*c) * 180.0 / std::numbers::pi;
}

void Histogram::add(double v) {
    if (counts.empty()) {
        return;
    }
    const int bins = static_cast<int>(counts.size());
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    counts[static_cast<size_t>(b)] += 1;
}

int64_t Histogram::total() const {
    int64_t t = 0;
    for (auto c : counts) {
        t += c;
    }
    return t;
}

const char* cosine_mode_name(CosineMode m) { return m == CosineMode::per_step ? "per_step" : "pooled"; }

std::vector<std::vector<std::vector<float>>> layer_features(const rvq::Tokenizer& tok, const data::Waveform& w,
                                                            int depth) {
    const auto grid = tok.codes(w, depth);
    auto books = tok.codebooks();
    std::vector<std::vector<std::vector<float>>> out(static_cast<size_t>(depth));
    for (int j = 0; j < depth; ++j) {
        for (int t = 0; t < grid.length; ++t) {
            out[static_cast<size_t>(j)].push_back(rvq::lookup(books[static_cast<size_t>(j)], grid.at(j, t)));
        }
    }
    return out;
}

namespace {

int resolve_depth(const rvq::Tokenizer& tok, int depth) {
    if (!tok.trained()) {
        throw std::invalid_argument("analysis requires a trained tokenizer");
    }
    if (depth < 0) {
        return tok.depth();
    }
    if (depth < 1 || depth > tok.depth()) {
        throw std::invalid_argument("analysis depth outside [1, tokenizer depth]");
    }
    return depth;
}

std::vector<float> time_mean(const std::vector<std::vector<float>>& rows) {
    std::vector<double> acc(rows.front().size(), 0.0);
    for (const auto& r : rows) {
        for (size_t i = 0; i < r.size(); ++i) {
            acc[i] += r[i];
        }
    }
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) {
        out[i] = static_cast<float>(acc[i] / static_cast<double>(rows.size()));
    }
    return out;
}

void check_balance(const std::vector<data::Example>& clips, const char* what) {
    std::vector<int> hist(static_cast<size_t>(data::kNumClasses), 0);
    for (const auto& ex : clips) {
        hist.at(static_cast<size_t>(ex.cond.class_id)) += 1;
    }
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    if (*hi - *lo > 1) {
        throw std::invalid_argument(std::string(what) + " clips are class-imbalanced (spread " +
                                    std::to_string(*hi - *lo) + " > 1)");
    }
}

}  // namespace

CosineStats layer_cosine_stats(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips, CosineMode mode,
                               int depth) {
    depth = resolve_depth(tok, depth);
    if (clips.empty()) {
        throw std::invalid_argument("layer_cosine_stats: no clips");
    }
    CosineStats st;
    st.mode = mode;
    st.self_cosine_min = 2.0;
    st.self_cosine_max = -2.0;
    double abs_sum = 0.0;
    int64_t abs_n = 0;
    auto record = [&](int j1, int j2, std::span<const float> a, std::span<const float> b) {
        const auto c = cosine(a, b);
        if (!c) {
            return;
        }
        auto& iv = st.by_interval[std::abs(j1 - j2)];
        iv.count += 1;
        iv.mean += *c;
        iv.mean_abs += std::abs(*c);
        iv.hist.add(*c);
        if (j1 == j2) {
            st.self_cosine_min = std::min(st.self_cosine_min, *c);
            st.self_cosine_max = std::max(st.self_cosine_max, *c);
        } else {
            abs_sum += std::abs(*c);
            abs_n += 1;
        }
    };
    for (const auto& ex : clips) {
        const auto feats = layer_features(tok, ex.wave, depth);
        if (mode == CosineMode::per_step) {
            const size_t len = feats.front().size();
            for (size_t t = 0; t < len; ++t) {
                for (int j1 = 0; j1 < depth; ++j1) {
                    for (int j2 = j1; j2 < depth; ++j2) {
                        record(j1, j2, feats[static_cast<size_t>(j1)][t], feats[static_cast<size_t>(j2)][t]);
                    }
                }
            }
        } else {
            std::vector<std::vector<float>> pooled;
            for (const auto& layer : feats) {
                pooled.push_back(time_mean(layer));
            }
            for (int j1 = 0; j1 < depth; ++j1) {
                for (int j2 = j1; j2 < depth; ++j2) {
                    record(j1, j2, pooled[static_cast<size_t>(j1)], pooled[static_cast<size_t>(j2)]);
                }
            }
        }
    }
    for (auto& [k, iv] : st.by_interval) {
        if (iv.count > 0) {
            iv.mean /= static_cast<double>(iv.count);
            iv.mean_abs /= static_cast<double>(iv.count);
        }
    }
    st.mean_abs_distinct = abs_n > 0 ? abs_sum / static_cast<double>(abs_n) : 0.0;
    return st;
}

AngleStats angle_stats(const std::vector<std::vector<float>>& vectors) {
    if (vectors.size() < 2) {
        throw std::invalid_argument("angle_stats needs at least two vectors");
    }
    AngleStats st;
    for (size_t a = 0; a < vectors.size(); ++a) {
        for (size_t b = a + 1; b < vectors.size(); ++b) {
            const double ang = angle_degrees(vectors[a], vectors[b]);
            st.angles.push_back(ang);
            st.hist.add(ang);
        }
    }
    double s = 0.0;
    for (double v : st.angles) {
        s += v;
    }
    st.mean = s / static_cast<double>(st.angles.size());
    st.min = *std::min_element(st.angles.begin(), st.angles.end());
    st.max = *std::max_element(st.angles.begin(), st.angles.end());
    return st;
}

std::vector<std::vector<float>> head_input_gradients(lm::CodeModel& baseline, const lm::CodeModel::Batch& batch) {
    if (baseline.has_decoder() || baseline.owned() < 2) {
        throw std::invalid_argument("gradient hooks are only available on the shared multi-head baseline");
    }
    return lm::head_gradients(baseline, batch);
}

AngleStats gradient_angle_stats(lm::CodeModel& baseline, const lm::CodeModel::Batch& batch) {
    return angle_stats(head_input_gradients(baseline, batch));
}

double probe_accuracy(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& test_x,
                      const std::vector<int>& test_y, const ProbeConfig& cfg) {
    const int n = train_x.rows(), d = train_x.cols();
    if (n == 0 || test_x.rows() == 0 || static_cast<int>(train_y.size()) != n ||
        static_cast<int>(test_y.size()) != test_x.rows() || test_x.cols() != d) {
        throw std::invalid_argument("probe_accuracy: inconsistent inputs");
    }
    std::vector<double> mu(static_cast<size_t>(d), 0.0), inv(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
        double s = 0.0, ss = 0.0;
        for (int i = 0; i < n; ++i) {
            s += train_x.row(i)[j];
        }
        mu[static_cast<size_t>(j)] = s / n;
        for (int i = 0; i < n; ++i) {
            const double e = train_x.row(i)[j] - mu[static_cast<size_t>(j)];
            ss += e * e;
        }
        inv[static_cast<size_t>(j)] = 1.0 / std::sqrt(ss / n + 1e-12);
    }
    auto standardise = [&](const Tensor& x) {
        Tensor y(x.shape);
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < d; ++j) {
                y.row(i)[j] = static_cast<float>((x.row(i)[j] - mu[static_cast<size_t>(j)]) * inv[static_cast<size_t>(j)]);
            }
        }
        return y;
    };
    const Tensor xs = standardise(train_x), xt = standardise(test_x);

    nn::Rng rng(cfg.seed);
    nn::ParameterStore ps;
    ps.add("w1", nn::normal_tensor<float>({d, cfg.hidden}, 1.0 / std::sqrt(d), rng));
    ps.add("b1", Tensor({cfg.hidden}));
    ps.add("w2", nn::normal_tensor<float>({cfg.hidden, data::kNumClasses}, 1.0 / std::sqrt(cfg.hidden), rng));
    ps.add("b2", Tensor({data::kNumClasses}));
    auto forward = [&](Graph& g, Var x) {
        Var h = nn::gelu(g, nn::linear(g, x, g.param(ps.at("w1")), g.param(ps.at("b1"))));
        return nn::linear(g, h, g.param(ps.at("w2")), g.param(ps.at("b2")));
    };
    nn::AdamWState state;
    nn::AdamWConfig acfg;
    acfg.lr = cfg.lr;
    acfg.weight_decay = 1e-2f;
    auto params = ps.pointers();
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int b = std::min(cfg.batch, n);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(static_cast<size_t>(b)), y(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            idx[static_cast<size_t>(i)] = pick(rng);
            y[static_cast<size_t>(i)] = train_y[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        }
        ps.zero_grad();
        Graph g;
        Var loss = nn::cross_entropy(g, forward(g, nn::gather_rows(g, g.view(xs), idx)), y);
        g.backward(loss);
        nn::adamw_step(params, state, acfg);
    }
    Graph g(false);
    const auto& logits = g.value(forward(g, g.view(xt)));
    int hit = 0;
    for (int i = 0; i < xt.rows(); ++i) {
        const float* row = logits.row(i);
        const int arg = static_cast<int>(std::max_element(row, row + logits.cols()) - row);
        hit += arg == test_y[static_cast<size_t>(i)] ? 1 : 0;
    }
    return static_cast<double>(hit) / xt.rows();
}

std::vector<Tensor> pooled_layer_features(const rvq::Tokenizer& tok, const std::vector<data::Example>& clips,
                                          int depth) {
    depth = resolve_depth(tok, depth);
    const int c = tok.config().code_dim;
    std::vector<Tensor> out(static_cast<size_t>(depth), Tensor({static_cast<int>(clips.size()), c}));
    for (size_t i = 0; i < clips.size(); ++i) {
        const auto feats = layer_features(tok, clips[i].wave, depth);
        for (int j = 0; j < depth; ++j) {
            const auto m = time_mean(feats[static_cast<size_t>(j)]);
            std::copy(m.begin(), m.end(), out[static_cast<size_t>(j)].row(static_cast<int>(i)));
        }
    }
    return out;
}

std::vector<double> semantic_probe_accuracy(const rvq::Tokenizer& tok, const std::vector<data::Example>& train,
                                            const std::vector<data::Example>& heldout, const ProbeConfig& cfg,
                                            int depth) {
    depth = resolve_depth(tok, depth);
    if (train.empty() || heldout.empty()) {
        throw std::invalid_argument("probe needs training and held-out clips");
    }
    check_balance(train, "probe training");
    check_balance(heldout, "probe held-out");
    for (const auto& a : train) {
        for (const auto& b : heldout) {
            if (a.identity == b.identity) {
                throw std::invalid_argument("probe training and held-out clips overlap");
            }
        }
    }
    std::vector<int> ytr, yte;
    for (const auto& ex : train) {
        ytr.push_back(ex.cond.class_id);
    }
    for (const auto& ex : heldout) {
        yte.push_back(ex.cond.class_id);
    }
    const auto ftr = pooled_layer_features(tok, train, depth);
    const auto fte = pooled_layer_features(tok, heldout, depth);
    std::vector<double> acc;
    for (int j = 0; j < depth; ++j) {
        ProbeConfig pc = cfg;
        pc.seed = nn::derive_seed(cfg.seed, static_cast<uint64_t>(j));
        acc.push_back(probe_accuracy(ftr[static_cast<size_t>(j)], ytr, fte[static_cast<size_t>(j)], yte, pc));
    }
    return acc;
}

double chance_probe_accuracy(const std::vector<int>& train_y, const std::vector<int>& test_y, int dim,
                             const ProbeConfig& cfg) {
    nn::Rng rng(nn::derive_seed(cfg.seed, 0xc4a));
    const Tensor xtr = nn::normal_tensor<float>({static_cast<int>(train_y.size()), dim}, 1.0, rng);
    const Tensor xte = nn::normal_tensor<float>({static_cast<int>(test_y.size()), dim}, 1.0, rng);
    return probe_accuracy(xtr, train_y, xte, test_y, cfg);
}

std::vector<double> ema_smooth(const std::vector<double>& x, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("smoothing factor must lie in (0, 1]");
    }
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = i == 0 ? x[0] : (1.0 - alpha) * out[i - 1] + alpha * x[i];
    }
    return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("spearman needs two equal-length series of at least 2 values");
    }
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return std::nullopt;
    }
    return sab / std::sqrt(saa * sbb);
}

ConvergenceReport convergence_report(const std::vector<lm::LossRecord>& records, double alpha) {
    std::map<int, std::vector<std::pair<int, double>>> by_layer;
    for (const auto& r : records) {
        by_layer[r.layer].emplace_back(r.step, r.ce);
    }
    if (by_layer.size() < 2) {
        throw std::invalid_argument("convergence_report needs at least 2 logged layers");
    }
    const int first = by_layer.begin()->first, last = by_layer.rbegin()->first;
    if (last - first + 1 != static_cast<int>(by_layer.size())) {
        throw std::invalid_argument("convergence_report: missing layers between " + std::to_string(first) + " and " +
                                    std::to_string(last));
    }
    ConvergenceReport rep;
    std::vector<double> depth;
    for (auto& [layer, pts] : by_layer) {
        std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<int> steps;
        std::vector<double> ce;
        for (const auto& [s, v] : pts) {
            steps.push_back(s);
            ce.push_back(v);
        }
        auto sm = ema_smooth(ce, alpha);
        rep.layers.push_back(layer);
        rep.final_loss.push_back(sm.back());
        rep.steps.push_back(std::move(steps));
        rep.smoothed.push_back(std::move(sm));
        depth.push_back(layer);
    }
    const auto rho = spearman(depth, rep.final_loss);
    rep.degenerate = !rho.has_value();
    rep.spearman = rho.value_or(0.0);
    return rep;
}

std::string structure_group(const std::string& name) {
    if (name.rfind("ctx.", 0) == 0 || name.rfind("cond.", 0) == 0) return "embedding";
    if (name.rfind("bb.", 0) == 0) return "backbone";
    if (name.rfind("dec.", 0) == 0) return "residual_decoder";
    if (name.rfind("head.", 0) == 0) return "classifier";
    throw std::invalid_argument("parameter '" + name + "' belongs to no known structure group");
}

std::vector<GroupSimilarity> task_vector_similarity(const nn::ParameterStore& init,
                                                    const std::vector<const nn::ParameterStore*>& trained) {
    if (trained.size() < 2) {
        throw std::invalid_argument("task_vector_similarity needs at least two trained models");
    }
    const std::vector<std::string> groups = {"embedding", "backbone", "residual_decoder", "classifier"};
    // vectors[model][group]
    std::vector<std::map<std::string, std::vector<float>>> vecs(trained.size());
    for (size_t k = 0; k < trained.size(); ++k) {
        const auto& ps = *trained[k];
        if (ps.size() != init.size()) {
            throw std::invalid_argument("model " + std::to_string(k) + " has a different parameter set than init");
        }
        for (const auto& p : init) {
            const int qi = ps.find(p.name);
            const nn::Parameter* q = qi < 0 ? nullptr : &ps[qi];
            if (q == nullptr || q->value.shape != p.value.shape) {
                throw std::invalid_argument("model " + std::to_string(k) + " has no matching parameter '" + p.name +
                                            "'");
            }
            auto& v = vecs[k][structure_group(p.name)];
            for (size_t i = 0; i < p.value.data.size(); ++i) {
                v.push_back(q->value.data[i] - p.value.data[i]);
            }
        }
    }
    std::vector<GroupSimilarity> out;
    for (const auto& gname : groups) {
        if (vecs.front().count(gname) == 0) {
            continue;
        }
        GroupSimilarity gs;
        gs.group = gname;
        std::vector<double> vals;
        for (size_t a = 0; a < trained.size(); ++a) {
            for (size_t b = a + 1; b < trained.size(); ++b) {
                const auto c = cosine(vecs[a][gname], vecs[b][gname]);
                gs.pairwise.push_back(c);
                if (c) {
                    vals.push_back(*c);
                } else {
                    gs.flagged += 1;
                }
            }
        }
        if (!vals.empty()) {
            std::sort(vals.begin(), vals.end());
            const size_t m = vals.size() / 2;
            gs.median = vals.size() % 2 == 1 ? vals[m] : 0.5 * (vals[m - 1] + vals[m]);
        }
        out.push_back(std::move(gs));
    }
    return out;
}

nlohmann::json AnalysisReport::to_json() const { return {{"metadata", metadata}, {"tables", tables}}; }

AnalysisReport AnalysisReport::from_json(const nlohmann::json& j) {
    AnalysisReport r;
    r.metadata = j.at("metadata");
    r.tables = j.at("tables");
    return r;
}

namespace {

nlohmann::json hist_json(const Histogram& h) { return {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}}; }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const CosineStats& s) {
    nlohmann::json iv = nlohmann::json::array();
    for (const auto& [k, v] : s.by_interval) {
        iv.push_back({{"interval", k},
                      {"count", v.count},
                      {"mean", v.mean},
                      {"mean_abs", v.mean_abs},
                      {"histogram", hist_json(v.hist)}});
    }
    return {{"mode", cosine_mode_name(s.mode)},
            {"mean_abs_distinct", s.mean_abs_distinct},
            {"self_cosine_min", s.self_cosine_min},
            {"self_cosine_max", s.self_cosine_max},
            {"intervals", iv}};
}

nlohmann::json to_json(const AngleStats& s) {
    return {{"angles", s.angles}, {"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"histogram", hist_json(s.hist)}};
}

nlohmann::json to_json(const ConvergenceReport& r) {
    nlohmann::json curves = nlohmann::json::array();
    for (size_t i = 0; i < r.layers.size(); ++i) {
        curves.push_back({{"layer", r.layers[i]}, {"steps", r.steps[i]}, {"smoothed", r.smoothed[i]}});
    }
    return {{"curves", curves}, {"final_loss", r.final_loss}, {"spearman", r.spearman}, {"degenerate", r.degenerate}};
}

nlohmann::json to_json(const std::vector<GroupSimilarity>& g) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : g) {
        nlohmann::json pw = nlohmann::json::array();
        for (const auto& v : s.pairwise) {
            pw.push_back(opt_json(v));
        }
        out.push_back({{"group", s.group}, {"pairwise", pw}, {"median", opt_json(s.median)}, {"flagged", s.flagged}});
    }
    return out;
}

}  // namespace siren::analysis
