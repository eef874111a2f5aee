#include "siren/lm/model.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "siren/nn/kernels.h"
#include "siren/nn/ops.h"

namespace siren::lm {

namespace k = nn::kernels;

const char* mode_name(ConditionMode m) {
    switch (m) {
        case ConditionMode::independent:
            return "independent";
        case ConditionMode::residual_prev:
            return "residual_prev";
        case ConditionMode::accumulated:
            return "accumulated";
    }
    return "?";
}

ConditionMode parse_mode(const std::string& s) {
    if (s == "independent") return ConditionMode::independent;
    if (s == "residual_prev") return ConditionMode::residual_prev;
    if (s == "accumulated") return ConditionMode::accumulated;
    throw std::invalid_argument("unknown condition mode '" + s +
                                "' (expected independent, residual_prev or accumulated)");
}

void LmConfig::validate() const {
    if (depth < 1) {
        throw std::invalid_argument("lm depth r must be >= 1");
    }
    if (codes_per_model < 1 || depth % codes_per_model != 0) {
        throw std::invalid_argument("codes_per_model m=" + std::to_string(codes_per_model) +
                                    " must divide r=" + std::to_string(depth));
    }
    if (width % heads != 0) {
        throw std::invalid_argument("width must be divisible by heads");
    }
    if (vocab < 1 || code_dim < 1 || max_len < 1 || num_classes < 1 || backbone_layers < 1) {
        throw std::invalid_argument("lm sizes must be positive");
    }
}

CodeModel::CodeModel(const LmConfig& cfg, int first_layer, int owned, bool use_decoder,
                     std::vector<Tensor> codebooks)
    : cfg_(cfg), first_(first_layer), owned_(owned), use_decoder_(use_decoder), books_(std::move(codebooks)) {
    cfg_.validate();
    if (first_ < 0 || owned_ < 1 || first_ + owned_ > cfg_.depth) {
        throw std::invalid_argument("model owns layers outside [0, r)");
    }
    if (static_cast<int>(books_.size()) < cfg_.depth) {
        throw std::invalid_argument("model needs all " + std::to_string(cfg_.depth) + " codebooks, got " +
                                    std::to_string(books_.size()));
    }
    for (const auto& b : books_) {
        if (b.rows() != cfg_.vocab || b.cols() != cfg_.code_dim) {
            throw std::invalid_argument("codebook shape " + nn::shape_string(b.shape) + " does not match lm config");
        }
    }
    init_params();
}

CodeModel CodeModel::collaborative(const LmConfig& cfg, int k, std::vector<Tensor> codebooks) {
    cfg.validate();
    if (k < 0 || k >= cfg.models()) {
        throw std::invalid_argument("model index " + std::to_string(k) + " outside [0, " +
                                    std::to_string(cfg.models()) + ")");
    }
    return CodeModel(cfg, k * cfg.codes_per_model, cfg.codes_per_model, true, std::move(codebooks));
}

CodeModel CodeModel::baseline(const LmConfig& cfg, std::vector<Tensor> codebooks) {
    return CodeModel(cfg, 0, cfg.depth, false, std::move(codebooks));
}

void CodeModel::init_params() {
    const int w = cfg_.width, c = cfg_.code_dim, hid = w * cfg_.mlp_ratio;
    nn::Rng rng(nn::derive_seed(cfg_.init_seed, use_decoder_ ? 1 : 2, static_cast<uint64_t>(owned_)));
    auto normal = [&](std::vector<int> shape, double sd) { return nn::normal_tensor<float>(std::move(shape), sd, rng); };
    const double out_sd = 0.02 / std::sqrt(2.0 * cfg_.backbone_layers);

    params_.add("ctx.start", normal({1, w}, 0.02));
    params_.add("ctx.proj.w", normal({c, w}, 1.0 / std::sqrt(c)));
    params_.add("ctx.proj.b", Tensor({w}));
    params_.add("ctx.pos", normal({cfg_.max_len, w}, 0.02));
    params_.add("cond.table", normal({cfg_.num_classes, w}, 0.02));

    auto add_block = [&](const std::string& p, bool cross, double osd) {
        params_.add(p + ".ln1.g", Tensor({w}, 1.0f));
        params_.add(p + ".ln1.b", Tensor({w}));
        for (const char* n : {".attn.q", ".attn.k", ".attn.v"}) {
            params_.add(p + n, normal({w, w}, 0.02));
        }
        params_.add(p + ".attn.o", normal({w, w}, osd));
        if (cross) {
            params_.add(p + ".ln2.g", Tensor({w}, 1.0f));
            params_.add(p + ".ln2.b", Tensor({w}));
            for (const char* n : {".xattn.q", ".xattn.k", ".xattn.v"}) {
                params_.add(p + n, normal({w, w}, 0.02));
            }
            params_.add(p + ".xattn.o", normal({w, w}, osd));
        }
        params_.add(p + ".ln3.g", Tensor({w}, 1.0f));
        params_.add(p + ".ln3.b", Tensor({w}));
        params_.add(p + ".mlp.w1", normal({w, hid}, 0.02));
        params_.add(p + ".mlp.b1", Tensor({hid}));
        params_.add(p + ".mlp.w2", normal({hid, w}, osd));
        params_.add(p + ".mlp.b2", Tensor({w}));
    };
    for (int b = 0; b < cfg_.backbone_layers; ++b) {
        add_block("bb." + std::to_string(b), true, out_sd);
    }
    params_.add("bb.lnf.g", Tensor({w}, 1.0f));
    params_.add("bb.lnf.b", Tensor({w}));

    if (use_decoder_) {
        params_.add("dec.sos", normal({1, c}, 0.02));
        params_.add("dec.proj.w", normal({c, w}, 1.0 / std::sqrt(c)));
        params_.add("dec.proj.b", Tensor({w}));
        params_.add("dec.pos", normal({owned_ + 1, w}, 0.02));
        const double dsd = 0.02 / std::sqrt(2.0 * std::max(1, cfg_.decoder_layers));
        for (int b = 0; b < cfg_.decoder_layers; ++b) {
            add_block("dec." + std::to_string(b), false, dsd);
        }
        params_.add("dec.lnf.g", Tensor({w}, 1.0f));
        params_.add("dec.lnf.b", Tensor({w}));
    }
    for (int p = 0; p < owned_; ++p) {
        params_.add("head." + std::to_string(p) + ".w", normal({w, cfg_.vocab}, 0.02));
        params_.add("head." + std::to_string(p) + ".b", Tensor({cfg_.vocab}));
    }
}

Tensor CodeModel::summed_embeddings(const CodeGrid& grid) const {
    Tensor out({grid.length, cfg_.code_dim});
    for (int t = 0; t < grid.length; ++t) {
        step_embedding(grid, t, out.row(t));
    }
    return out;
}

void CodeModel::step_embedding(const CodeGrid& grid, int t, float* out) const {
    if (grid.layers != cfg_.depth) {
        throw std::invalid_argument("grid has " + std::to_string(grid.layers) + " layers, model expects " +
                                    std::to_string(cfg_.depth));
    }
    const int c = cfg_.code_dim;
    std::vector<double> acc(static_cast<size_t>(c), 0.0);
    for (int j = 0; j < grid.layers; ++j) {
        const int q = grid.at(j, t);
        if (q < 0 || q >= cfg_.vocab) {
            throw std::out_of_range("code " + std::to_string(q) + " at layer " + std::to_string(j) + ", step " +
                                    std::to_string(t) + " outside [0, " + std::to_string(cfg_.vocab) + ")");
        }
        const float* z = books_[static_cast<size_t>(j)].row(q);
        for (int i = 0; i < c; ++i) {
            acc[static_cast<size_t>(i)] += z[i];
        }
    }
    for (int i = 0; i < c; ++i) {
        out[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
    }
}

void CodeModel::required_codes(std::span<const int> same_step, int count) const {
    if (cfg_.mode == ConditionMode::independent) {
        return;
    }
    const int need = first_ + count - 1;
    if (static_cast<int>(same_step.size()) < need) {
        throw std::invalid_argument("residual decoding of layer " + std::to_string(first_ + count - 1) + " needs " +
                                    std::to_string(need) + " same-step codes, got " +
                                    std::to_string(same_step.size()));
    }
    for (int j = 0; j < need; ++j) {
        if (same_step[static_cast<size_t>(j)] < 0 || same_step[static_cast<size_t>(j)] >= cfg_.vocab) {
            throw std::out_of_range("same-step code at layer " + std::to_string(j) + " out of range");
        }
    }
}

namespace {

// Folded code sums (without sos) for owned positions 0..count-1.
void slot_sums(const std::vector<Tensor>& books, ConditionMode mode, int first, std::span<const int> same_step,
               int count, float* out, int c) {
    std::vector<double> acc(static_cast<size_t>(c));
    for (int p = 0; p < count; ++p) {
        float* o = out + static_cast<size_t>(p) * c;
        const int layer = first + p;
        std::fill(acc.begin(), acc.end(), 0.0);
        if (mode == ConditionMode::accumulated) {
            for (int j = 0; j < layer; ++j) {
                const float* z = books[static_cast<size_t>(j)].row(same_step[static_cast<size_t>(j)]);
                for (int i = 0; i < c; ++i) {
                    acc[static_cast<size_t>(i)] += z[i];
                }
            }
        } else if (mode == ConditionMode::residual_prev && layer > 0) {
            const float* z = books[static_cast<size_t>(layer - 1)].row(same_step[static_cast<size_t>(layer - 1)]);
            for (int i = 0; i < c; ++i) {
                acc[static_cast<size_t>(i)] = z[i];
            }
        }
        for (int i = 0; i < c; ++i) {
            o[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
        }
    }
}

template <typename Store>
Var block(Graph& g, Store& ps, const std::string& p, Var x, Var cond, int heads, int groups, bool causal) {
    auto P = [&](const std::string& n) { return g.param(ps.at(p + n)); };
    Var a = nn::layer_norm(g, x, P(".ln1.g"), P(".ln1.b"));
    Var q = nn::linear(g, a, P(".attn.q"));
    Var kk = nn::linear(g, a, P(".attn.k"));
    Var v = nn::linear(g, a, P(".attn.v"));
    Var att = nn::attention(g, q, kk, v, heads, groups, causal);
    x = nn::add(g, x, nn::linear(g, att, P(".attn.o")));
    if (cond.valid()) {
        Var a2 = nn::layer_norm(g, x, P(".ln2.g"), P(".ln2.b"));
        Var q2 = nn::linear(g, a2, P(".xattn.q"));
        Var ck = nn::linear(g, cond, P(".xattn.k"));
        Var cv = nn::linear(g, cond, P(".xattn.v"));
        Var att2 = nn::attention(g, q2, ck, cv, heads, groups, false);
        x = nn::add(g, x, nn::linear(g, att2, P(".xattn.o")));
    }
    Var a3 = nn::layer_norm(g, x, P(".ln3.g"), P(".ln3.b"));
    Var h = nn::gelu(g, nn::linear(g, a3, P(".mlp.w1"), P(".mlp.b1")));
    return nn::add(g, x, nn::linear(g, h, P(".mlp.w2"), P(".mlp.b2")));
}

template <typename Store>
Var decoder_stack(Graph& g, Store& ps, const LmConfig& cfg, Var seq, int groups, int rows_per_group) {
    Var x = nn::add_tiled(g, seq, g.param(ps.at("dec.pos")), rows_per_group);
    for (int b = 0; b < cfg.decoder_layers; ++b) {
        x = block(g, ps, "dec." + std::to_string(b), x, Var{}, cfg.heads, groups, true);
    }
    return nn::layer_norm(g, x, g.param(ps.at("dec.lnf.g")), g.param(ps.at("dec.lnf.b")));
}

template <typename Store>
Var backbone(Graph& g, Store& ps, const LmConfig& cfg, const Tensor& pre, const std::vector<int>& start_rows,
             const std::vector<int>& positions, const std::vector<int>& classes, int groups) {
    const int n = pre.rows();
    Var proj = nn::linear(g, g.constant(pre), g.param(ps.at("ctx.proj.w")), g.param(ps.at("ctx.proj.b")));
    std::vector<int> pick(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        pick[static_cast<size_t>(i)] = i;
    }
    for (int r : start_rows) {
        pick[static_cast<size_t>(r)] = n;
    }
    Var x = nn::gather_rows(g, nn::concat_rows(g, {proj, g.param(ps.at("ctx.start"))}), pick);
    x = nn::add(g, x, nn::gather_rows(g, g.param(ps.at("ctx.pos")), positions));
    Var cond = nn::embedding(g, g.param(ps.at("cond.table")), classes);
    for (int b = 0; b < cfg.backbone_layers; ++b) {
        x = block(g, ps, "bb." + std::to_string(b), x, cond, cfg.heads, groups, true);
    }
    return nn::layer_norm(g, x, g.param(ps.at("bb.lnf.g")), g.param(ps.at("bb.lnf.b")));
}

}  // namespace

Tensor CodeModel::conditioning_slots(std::span<const int> same_step, int count) const {
    if (!use_decoder_) {
        throw std::logic_error("model has no residual decoder");
    }
    if (count < 1 || count > owned_) {
        throw std::invalid_argument("slot count outside [1, owned]");
    }
    required_codes(same_step, count);
    const int c = cfg_.code_dim;
    Tensor out({count, c});
    slot_sums(books_, cfg_.mode, first_, same_step, count, out.data.data(), c);
    const Tensor& sos = params_.at("dec.sos").value;
    for (int p = 0; p < count; ++p) {
        for (int i = 0; i < c; ++i) {
            out.row(p)[i] = out.row(p)[i] + sos.data[static_cast<size_t>(i)];
        }
    }
    return out;
}

template <typename Self>
CodeModel::Output CodeModel::forward_impl(Self& self, Graph& g, const Batch& batch) {
    const LmConfig& cfg = self.cfg_;
    auto& ps = self.params_;
    const int b = static_cast<int>(batch.grids.size());
    const int w = batch.window;
    if (b == 0 || w < 1) {
        throw std::invalid_argument("forward: empty batch");
    }
    if (batch.classes.size() != batch.grids.size() || batch.starts.size() != batch.grids.size()) {
        throw std::invalid_argument("forward: batch fields differ in length");
    }
    const int n = b * w, c = cfg.code_dim, m = self.owned_;
    Tensor pre({n, c});
    std::vector<int> start_rows, positions(static_cast<size_t>(n));
    Output out;
    out.targets.assign(static_cast<size_t>(m), std::vector<int>(static_cast<size_t>(n)));
    Tensor slot_pre;
    if (self.use_decoder_) {
        slot_pre = Tensor({n * m, c});
    }
    std::vector<int> step_codes(static_cast<size_t>(cfg.depth));
    for (int i = 0; i < b; ++i) {
        const CodeGrid& grid = *batch.grids[static_cast<size_t>(i)];
        const int s = batch.starts[static_cast<size_t>(i)];
        if (s < 0 || s + w > grid.length || s + w > cfg.max_len) {
            throw std::invalid_argument("forward: window [" + std::to_string(s) + ", " + std::to_string(s + w) +
                                        ") outside sequence of length " + std::to_string(grid.length));
        }
        const int cls = batch.classes[static_cast<size_t>(i)];
        if (cls < 0 || cls >= cfg.num_classes) {
            throw std::out_of_range("forward: class id out of range");
        }
        Tensor sums = self.summed_embeddings(grid);
        for (int u = 0; u < w; ++u) {
            const int t = s + u, row = i * w + u;
            positions[static_cast<size_t>(row)] = t;
            if (t == 0) {
                start_rows.push_back(row);
            } else {
                std::copy(sums.row(t - 1), sums.row(t - 1) + c, pre.row(row));
            }
            for (int j = 0; j < cfg.depth; ++j) {
                step_codes[static_cast<size_t>(j)] = grid.at(j, t);
            }
            for (int p = 0; p < m; ++p) {
                out.targets[static_cast<size_t>(p)][static_cast<size_t>(row)] = grid.at(self.first_ + p, t);
            }
            if (self.use_decoder_) {
                slot_sums(self.books_, cfg.mode, self.first_, step_codes, m, slot_pre.row(row * m), c);
            }
        }
    }
    out.hidden = backbone(g, ps, cfg, pre, start_rows, positions, batch.classes, b);

    if (!self.use_decoder_) {
        for (int p = 0; p < m; ++p) {
            const std::string h = "head." + std::to_string(p);
            out.logits.push_back(nn::linear(g, out.hidden, g.param(ps.at(h + ".w")), g.param(ps.at(h + ".b"))));
        }
        return out;
    }

    Var slots = nn::add_row(g, g.constant(std::move(slot_pre)), g.param(ps.at("dec.sos")));
    slots = nn::linear(g, slots, g.param(ps.at("dec.proj.w")), g.param(ps.at("dec.proj.b")));
    std::vector<int> order;
    order.reserve(static_cast<size_t>(n) * (m + 1));
    for (int r = 0; r < n; ++r) {
        order.push_back(r);
        for (int p = 0; p < m; ++p) {
            order.push_back(n + r * m + p);
        }
    }
    Var seq = nn::gather_rows(g, nn::concat_rows(g, {out.hidden, slots}), order);
    Var dec = decoder_stack(g, ps, cfg, seq, n, m + 1);
    for (int p = 0; p < m; ++p) {
        std::vector<int> rows(static_cast<size_t>(n));
        for (int r = 0; r < n; ++r) {
            rows[static_cast<size_t>(r)] = r * (m + 1) + p + 1;
        }
        const std::string h = "head." + std::to_string(p);
        out.logits.push_back(
            nn::linear(g, nn::gather_rows(g, dec, rows), g.param(ps.at(h + ".w")), g.param(ps.at(h + ".b"))));
    }
    return out;
}

CodeModel::Output CodeModel::forward(Graph& g, const Batch& batch) { return forward_impl(*this, g, batch); }

CodeModel::Output CodeModel::forward(Graph& g, const Batch& batch) const { return forward_impl(*this, g, batch); }

CodeModel::Cache CodeModel::start_cache(int class_id) const {
    if (class_id < 0 || class_id >= cfg_.num_classes) {
        throw std::out_of_range("class id " + std::to_string(class_id) + " out of range");
    }
    const int w = cfg_.width;
    Cache cache;
    cache.class_id = class_id;
    const float* cond = params_.at("cond.table").value.row(class_id);
    for (int b = 0; b < cfg_.backbone_layers; ++b) {
        const std::string p = "bb." + std::to_string(b);
        cache.k.emplace_back(std::vector<int>{cfg_.max_len, w});
        cache.v.emplace_back(std::vector<int>{cfg_.max_len, w});
        Tensor ck({1, w}), cv({1, w});
        k::linear_forward(cond, params_.at(p + ".xattn.k").value.data.data(), static_cast<const float*>(nullptr),
                          ck.data.data(), 1, w, w);
        k::linear_forward(cond, params_.at(p + ".xattn.v").value.data.data(), static_cast<const float*>(nullptr),
                          cv.data.data(), 1, w, w);
        cache.cross_k.push_back(std::move(ck));
        cache.cross_v.push_back(std::move(cv));
    }
    return cache;
}

std::vector<float> CodeModel::step(Cache& cache, std::span<const float> prev_sum) const {
    const int t = cache.length;
    const int w = cfg_.width, c = cfg_.code_dim, hid = w * cfg_.mlp_ratio, heads = cfg_.heads, hd = w / heads;
    if (t >= cfg_.max_len) {
        throw std::out_of_range("sequence exceeds max_len");
    }
    auto V = [&](const std::string& n) { return params_.at(n).value.data.data(); };
    std::vector<float> x(static_cast<size_t>(w)), a(static_cast<size_t>(w)), q(static_cast<size_t>(w)),
        att(static_cast<size_t>(w)), o(static_cast<size_t>(w)), mh(static_cast<size_t>(hid)),
        scratch(static_cast<size_t>(cfg_.max_len));
    if (t == 0) {
        std::copy(V("ctx.start"), V("ctx.start") + w, x.begin());
    } else {
        if (static_cast<int>(prev_sum.size()) != c) {
            throw std::invalid_argument("step: previous input must have code_dim entries");
        }
        k::linear_forward(prev_sum.data(), V("ctx.proj.w"), V("ctx.proj.b"), x.data(), 1, c, w);
    }
    const float* pos = params_.at("ctx.pos").value.row(t);
    for (int i = 0; i < w; ++i) {
        x[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + pos[i];
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const float* none = nullptr;
    for (int b = 0; b < cfg_.backbone_layers; ++b) {
        const std::string p = "bb." + std::to_string(b);
        k::layer_norm_row(x.data(), V(p + ".ln1.g"), V(p + ".ln1.b"), a.data(), w, 1e-5f);
        k::linear_forward(a.data(), V(p + ".attn.q"), none, q.data(), 1, w, w);
        float* krow = cache.k[static_cast<size_t>(b)].row(t);
        float* vrow = cache.v[static_cast<size_t>(b)].row(t);
        k::linear_forward(a.data(), V(p + ".attn.k"), none, krow, 1, w, w);
        k::linear_forward(a.data(), V(p + ".attn.v"), none, vrow, 1, w, w);
        k::attention_row(q.data(), cache.k[static_cast<size_t>(b)].data.data(),
                         cache.v[static_cast<size_t>(b)].data.data(), w, t + 1, att.data(), heads, hd, scale,
                         scratch.data());
        k::linear_forward(att.data(), V(p + ".attn.o"), none, o.data(), 1, w, w);
        for (int i = 0; i < w; ++i) {
            x[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + o[static_cast<size_t>(i)];
        }
        k::layer_norm_row(x.data(), V(p + ".ln2.g"), V(p + ".ln2.b"), a.data(), w, 1e-5f);
        k::linear_forward(a.data(), V(p + ".xattn.q"), none, q.data(), 1, w, w);
        k::attention_row(q.data(), cache.cross_k[static_cast<size_t>(b)].data.data(),
                         cache.cross_v[static_cast<size_t>(b)].data.data(), w, 1, att.data(), heads, hd, scale,
                         scratch.data());
        k::linear_forward(att.data(), V(p + ".xattn.o"), none, o.data(), 1, w, w);
        for (int i = 0; i < w; ++i) {
            x[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + o[static_cast<size_t>(i)];
        }
        k::layer_norm_row(x.data(), V(p + ".ln3.g"), V(p + ".ln3.b"), a.data(), w, 1e-5f);
        k::linear_forward(a.data(), V(p + ".mlp.w1"), V(p + ".mlp.b1"), mh.data(), 1, w, hid);
        for (auto& e : mh) {
            e = k::gelu(e);
        }
        k::linear_forward(mh.data(), V(p + ".mlp.w2"), V(p + ".mlp.b2"), o.data(), 1, hid, w);
        for (int i = 0; i < w; ++i) {
            x[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + o[static_cast<size_t>(i)];
        }
    }
    std::vector<float> h(static_cast<size_t>(w));
    k::layer_norm_row(x.data(), V("bb.lnf.g"), V("bb.lnf.b"), h.data(), w, 1e-5f);
    cache.length += 1;
    return h;
}

std::vector<float> CodeModel::hidden_at(const CodeGrid& grid, int t, int class_id) const {
    if (t < 0 || t >= grid.length) {
        throw std::out_of_range("hidden_at: step outside grid");
    }
    Graph g(false);
    const int c = cfg_.code_dim;
    Tensor pre({t + 1, c});
    if (t > 0) {
        Tensor sums = summed_embeddings(grid);
        std::copy(sums.data.begin(), sums.data.begin() + static_cast<std::ptrdiff_t>(t) * c, pre.row(1));
    }
    std::vector<int> positions(static_cast<size_t>(t + 1));
    for (int i = 0; i <= t; ++i) {
        positions[static_cast<size_t>(i)] = i;
    }
    Var h = backbone(g, params_, cfg_, pre, {0}, positions, {class_id}, 1);
    const float* row = g.value(h).row(t);
    return std::vector<float>(row, row + cfg_.width);
}

std::vector<float> CodeModel::position_logits(std::span<const float> hidden, std::span<const int> same_step,
                                              int p) const {
    if (p < 0 || p >= owned_) {
        throw std::out_of_range("owned position out of range");
    }
    const int w = cfg_.width;
    if (static_cast<int>(hidden.size()) != w) {
        throw std::invalid_argument("hidden state has wrong width");
    }
    Graph g(false);
    const std::string h = "head." + std::to_string(p);
    Var hv = g.constant(Tensor({1, w}, std::vector<float>(hidden.begin(), hidden.end())));
    Var out;
    if (!use_decoder_) {
        out = nn::linear(g, hv, g.param(params_.at(h + ".w")), g.param(params_.at(h + ".b")));
    } else {
        required_codes(same_step, p + 1);
        const int c = cfg_.code_dim;
        Tensor pre({p + 1, c});
        slot_sums(books_, cfg_.mode, first_, same_step, p + 1, pre.data.data(), c);
        Var slots = nn::add_row(g, g.constant(std::move(pre)), g.param(params_.at("dec.sos")));
        slots = nn::linear(g, slots, g.param(params_.at("dec.proj.w")), g.param(params_.at("dec.proj.b")));
        Var seq = nn::concat_rows(g, {hv, slots});
        Var dec = decoder_stack(g, params_, cfg_, seq, 1, p + 2);
        out = nn::linear(g, nn::slice_rows(g, dec, p + 1, p + 2), g.param(params_.at(h + ".w")),
                         g.param(params_.at(h + ".b")));
    }
    return g.value(out).data;
}

uint64_t parameter_hash(const nn::ParameterStore& ps) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : ps) {
        feed(p.name.data(), p.name.size());
        feed(p.value.data.data(), p.value.data.size() * sizeof(float));
    }
    return h;
}

}  // namespace siren::lm
