#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "siren/analysis/analysis.h"
#include "siren/cli/artifacts.h"
#include "siren/cli/cli.h"
#include "siren/cli/config.h"
#include "siren/io/checkpoint.h"
#include "siren/io/metrics.h"
#include "siren/lm/train.h"
#include "siren/rl/grpo.h"
#include "siren/sampler/sampler.h"

namespace siren::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string command;
    std::string config_path;
    std::vector<std::string> from;
    std::string run_root;
    std::string resume;
};

const io::CsvSchema& tokenizer_loss_schema() {
    static const io::CsvSchema s{"tokenizer_loss", {"step", "loss", "recon"}};
    return s;
}

const io::CsvSchema& histogram_schema() {
    static const io::CsvSchema s{"histogram", {"group", "bin_lo", "bin_hi", "count"}};
    return s;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

std::optional<int> env_int(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') {
        return std::nullopt;
    }
    char* end = nullptr;
    const long x = std::strtol(v, &end, 10);
    if (*end != '\0' || x < 1 || x > 4096) {
        throw ConfigError(name, 0, "must be a positive integer, got '" + std::string(v) + "'");
    }
    return static_cast<int>(x);
}

class Context {
public:
    Context(Options opt, RunConfig cfg, std::ostream& out, std::ostream& err)
        : opt_(std::move(opt)), cfg_(std::move(cfg)), hash_(config_hash(cfg_)), out_(out), err_(err) {}

    const RunConfig& cfg() const { return cfg_; }
    const std::string& hash() const { return hash_; }
    const fs::path& dir() const { return dir_; }
    std::ostream& out() { return out_; }
    bool resuming() const { return !opt_.resume.empty(); }
    fs::path file(const std::string& name) const { return dir_ / name; }

    void open_run_dir() {
        if (resuming()) {
            dir_ = opt_.resume;
            const auto info = io::read_json((dir_ / "run.json").string());
            if (info.value("command", "") != opt_.command) {
                throw ConfigError(opt_.resume, 0, "run directory belongs to '" + info.value("command", "") + "'");
            }
            if (info.value("status", "") == "complete") {
                throw ConfigError(opt_.resume, 0, "run is complete and immutable");
            }
            if (info.value("config_hash", "") != hash_) {
                throw ConfigError(opt_.resume, 0, "config differs from the interrupted run");
            }
            info_ = info;
            out_ << "resuming " << dir_.string() << "\n";
        } else {
            std::string root = cfg_.io.run_root;
            if (const char* env = std::getenv("SIREN_RUN_ROOT"); env != nullptr && *env != '\0') {
                root = env;
            }
            if (!opt_.run_root.empty()) {
                root = opt_.run_root;
            }
            const std::string base = utc_timestamp() + "-" + hash_.substr(0, 8) + "-" + opt_.command;
            fs::create_directories(root);
            for (int n = 0;; ++n) {
                dir_ = fs::path(root) / (n == 0 ? base : base + "-" + std::to_string(n));
                if (fs::create_directory(dir_)) {
                    break;
                }
            }
            std::ofstream(dir_ / "config.yaml") << dump_run_config(cfg_);
            info_ = {{"command", opt_.command}, {"config_hash", hash_}, {"from", opt_.from}};
            out_ << "run directory " << dir_.string() << "\n";
        }
        info_["status"] = "running";
        info_["threads"] = cfg_.io.threads;
        io::write_json((dir_ / "run.json").string(), info_);
    }

    void finish(const json& summary) {
        json artifacts = json::object();
        for (const auto& e : fs::recursive_directory_iterator(dir_)) {
            if (!e.is_regular_file() || e.path().filename() == "run.json") {
                continue;
            }
            std::ifstream in(e.path(), std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            artifacts[fs::relative(e.path(), dir_).string()] = io::hex64(io::fnv1a(bytes.data(), bytes.size()));
        }
        info_["status"] = "complete";
        info_["artifacts"] = artifacts;
        info_["summary"] = summary;
        if (!warnings_.empty()) {
            info_["warnings"] = warnings_;
        }
        io::write_json((dir_ / "run.json").string(), info_);
        for (const auto& e : fs::recursive_directory_iterator(dir_)) {
            if (e.is_regular_file()) {
                fs::permissions(e.path(), fs::perms::owner_write | fs::perms::group_write | fs::perms::others_write,
                                fs::perm_options::remove);
            }
        }
    }

    void fail(const std::string& what) {
        if (dir_.empty() || !fs::exists(dir_ / "run.json")) {
            return;
        }
        try {
            info_["status"] = "failed";
            info_["error"] = what;
            io::write_json((dir_ / "run.json").string(), info_);
        } catch (const std::exception&) {
        }
    }

    // Explicit path from the config, else the newest match among --from
    // directories (later ones win).
    std::optional<fs::path> find_input(const std::string& name, const std::string& explicit_path) const {
        if (!explicit_path.empty()) {
            return fs::path(explicit_path);
        }
        for (auto it = opt_.from.rbegin(); it != opt_.from.rend(); ++it) {
            const fs::path p = fs::path(*it) / name;
            if (fs::exists(p)) {
                return p;
            }
        }
        return std::nullopt;
    }

    fs::path require_input(const std::string& what, const std::string& name, const std::string& explicit_path) const {
        if (!explicit_path.empty()) {
            if (!fs::exists(explicit_path)) {
                throw std::runtime_error("missing " + what + ": " + explicit_path);
            }
            return explicit_path;
        }
        if (auto p = find_input(name, "")) {
            return *p;
        }
        if (opt_.from.empty()) {
            throw std::runtime_error("missing " + what + ": no --from run directory given and no path configured (" +
                                     name + ")");
        }
        std::string tried;
        for (const auto& f : opt_.from) {
            tried += (tried.empty() ? "" : ", ") + (fs::path(f) / name).string();
        }
        throw std::runtime_error("missing " + what + ": " + tried);
    }

    io::Checkpoint load(const fs::path& path) {
        auto ck = io::load_checkpoint(path.string(), hash_);
        if (ck.config_mismatch) {
            const std::string w = path.string() + " was written under config " + ck.manifest.config_hash +
                                  ", current config is " + hash_;
            err_ << "warning: " << w << "\n";
            warnings_.push_back(w);
        }
        return ck;
    }

    rvq::Tokenizer load_tokenizer(std::string* ckpt_hash = nullptr) {
        const auto ck = load(require_input("tokenizer checkpoint", "tokenizer.ckpt", cfg_.io.tokenizer_checkpoint));
        if (ckpt_hash != nullptr) {
            *ckpt_hash = ck.hash;
        }
        return io::tokenizer_from_checkpoint(ck);
    }

    rvq::Tokenizer load_tokenizer_at(const fs::path& p) { return io::tokenizer_from_checkpoint(load(p)); }

    std::vector<lm::CodeModel> load_models(const rvq::Tokenizer& tok, bool baseline, std::string* ckpt_hash = nullptr) {
        const auto path = baseline ? require_input("baseline checkpoint", "baseline.ckpt", cfg_.io.baseline_checkpoint)
                                   : require_input("language-model checkpoint", "lm_group.ckpt", cfg_.io.lm_checkpoint);
        const auto ck = load(path);
        if (ckpt_hash != nullptr) {
            *ckpt_hash = ck.hash;
        }
        return models_from_checkpoint(ck, tok);
    }

private:
    Options opt_;
    RunConfig cfg_;
    std::string hash_;
    std::ostream& out_;
    std::ostream& err_;
    fs::path dir_;
    json info_;
    std::vector<std::string> warnings_;
};

std::vector<data::Example> head(const std::vector<data::Example>& v, int n) {
    return {v.begin(), v.begin() + std::min<size_t>(v.size(), static_cast<size_t>(n))};
}

json split_summary(const data::DatasetSplit& s) {
    return {{"size", s.items.size()},
            {"checksum", io::hex64(data::split_checksum(s))},
            {"class_histogram", data::class_histogram(s)}};
}

json gen_data(Context& ctx) {
    const auto ds = data::build_dataset(ctx.cfg().data);
    const json manifest = {{"master_seed", ctx.cfg().data.master_seed},
                           {"train", split_summary(ds.train)},
                           {"val", split_summary(ds.val)},
                           {"rl", split_summary(ds.rl)}};
    io::write_json(ctx.file("dataset.json").string(), manifest);
    fs::create_directories(ctx.file("examples"));
    std::vector<bool> seen(data::kNumClasses, false);
    for (const auto& ex : ds.train.items) {
        if (!seen[static_cast<size_t>(ex.cond.class_id)]) {
            seen[static_cast<size_t>(ex.cond.class_id)] = true;
            data::write_wav((ctx.file("examples") / (ex.cond.label + ".wav")).string(), ex.wave);
        }
    }
    ctx.out() << "generated " << ds.train.items.size() << "/" << ds.val.items.size() << "/" << ds.rl.items.size()
              << " clips\n";
    return manifest;
}

json train_tokenizer(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const auto train = data::build_split(cfg.data, data::Split::train);
    rvq::Tokenizer tok(cfg.tokenizer);
    const auto ckpt_path = ctx.file("tokenizer.ckpt");
    if (ctx.resuming() && fs::exists(ckpt_path)) {
        tok = ctx.load_tokenizer_at(ckpt_path);
    }
    io::CsvSink sink(ctx.file("tokenizer_loss.csv").string(), tokenizer_loss_schema(), 50, ctx.resuming());
    while (tok.trained_steps() < cfg.tokenizer.steps) {
        const int n = std::min<int64_t>(cfg.io.checkpoint_every, cfg.tokenizer.steps - tok.trained_steps());
        rvq::continue_training(tok, train.items, n, [&](const rvq::TrainLog& l) {
            sink.write({static_cast<double>(l.step), l.loss, l.recon});
            if (l.step % 100 == 0) {
                ctx.out() << "tokenizer step " << l.step << " loss " << l.loss << "\n";
            }
        });
        auto ck = io::tokenizer_checkpoint(tok, ctx.hash());
        io::save_checkpoint(ck, ckpt_path.string());
    }
    sink.close();
    const auto val = head(data::build_split(cfg.data, data::Split::val).items, cfg.lm.eval_clips);
    const json summary = {{"trained_steps", tok.trained_steps()},
                          {"val_mse", rvq::reconstruction_mse(tok, val)},
                          {"codebook_usage", rvq::codebook_usage(tok, val)}};
    io::write_json(ctx.file("metrics.json").string(), summary);
    return summary;
}

void write_loss(const std::string& path, const std::vector<lm::LossRecord>& recs) {
    io::CsvSink sink(path, io::loss_schema());
    for (const auto& r : recs) {
        sink.write({static_cast<double>(r.step), static_cast<double>(r.layer), r.ce});
    }
    sink.close();
}

std::vector<lm::LossRecord> read_loss(const std::string& path) {
    std::vector<lm::LossRecord> out;
    for (const auto& row : io::read_csv(path, io::loss_schema())) {
        out.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), row[2]});
    }
    return out;
}

json train_lm(Context& ctx, bool baseline) {
    const auto& cfg = ctx.cfg();
    std::string tok_hash;
    const auto tok = ctx.load_tokenizer(&tok_hash);
    auto mc = cfg.lm.model;
    mc.vocab = tok.config().vocab;
    mc.code_dim = tok.config().code_dim;
    if (mc.depth > tok.depth()) {
        throw ConfigError("lm.depth", 0, "exceeds the tokenizer depth " + std::to_string(tok.depth()));
    }
    const auto train = lm::tokenize_split(tok, data::build_split(cfg.data, data::Split::train).items, mc.depth);
    const auto eval =
        lm::tokenize_split(tok, head(data::build_split(cfg.data, data::Split::val).items, cfg.lm.eval_clips), mc.depth);
    const auto books = lm::codebook_tables(tok, mc.depth);
    std::vector<lm::CodeModel> models;
    if (baseline) {
        models.push_back(lm::CodeModel::baseline(mc, books));
    } else {
        models = lm::make_group(mc, books);
    }
    const std::string stem = baseline ? "baseline" : "model";
    lm::TrainHistory all;
    for (size_t k = 0; k < models.size(); ++k) {
        const std::string tag = stem + std::to_string(k);
        const auto partial = ctx.file(tag + ".partial.ckpt");
        lm::TrainHistory h;
        if (ctx.resuming() && fs::exists(partial)) {
            io::load_store(models[k].params(), io::load_checkpoint(partial.string()));
            h.train = read_loss(ctx.file(tag + "_loss.csv").string());
            h.eval = read_loss(ctx.file(tag + "_eval_loss.csv").string());
            ctx.out() << "reusing " << partial.string() << "\n";
        } else {
            lm::TrainHooks hooks;
            hooks.on_step = [&](int step, double loss) {
                if ((step + 1) % 100 == 0) {
                    ctx.out() << tag << " step " << step + 1 << " loss " << loss << "\n";
                }
            };
            h = lm::train_model(models[k], train, eval, cfg.lm.train, hooks);
            write_loss(ctx.file(tag + "_loss.csv").string(), h.train);
            write_loss(ctx.file(tag + "_eval_loss.csv").string(), h.eval);
            io::Checkpoint ck;
            ck.manifest.kind = "lm-partial";
            ck.manifest.config_hash = ctx.hash();
            ck.arrays = io::store_arrays(models[k].params());
            io::save_checkpoint(ck, partial.string());
        }
        all.train.insert(all.train.end(), h.train.begin(), h.train.end());
        all.eval.insert(all.eval.end(), h.eval.begin(), h.eval.end());
    }
    auto order = [](const lm::LossRecord& a, const lm::LossRecord& b) {
        return a.step != b.step ? a.step < b.step : a.layer < b.layer;
    };
    std::stable_sort(all.train.begin(), all.train.end(), order);
    std::stable_sort(all.eval.begin(), all.eval.end(), order);
    const std::string prefix = baseline ? "baseline_" : "";
    write_loss(ctx.file(prefix + "loss.csv").string(), all.train);
    write_loss(ctx.file(prefix + "eval_loss.csv").string(), all.eval);
    auto ck = models_checkpoint(models, baseline, ctx.hash(), tok_hash);
    io::save_checkpoint(ck, ctx.file(baseline ? "baseline.ckpt" : "lm_group.ckpt").string());
    for (size_t k = 0; k < models.size(); ++k) {
        fs::remove(ctx.file(stem + std::to_string(k) + ".partial.ckpt"));
        fs::remove(ctx.file(stem + std::to_string(k) + "_loss.csv"));
        fs::remove(ctx.file(stem + std::to_string(k) + "_eval_loss.csv"));
    }
    json summary = {{"models", models.size()}, {"checkpoint", ck.hash}};
    try {
        const auto lb = lm::loss_balance_metrics(all.eval, mc.depth);
        summary["loss_mean"] = lb.loss_mean;
        summary["loss_ratio"] = lb.loss_ratio;
        summary["best_step"] = lb.step;
    } catch (const std::exception& e) {
        summary["loss_balance_error"] = e.what();
    }
    io::write_json(ctx.file("metrics.json").string(), summary);
    return summary;
}

std::vector<const lm::CodeModel*> pointers(const std::vector<lm::CodeModel>& models) {
    std::vector<const lm::CodeModel*> out;
    for (const auto& m : models) {
        out.push_back(&m);
    }
    return out;
}

json rl_align(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const auto tok = ctx.load_tokenizer();
    std::string lm_hash;
    auto models = ctx.load_models(tok, false, &lm_hash);
    rl::RewardModel rm;
    json summary;
    if (auto p = ctx.find_input("reward.ckpt", cfg.io.reward_checkpoint)) {
        if (!fs::exists(*p)) {
            throw std::runtime_error("missing reward checkpoint: " + p->string());
        }
        rm = reward_from_checkpoint(ctx.load(*p));
    } else {
        double acc = 0.0;
        rm = rl::train_reward_probe(data::build_split(cfg.data, data::Split::train).items,
                                    data::build_split(cfg.data, data::Split::val).items, cfg.rl.reward, &acc);
        summary["reward_probe_accuracy"] = acc;
        ctx.out() << "reward probe held-out accuracy " << acc << "\n";
    }
    auto rck = reward_checkpoint(rm, ctx.hash());
    io::save_checkpoint(rck, ctx.file("reward.ckpt").string());

    const auto rl_split = data::build_split(cfg.data, data::Split::rl);
    std::vector<int> prompts;
    for (const auto& ex : rl_split.items) {
        prompts.push_back(ex.cond.class_id);
    }
    const std::vector<int> eval_prompts(
        prompts.begin(), prompts.begin() + std::min<size_t>(prompts.size(), static_cast<size_t>(cfg.rl.eval_prompts)));
    const uint64_t eval_seed = nn::derive_seed(cfg.rl.grpo.seed, 0xe7a1);
    const double before = rl::mean_policy_reward(pointers(models), tok, rm, eval_prompts, cfg.rl.grpo, eval_seed);
    ctx.out() << "held-out reward before alignment " << before << "\n";

    io::CsvSink sink(ctx.file("reward.csv").string(), io::reward_schema());
    const auto res = rl::rl_run(models, tok, rm, prompts, cfg.rl.grpo, [&](const rl::RewardTrace& t) {
        sink.write({static_cast<double>(t.step), t.mean_reward, t.std_reward, t.retained_fraction});
        if ((t.step + 1) % 10 == 0) {
            ctx.out() << "rl step " << t.step + 1 << " mean reward " << t.mean_reward << "\n";
        }
    });
    sink.close();
    const double after = rl::mean_policy_reward(pointers(models), tok, rm, eval_prompts, cfg.rl.grpo, eval_seed);
    ctx.out() << "held-out reward after alignment " << after << "\n";
    auto ck = models_checkpoint(models, false, ctx.hash(), lm_hash);
    ck.manifest.rng_state = "rl_seed=" + std::to_string(cfg.rl.grpo.seed);
    io::save_checkpoint(ck, ctx.file("lm_group.ckpt").string());
    summary["reward_before"] = before;
    summary["reward_after"] = after;
    summary["reward_gain"] = after - before;
    summary["direction"] = rl::direction_name(cfg.rl.grpo.direction);
    summary["aligned_model"] = rl::aligned_index(cfg.rl.grpo.direction, static_cast<int>(models.size()));
    summary["frozen_unchanged"] = res.frozen_hash_before == res.frozen_hash_after;
    summary["skipped_updates"] = res.skipped_updates;
    summary["checkpoint"] = ck.hash;
    io::write_json(ctx.file("metrics.json").string(), summary);
    return summary;
}

json sample(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const auto tok = ctx.load_tokenizer();
    const auto models = ctx.load_models(tok, false);
    std::vector<sampler::Request> reqs;
    for (int i = 0; i < cfg.io.samples; ++i) {
        const int cls = cfg.io.sample_class >= 0 ? cfg.io.sample_class : i % data::kNumClasses;
        reqs.push_back({cls, nn::derive_seed(cfg.sampling.seed, static_cast<uint64_t>(i))});
    }
    const auto gen = sampler::batch_generate(pointers(models), tok, reqs, cfg.sampling);
    json items = json::array();
    for (size_t i = 0; i < gen.size(); ++i) {
        const auto& label = data::class_label(reqs[i].class_id);
        const std::string stem = "sample_" + std::to_string(i) + "_" + label;
        data::write_wav(ctx.file(stem + ".wav").string(), gen[i].wave);
        io::write_grid(ctx.file(stem + ".grid").string(), gen[i].result.grid);
        const auto oracle = data::oracle_classify(gen[i].wave);
        items.push_back({{"file", stem + ".wav"},
                         {"class", label},
                         {"seed", reqs[i].seed},
                         {"oracle_class", data::class_label(oracle.class_id)},
                         {"oracle_low_confidence", oracle.low_confidence}});
    }
    const json summary = {{"samples", items}};
    io::write_json(ctx.file("samples.json").string(), summary);
    ctx.out() << "wrote " << gen.size() << " samples\n";
    return summary;
}

void write_histogram(io::CsvSink& sink, double group, const analysis::Histogram& h) {
    const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (size_t b = 0; b < h.counts.size(); ++b) {
        sink.write({group, h.lo + w * static_cast<double>(b), h.lo + w * static_cast<double>(b + 1),
                    static_cast<double>(h.counts[b])});
    }
}

json analyze(Context& ctx) {
    const auto& cfg = ctx.cfg();
    const auto tok = ctx.load_tokenizer();
    const auto train = data::build_split(cfg.data, data::Split::train);
    const auto val = data::build_split(cfg.data, data::Split::val);
    const int depth = tok.depth();
    analysis::AnalysisReport rep;
    rep.metadata = {{"config_hash", ctx.hash()}, {"depth", depth}};

    const auto cos_clips = head(val.items, cfg.analysis.cosine_clips);
    for (auto mode : {analysis::CosineMode::per_step, analysis::CosineMode::pooled}) {
        const auto st = analysis::layer_cosine_stats(tok, cos_clips, mode, depth);
        rep.tables[std::string("cosine_") + analysis::cosine_mode_name(mode)] = analysis::to_json(st);
        io::CsvSink sink(ctx.file(std::string("cosine_hist_") + analysis::cosine_mode_name(mode) + ".csv").string(),
                         histogram_schema());
        for (const auto& [interval, is] : st.by_interval) {
            write_histogram(sink, interval, is.hist);
        }
        sink.close();
    }

    const auto acc = analysis::semantic_probe_accuracy(tok, head(train.items, cfg.analysis.probe_train_clips),
                                                       head(val.items, cfg.analysis.probe_heldout_clips),
                                                       cfg.analysis.probe, depth);
    std::vector<int> ytr, yte;
    for (const auto& e : head(train.items, cfg.analysis.probe_train_clips)) {
        ytr.push_back(e.cond.class_id);
    }
    for (const auto& e : head(val.items, cfg.analysis.probe_heldout_clips)) {
        yte.push_back(e.cond.class_id);
    }
    const double chance = analysis::chance_probe_accuracy(ytr, yte, tok.config().code_dim, cfg.analysis.probe);
    rep.tables["probe"] = {{"accuracy", acc}, {"chance", chance}, {"first_minus_last", acc.front() - acc.back()}};

    for (const auto& [name, file] : {std::pair{"convergence_group", "loss.csv"},
                                     std::pair{"convergence_baseline", "baseline_loss.csv"}}) {
        if (auto p = ctx.find_input(file, "")) {
            rep.tables[name] = analysis::to_json(analysis::convergence_report(read_loss(p->string())));
        }
    }
    for (const auto& [name, file] : {std::pair{"loss_balance_group", "eval_loss.csv"},
                                     std::pair{"loss_balance_baseline", "baseline_eval_loss.csv"}}) {
        if (auto p = ctx.find_input(file, "")) {
            const auto recs = read_loss(p->string());
            int layers = 0;
            for (const auto& r : recs) {
                layers = std::max(layers, r.layer + 1);
            }
            try {
                const auto lb = lm::loss_balance_metrics(recs, layers);
                rep.tables[name] = {{"loss_mean", lb.loss_mean}, {"loss_ratio", lb.loss_ratio}, {"step", lb.step}};
            } catch (const std::exception& e) {
                rep.tables[name] = {{"error", e.what()}};
            }
        }
    }

    if (ctx.find_input("lm_group.ckpt", cfg.io.lm_checkpoint)) {
        const auto models = ctx.load_models(tok, false);
        if (models.size() >= 2) {
            const auto init = lm::make_group(models.front().config(), lm::codebook_tables(tok, models.front().config().depth));
            std::vector<const nn::ParameterStore*> trained;
            for (const auto& m : models) {
                trained.push_back(&m.params());
            }
            rep.tables["task_vectors"] = analysis::to_json(analysis::task_vector_similarity(init.front().params(), trained));
        }
    }

    if (ctx.find_input("baseline.ckpt", cfg.io.baseline_checkpoint)) {
        auto models = ctx.load_models(tok, true);
        auto& base = models.front();
        const auto& bc = base.config();
        const auto tokens = lm::tokenize_split(tok, head(val.items, cfg.analysis.gradient_batch), bc.depth);
        lm::CodeModel::Batch batch;
        batch.window = std::min(tokens.grids.front().length, bc.max_len);
        for (size_t i = 0; i < tokens.size(); ++i) {
            batch.grids.push_back(&tokens.grids[i]);
            batch.classes.push_back(tokens.classes[i]);
            batch.starts.push_back(0);
        }
        const auto st = analysis::gradient_angle_stats(base, batch);
        rep.tables["gradient_angles"] = analysis::to_json(st);
        io::CsvSink sink(ctx.file("angle_hist.csv").string(), histogram_schema());
        write_histogram(sink, 0, st.hist);
        sink.close();
    }

    io::write_json(ctx.file("report.json").string(), rep.to_json());
    ctx.out() << "wrote report with " << rep.tables.size() << " tables\n";
    return {{"tables", rep.tables.size()}};
}

void write_dat(const fs::path& path, const std::string& header, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    out.precision(9);
    out << "# " << header << "\n";
    for (const auto& r : rows) {
        for (size_t i = 0; i < r.size(); ++i) {
            out << (i ? "\t" : "") << r[i];
        }
        out << "\n";
    }
    out.flush();
    if (!out) {
        throw io::MetricsError("write to '" + path.string() + "' failed");
    }
}

json report(Context& ctx) {
    const auto src = ctx.require_input("analysis report", "report.json", "");
    const auto rep = analysis::AnalysisReport::from_json(io::read_json(src.string()));
    const auto& t = rep.tables;
    std::ostringstream txt;
    txt << "source " << src.string() << "\n";
    for (const char* mode : {"per_step", "pooled"}) {
        const std::string key = std::string("cosine_") + mode;
        if (!t.contains(key)) {
            continue;
        }
        std::vector<std::vector<double>> rows;
        for (const auto& iv : t.at(key).at("intervals")) {
            rows.push_back({iv.at("interval").get<double>(), iv.at("mean").get<double>(), iv.at("mean_abs").get<double>()});
        }
        write_dat(ctx.file(key + ".dat"), "interval mean mean_abs", rows);
        txt << key << " mean |cos| distinct " << t.at(key).at("mean_abs_distinct").get<double>() << "\n";
    }
    if (t.contains("probe")) {
        std::vector<std::vector<double>> rows;
        const auto acc = t.at("probe").at("accuracy").get<std::vector<double>>();
        for (size_t j = 0; j < acc.size(); ++j) {
            rows.push_back({static_cast<double>(j + 1), acc[j]});
        }
        write_dat(ctx.file("probe_accuracy.dat"), "layer accuracy", rows);
        txt << "probe layer1-last " << t.at("probe").at("first_minus_last").get<double>() << " chance "
            << t.at("probe").at("chance").get<double>() << "\n";
    }
    for (const char* key : {"convergence_group", "convergence_baseline"}) {
        if (!t.contains(key)) {
            continue;
        }
        const auto& c = t.at(key);
        std::vector<std::vector<double>> rows;
        const auto finals = c.at("final_loss").get<std::vector<double>>();
        for (size_t i = 0; i < finals.size(); ++i) {
            rows.push_back({c.at("curves").at(i).at("layer").get<double>(), finals[i]});
        }
        write_dat(ctx.file(std::string(key) + ".dat"), "layer final_smoothed_ce", rows);
        txt << key << " spearman " << c.at("spearman").get<double>() << "\n";
    }
    if (t.contains("task_vectors")) {
        std::vector<std::vector<double>> rows;
        for (const auto& g : t.at("task_vectors")) {
            rows.push_back({g.at("median").is_null() ? NAN : g.at("median").get<double>()});
            txt << "task vectors " << g.at("group").get<std::string>() << " median " << g.at("median").dump() << "\n";
        }
        write_dat(ctx.file("task_vectors.dat"), "median_cosine (embedding backbone residual_decoder classifier)", rows);
    }
    if (t.contains("gradient_angles")) {
        txt << "gradient angle mean " << t.at("gradient_angles").at("mean").get<double>() << "\n";
    }
    for (const char* key : {"loss_balance_group", "loss_balance_baseline"}) {
        if (t.contains(key) && t.at(key).contains("loss_mean")) {
            txt << key << " mean " << t.at(key).at("loss_mean").get<double>() << " ratio "
                << t.at(key).at("loss_ratio").get<double>() << "\n";
        }
    }
    std::ofstream(ctx.file("summary.txt")) << txt.str();
    ctx.out() << txt.str();
    return {{"source", src.string()}};
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"siren: residual-token audio generation pipeline", "siren"};
    app.require_subcommand(1, 1);
    Options opt;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "generate and describe the synthetic dataset"},
        {"train-tokenizer", "train the residual quantization tokenizer"},
        {"train-lm", "train the collaborative transformer group"},
        {"train-baseline", "train the shared multi-head baseline"},
        {"rl-align", "align one group member with group-relative policy optimization"},
        {"sample", "generate clips from a trained group"},
        {"analyze", "compute layer, probe, convergence and task-vector analyses"},
        {"report", "render an analysis report into plot-ready data files"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opt.config_path, "YAML run configuration");
        sub->add_option("-f,--from", opt.from, "earlier run directories to read artifacts from");
        sub->add_option("--run-root", opt.run_root, "directory that receives the run directory");
        if (name == "train-tokenizer" || name == "train-lm" || name == "train-baseline") {
            sub->add_option("--resume", opt.resume, "continue an interrupted run directory");
        }
    }
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    opt.command = app.get_subcommands().front()->get_name();

    std::optional<Context> ctx;
    try {
        std::string cfg_path = opt.config_path;
        if (cfg_path.empty() && !opt.resume.empty()) {
            cfg_path = (fs::path(opt.resume) / "config.yaml").string();
        }
        RunConfig cfg = cfg_path.empty() ? parse_run_config("", "defaults") : load_run_config(cfg_path);
        if (auto threads = env_int("SIREN_THREADS")) {
            cfg.io.threads = *threads;
        }
        ctx.emplace(opt, cfg, out, err);
        ctx->open_run_dir();
        json summary;
        if (opt.command == "gen-data") {
            summary = gen_data(*ctx);
        } else if (opt.command == "train-tokenizer") {
            summary = train_tokenizer(*ctx);
        } else if (opt.command == "train-lm") {
            summary = train_lm(*ctx, false);
        } else if (opt.command == "train-baseline") {
            summary = train_lm(*ctx, true);
        } else if (opt.command == "rl-align") {
            summary = rl_align(*ctx);
        } else if (opt.command == "sample") {
            summary = sample(*ctx);
        } else if (opt.command == "analyze") {
            summary = analyze(*ctx);
        } else {
            summary = report(*ctx);
        }
        ctx->finish(summary);
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        if (ctx) {
            ctx->fail(e.what());
        }
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        if (ctx) {
            ctx->fail(e.what());
        }
        return kExitRuntime;
    }
}

}  // namespace siren::cli
