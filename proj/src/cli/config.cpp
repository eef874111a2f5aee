#include "siren/cli/config.h"

#include <fstream>
#include <functional>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "siren/io/checkpoint.h"

namespace siren::cli {

ConfigError::ConfigError(const std::string& source, int line, const std::string& msg)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + msg : source + ": " + msg),
      line_(line) {}

namespace {

struct Field {
    std::string key;
    std::function<void(const YAML::Node&)> read;
    std::function<void(YAML::Emitter&)> write;
};

struct Section {
    std::string name;
    std::vector<Field> fields;
};

template <typename T>
Field scalar(const std::string& key, T& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = n.as<T>(); }, [&ref](YAML::Emitter& e) { e << ref; }};
}

Field real(const std::string& key, double& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = n.as<double>(); },
            [&ref](YAML::Emitter& e) { e << YAML::Precision(17) << ref; }};
}

Field real(const std::string& key, float& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = n.as<float>(); },
            [&ref](YAML::Emitter& e) { e << YAML::Precision(9) << ref; }};
}

Field seed(const std::string& key, uint64_t& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = n.as<uint64_t>(); }, [&ref](YAML::Emitter& e) { e << ref; }};
}

Field int_list(const std::string& key, std::vector<int>& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = n.as<std::vector<int>>(); },
            [&ref](YAML::Emitter& e) {
                e << YAML::Flow << YAML::BeginSeq;
                for (int v : ref) {
                    e << v;
                }
                e << YAML::EndSeq;
            }};
}

Field mode_field(const std::string& key, lm::ConditionMode& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = lm::parse_mode(n.as<std::string>()); },
            [&ref](YAML::Emitter& e) { e << lm::mode_name(ref); }};
}

Field direction_field(const std::string& key, rl::Direction& ref) {
    return {key, [&ref](const YAML::Node& n) { ref = rl::parse_direction(n.as<std::string>()); },
            [&ref](YAML::Emitter& e) { e << rl::direction_name(ref); }};
}

std::vector<Section> sections(RunConfig& c) {
    auto& d = c.data;
    auto& t = c.tokenizer;
    auto& m = c.lm.model;
    auto& tr = c.lm.train;
    auto& s = c.sampling;
    auto& g = c.rl.grpo;
    auto& rw = c.rl.reward;
    auto& a = c.analysis;
    auto& io = c.io;
    return {
        {"data",
         {seed("master_seed", d.master_seed), scalar("train_size", d.train_size), scalar("val_size", d.val_size),
          scalar("rl_size", d.rl_size), seed("train_offset", d.train_offset), seed("val_offset", d.val_offset),
          seed("rl_offset", d.rl_offset), real("duration", d.clip.duration), scalar("sample_rate", d.clip.sample_rate),
          real("noise_std", d.clip.noise_std)}},
        {"tokenizer",
         {scalar("vocab", t.vocab), scalar("code_dim", t.code_dim), scalar("depth", t.depth),
          scalar("channels", t.channels), int_list("strides", t.strides), real("lr", t.lr),
          real("commitment", t.commitment), real("ema_decay", t.ema_decay), scalar("batch", t.batch),
          scalar("crop", t.crop), scalar("steps", t.steps), scalar("reseed_every", t.reseed_every),
          seed("seed", t.seed)}},
        {"lm",
         {scalar("depth", m.depth), scalar("codes_per_model", m.codes_per_model), scalar("width", m.width),
          scalar("backbone_layers", m.backbone_layers), scalar("heads", m.heads),
          scalar("decoder_layers", m.decoder_layers), scalar("mlp_ratio", m.mlp_ratio), scalar("max_len", m.max_len),
          mode_field("conditioning", m.mode), seed("init_seed", m.init_seed), scalar("steps", tr.steps),
          scalar("batch", tr.batch), scalar("window", tr.window), real("lr", tr.lr),
          real("min_lr_frac", tr.min_lr_frac), scalar("warmup", tr.warmup), real("clip", tr.clip),
          real("weight_decay", tr.weight_decay), seed("seed", tr.seed), scalar("eval_every", tr.eval_every),
          scalar("eval_items", tr.eval_items), scalar("eval_clips", c.lm.eval_clips)}},
        {"sampling",
         {real("temperature", s.temperature), scalar("top_k", s.top_k), seed("seed", s.seed),
          scalar("length", s.length), scalar("kv_cache", s.kv_cache)}},
        {"rl",
         {scalar("group_size", g.group_size), real("gamma", g.gamma), real("eps_down", g.eps_down),
          real("eps_up", g.eps_up), scalar("inner_iters", g.inner_iters), real("lr", g.lr),
          scalar("length", g.length), scalar("outer_steps", g.outer_steps),
          scalar("prompts_per_step", g.prompts_per_step), real("temperature", g.temperature),
          scalar("top_k", g.top_k), direction_field("direction", g.direction), seed("seed", g.seed),
          scalar("eval_prompts", c.rl.eval_prompts), scalar("reward_hidden", rw.hidden),
          scalar("reward_embed", rw.embed), scalar("reward_steps", rw.steps), scalar("reward_batch", rw.batch),
          real("reward_lr", rw.lr), real("reward_logit_scale", rw.logit_scale), seed("reward_seed", rw.seed),
          real("reward_min_accuracy", rw.min_accuracy)}},
        {"analysis",
         {scalar("probe_hidden", a.probe.hidden), scalar("probe_steps", a.probe.steps),
          scalar("probe_batch", a.probe.batch), real("probe_lr", a.probe.lr), seed("probe_seed", a.probe.seed),
          scalar("cosine_clips", a.cosine_clips), scalar("probe_train_clips", a.probe_train_clips),
          scalar("probe_heldout_clips", a.probe_heldout_clips), scalar("gradient_batch", a.gradient_batch)}},
        {"io",
         {scalar("run_root", io.run_root), scalar("tokenizer_checkpoint", io.tokenizer_checkpoint),
          scalar("lm_checkpoint", io.lm_checkpoint), scalar("baseline_checkpoint", io.baseline_checkpoint),
          scalar("reward_checkpoint", io.reward_checkpoint), scalar("threads", io.threads),
          scalar("samples", io.samples), scalar("sample_class", io.sample_class),
          scalar("checkpoint_every", io.checkpoint_every)}},
    };
}

int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

void require(bool ok, const std::string& source, const std::string& msg) {
    if (!ok) {
        throw ConfigError(source, 0, msg);
    }
}

}  // namespace

void RunConfig::validate(const std::string& source) const {
    const auto& m = lm.model;
    require(data.train_size > 0 && data.val_size > 0 && data.rl_size > 0, source, "data split sizes must be positive");
    require(tokenizer.depth >= 1, source, "tokenizer.depth must be at least 1");
    require(m.depth >= 1 && m.depth <= tokenizer.depth, source,
            "lm.depth (" + std::to_string(m.depth) + ") must lie in [1, tokenizer.depth = " +
                std::to_string(tokenizer.depth) + "]");
    require(m.codes_per_model >= 1 && m.depth % m.codes_per_model == 0, source,
            "lm.depth (" + std::to_string(m.depth) + ") must be a multiple of lm.codes_per_model (" +
                std::to_string(m.codes_per_model) + ")");
    require(io.threads >= 1, source, "io.threads must be positive");
    require(io.samples >= 1, source, "io.samples must be positive");
    require(io.sample_class >= -1 && io.sample_class < m.num_classes, source, "io.sample_class out of range");
    require(io.checkpoint_every >= 1, source, "io.checkpoint_every must be positive");
    require(lm.eval_clips >= 1 && lm.eval_clips <= data.val_size, source, "lm.eval_clips must lie in [1, val_size]");
    require(rl.eval_prompts >= 1, source, "rl.eval_prompts must be positive");
    require(analysis.cosine_clips >= 1 && analysis.cosine_clips <= data.val_size, source,
            "analysis.cosine_clips must lie in [1, val_size]");
    require(analysis.probe_train_clips >= 1 && analysis.probe_train_clips <= data.train_size, source,
            "analysis.probe_train_clips must lie in [1, train_size]");
    require(analysis.probe_heldout_clips >= 1 && analysis.probe_heldout_clips <= data.val_size, source,
            "analysis.probe_heldout_clips must lie in [1, val_size]");
    try {
        lm::LmConfig probe = m;
        probe.vocab = tokenizer.vocab;
        probe.code_dim = tokenizer.code_dim;
        probe.validate();
        sampling.validate(tokenizer.vocab, m.max_len);
        rl.grpo.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source, 0, e.what());
    }
    require(rl.grpo.length <= m.max_len, source, "rl.length exceeds lm.max_len");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(source, e.mark.line + 1, e.msg);
    }
    RunConfig cfg;
    if (root.IsNull()) {
        cfg.validate(source);
        return cfg;
    }
    if (!root.IsMap()) {
        throw ConfigError(source, line_of(root), "top level must be a mapping of sections");
    }
    auto secs = sections(cfg);
    for (const auto& kv : root) {
        const auto name = kv.first.as<std::string>();
        auto it = std::find_if(secs.begin(), secs.end(), [&](const Section& s) { return s.name == name; });
        if (it == secs.end()) {
            throw ConfigError(source, line_of(kv.first), "unknown section '" + name + "'");
        }
        if (kv.second.IsNull()) {
            continue;
        }
        if (!kv.second.IsMap()) {
            throw ConfigError(source, line_of(kv.second), "section '" + name + "' must be a mapping");
        }
        for (const auto& fv : kv.second) {
            const auto key = fv.first.as<std::string>();
            auto f = std::find_if(it->fields.begin(), it->fields.end(), [&](const Field& x) { return x.key == key; });
            if (f == it->fields.end()) {
                throw ConfigError(source, line_of(fv.first), "unknown key '" + name + "." + key + "'");
            }
            try {
                f->read(fv.second);
            } catch (const YAML::Exception&) {
                throw ConfigError(source, line_of(fv.second), "bad value for '" + name + "." + key + "'");
            } catch (const std::invalid_argument& e) {
                throw ConfigError(source, line_of(fv.second), name + "." + key + ": " + e.what());
            }
        }
    }
    cfg.lm.model.vocab = cfg.tokenizer.vocab;
    cfg.lm.model.code_dim = cfg.tokenizer.code_dim;
    cfg.validate(source);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path, 0, "cannot read config file");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

std::string dump_run_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    YAML::Emitter e;
    e << YAML::BeginMap;
    for (auto& s : sections(copy)) {
        e << YAML::Key << s.name << YAML::Value << YAML::BeginMap;
        for (auto& f : s.fields) {
            e << YAML::Key << f.key << YAML::Value;
            f.write(e);
        }
        e << YAML::EndMap;
    }
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
    // Paths and thread counts do not change results.
    RunConfig c = cfg;
    c.io.run_root.clear();
    c.io.tokenizer_checkpoint.clear();
    c.io.lm_checkpoint.clear();
    c.io.baseline_checkpoint.clear();
    c.io.reward_checkpoint.clear();
    c.io.threads = 1;
    const auto text = dump_run_config(c);
    return io::hex64(io::fnv1a(text.data(), text.size()));
}

}  // namespace siren::cli
