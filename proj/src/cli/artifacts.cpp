#include "siren/cli/artifacts.h"

#include "siren/lm/train.h"

namespace siren::cli {

nlohmann::json lm_config_json(const lm::LmConfig& c) {
    return {{"depth", c.depth},
            {"codes_per_model", c.codes_per_model},
            {"vocab", c.vocab},
            {"code_dim", c.code_dim},
            {"width", c.width},
            {"backbone_layers", c.backbone_layers},
            {"heads", c.heads},
            {"decoder_layers", c.decoder_layers},
            {"mlp_ratio", c.mlp_ratio},
            {"max_len", c.max_len},
            {"num_classes", c.num_classes},
            {"conditioning", lm::mode_name(c.mode)},
            {"init_seed", c.init_seed}};
}

lm::LmConfig lm_config_from_json(const nlohmann::json& j) {
    lm::LmConfig c;
    c.depth = j.at("depth");
    c.codes_per_model = j.at("codes_per_model");
    c.vocab = j.at("vocab");
    c.code_dim = j.at("code_dim");
    c.width = j.at("width");
    c.backbone_layers = j.at("backbone_layers");
    c.heads = j.at("heads");
    c.decoder_layers = j.at("decoder_layers");
    c.mlp_ratio = j.at("mlp_ratio");
    c.max_len = j.at("max_len");
    c.num_classes = j.at("num_classes");
    c.mode = lm::parse_mode(j.at("conditioning").get<std::string>());
    c.init_seed = j.at("init_seed");
    return c;
}

io::Checkpoint models_checkpoint(const std::vector<lm::CodeModel>& models, bool baseline,
                                 const std::string& config_hash, const std::string& parent_hash) {
    if (models.empty()) {
        throw std::invalid_argument("no models to save");
    }
    io::Checkpoint ck;
    ck.manifest.kind = baseline ? "lm-baseline" : "lm-group";
    ck.manifest.config_hash = config_hash;
    ck.manifest.parent_hash = parent_hash;
    ck.manifest.rng_state = "init_seed=" + std::to_string(models.front().config().init_seed);
    ck.manifest.extra = {{"lm", lm_config_json(models.front().config())}, {"models", models.size()}};
    for (size_t k = 0; k < models.size(); ++k) {
        auto arrays = io::store_arrays(models[k].params(), "model" + std::to_string(k) + ".");
        ck.arrays.insert(ck.arrays.end(), arrays.begin(), arrays.end());
    }
    return ck;
}

std::vector<lm::CodeModel> models_from_checkpoint(const io::Checkpoint& ckpt, const rvq::Tokenizer& tok) {
    const bool baseline = ckpt.manifest.kind == "lm-baseline";
    if (!baseline && ckpt.manifest.kind != "lm-group") {
        throw io::CheckpointError(io::CheckpointError::Kind::integrity,
                                  "expected a language-model checkpoint, got '" + ckpt.manifest.kind + "'");
    }
    const auto cfg = lm_config_from_json(ckpt.manifest.extra.at("lm"));
    if (cfg.depth > tok.depth() || cfg.vocab != tok.config().vocab || cfg.code_dim != tok.config().code_dim) {
        throw std::invalid_argument("language-model checkpoint does not match the tokenizer");
    }
    const auto books = lm::codebook_tables(tok, cfg.depth);
    std::vector<lm::CodeModel> models;
    if (baseline) {
        models.push_back(lm::CodeModel::baseline(cfg, books));
    } else {
        models = lm::make_group(cfg, books);
    }
    for (size_t k = 0; k < models.size(); ++k) {
        io::load_store(models[k].params(), ckpt, "model" + std::to_string(k) + ".");
    }
    return models;
}

io::Checkpoint reward_checkpoint(const rl::RewardModel& rm, const std::string& config_hash) {
    const auto& c = rm.config();
    io::Checkpoint ck;
    ck.manifest.kind = "reward-probe";
    ck.manifest.config_hash = config_hash;
    ck.manifest.rng_state = "seed=" + std::to_string(c.seed);
    ck.manifest.extra = {{"hidden", c.hidden},       {"embed", c.embed}, {"steps", c.steps},
                         {"batch", c.batch},         {"lr", c.lr},       {"logit_scale", c.logit_scale},
                         {"seed", c.seed},           {"min_accuracy", c.min_accuracy}};
    ck.arrays = io::store_arrays(rm.params());
    return ck;
}

rl::RewardModel reward_from_checkpoint(const io::Checkpoint& ckpt) {
    if (ckpt.manifest.kind != "reward-probe") {
        throw io::CheckpointError(io::CheckpointError::Kind::integrity,
                                  "expected a reward-probe checkpoint, got '" + ckpt.manifest.kind + "'");
    }
    const auto& e = ckpt.manifest.extra;
    rl::RewardConfig c;
    c.hidden = e.at("hidden");
    c.embed = e.at("embed");
    c.steps = e.at("steps");
    c.batch = e.at("batch");
    c.lr = e.at("lr");
    c.logit_scale = e.at("logit_scale");
    c.seed = e.at("seed");
    c.min_accuracy = e.at("min_accuracy");
    rl::RewardModel rm(c);
    io::load_store(rm.params(), ckpt);
    return rm;
}

}  // namespace siren::cli
