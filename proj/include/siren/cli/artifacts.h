#pragma once

#include <string>
#include <vector>

#include "siren/io/checkpoint.h"
#include "siren/lm/model.h"
#include "siren/rl/reward.h"
#include "siren/rvq/tokenizer.h"

#include <json.hpp>

namespace siren::cli {

nlohmann::json lm_config_json(const lm::LmConfig& cfg);
lm::LmConfig lm_config_from_json(const nlohmann::json& j);

// Collaborative group: kind "lm-group", arrays "model<k>.<param>".
// Shared baseline: kind "lm-baseline", arrays "model0.<param>".
io::Checkpoint models_checkpoint(const std::vector<lm::CodeModel>& models, bool baseline,
                                 const std::string& config_hash, const std::string& parent_hash);
std::vector<lm::CodeModel> models_from_checkpoint(const io::Checkpoint& ckpt, const rvq::Tokenizer& tok);

io::Checkpoint reward_checkpoint(const rl::RewardModel& rm, const std::string& config_hash);
rl::RewardModel reward_from_checkpoint(const io::Checkpoint& ckpt);

}  // namespace siren::cli
