#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "siren/nn/parameter.h"
#include "siren/nn/tensor.h"
#include "siren/rvq/tokenizer.h"

#include <json.hpp>

namespace siren::io {

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, version, integrity, missing_array, shape };
    CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct Manifest {
    uint32_t format_version = kCheckpointVersion;
    std::string kind;  // tokenizer, lm-group, lm-baseline, reward-probe, ...
    std::string config_hash;
    std::string parent_hash;
    std::string rng_state;
    nlohmann::json extra = nlohmann::json::object();
};

using NamedArrays = std::vector<std::pair<std::string, nn::Tensor>>;

struct Checkpoint {
    Manifest manifest;
    NamedArrays arrays;
    std::string hash;             // hex digest of the file contents, set on save/load
    bool config_mismatch = false;  // set by load when the expected config hash differs

    const nn::Tensor& array(const std::string& name) const;
    bool has(const std::string& name) const;
};

// Layout: "SIRNCKPT", u32 version, u64 manifest bytes, manifest JSON, u32
// array count, then per array {u32 name bytes, name, u8 dtype (1 = f32),
// u32 rank, i32 dims, little-endian f32 data}, then a u64 FNV-1a digest of
// everything before it.
std::string save_checkpoint(Checkpoint& ckpt, const std::string& path);
// An empty expected_config_hash skips the comparison.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_config_hash = "");

NamedArrays store_arrays(const nn::ParameterStore& ps, const std::string& prefix = "");
// Copies arrays named prefix + parameter name into the store; every parameter
// must be present with a matching shape.
void load_store(nn::ParameterStore& ps, const Checkpoint& ckpt, const std::string& prefix = "");

Checkpoint tokenizer_checkpoint(const rvq::Tokenizer& tok, const std::string& config_hash);
rvq::Tokenizer tokenizer_from_checkpoint(const Checkpoint& ckpt);
nlohmann::json tokenizer_config_json(const rvq::TokenizerConfig& cfg);
rvq::TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

std::string hex64(uint64_t v);
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL);

// Token-grid binary: "SIRNGRID", u32 version, u32 r, u32 l, row-major u16 codes.
void write_grid(const std::string& path, const rvq::CodeGrid& grid);
rvq::CodeGrid read_grid(const std::string& path);

}  // namespace siren::io
