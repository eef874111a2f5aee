#include "siren/io/checkpoint.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace siren::io {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'R', 'N', 'C', 'K', 'P', 'T'};
constexpr char kGridMagic[8] = {'S', 'I', 'R', 'N', 'G', 'R', 'I', 'D'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof v);
    }
    std::vector<char>& buffer() { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const std::vector<char>& buf, size_t end, const std::string& path) : buf_(buf), end_(end), path_(path) {}
    void bytes(void* p, size_t n) {
        if (pos_ + n > end_) {
            throw CheckpointError(CheckpointError::Kind::integrity, "checkpoint '" + path_ + "' is truncated");
        }
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof v);
        return v;
    }

private:
    const std::vector<char>& buf_;
    size_t end_;
    size_t pos_ = 0;
    std::string path_;
};

std::vector<char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    }
    return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& buf) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw CheckpointError(CheckpointError::Kind::io, "cannot write '" + tmp + "'");
        }
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        f.flush();
        if (!f) {
            throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + tmp + "'");
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw CheckpointError(CheckpointError::Kind::io, "cannot move checkpoint into place at '" + path + "'");
    }
}

nlohmann::json manifest_json(const Manifest& m) {
    return {{"format_version", m.format_version}, {"kind", m.kind},           {"config_hash", m.config_hash},
            {"parent_hash", m.parent_hash},       {"rng_state", m.rng_state}, {"extra", m.extra}};
}

}  // namespace

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

const nn::Tensor& Checkpoint::array(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) {
            return t;
        }
    }
    throw CheckpointError(CheckpointError::Kind::missing_array, "checkpoint has no array '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

std::string save_checkpoint(Checkpoint& ckpt, const std::string& path) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.pod<uint32_t>(kCheckpointVersion);
    ckpt.manifest.format_version = kCheckpointVersion;
    const std::string man = manifest_json(ckpt.manifest).dump();
    w.pod<uint64_t>(man.size());
    w.bytes(man.data(), man.size());
    w.pod<uint32_t>(static_cast<uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, t] : ckpt.arrays) {
        w.pod<uint32_t>(static_cast<uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.pod<uint8_t>(1);
        w.pod<uint32_t>(static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) {
            w.pod<int32_t>(d);
        }
        if (nn::Tensor::count(t.shape) != t.data.size()) {
            throw CheckpointError(CheckpointError::Kind::shape, "array '" + name + "' has inconsistent shape");
        }
        w.bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    const uint64_t digest = fnv1a(w.buffer().data(), w.buffer().size());
    w.pod<uint64_t>(digest);
    write_file(path, w.buffer());
    ckpt.hash = hex64(digest);
    return ckpt.hash;
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_config_hash) {
    const std::vector<char> buf = read_file(path);
    if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        if (buf.size() < sizeof kMagic) {
            throw CheckpointError(CheckpointError::Kind::integrity, "checkpoint '" + path + "' is truncated");
        }
        throw CheckpointError(CheckpointError::Kind::bad_magic, "'" + path + "' is not a checkpoint file");
    }
    if (buf.size() < sizeof kMagic + sizeof(uint32_t) + sizeof(uint64_t)) {
        throw CheckpointError(CheckpointError::Kind::integrity, "checkpoint '" + path + "' is truncated");
    }
    uint32_t version = 0;
    std::memcpy(&version, buf.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::version, "checkpoint '" + path + "' has format version " +
                                                                  std::to_string(version) + ", expected " +
                                                                  std::to_string(kCheckpointVersion));
    }
    const size_t body = buf.size() - sizeof(uint64_t);
    uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, sizeof stored);
    const uint64_t digest = fnv1a(buf.data(), body);
    if (stored != digest) {
        throw CheckpointError(CheckpointError::Kind::integrity,
                              "checkpoint '" + path + "' failed its integrity check (truncated or corrupt)");
    }

    Reader r(buf, body, path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    r.pod<uint32_t>();
    const auto man_len = r.pod<uint64_t>();
    if (man_len > body) {
        throw CheckpointError(CheckpointError::Kind::integrity, "checkpoint '" + path + "' has a bad manifest size");
    }
    std::string man(man_len, '\0');
    r.bytes(man.data(), man_len);
    Checkpoint ck;
    try {
        const auto j = nlohmann::json::parse(man);
        ck.manifest.format_version = j.at("format_version").get<uint32_t>();
        ck.manifest.kind = j.at("kind").get<std::string>();
        ck.manifest.config_hash = j.at("config_hash").get<std::string>();
        ck.manifest.parent_hash = j.at("parent_hash").get<std::string>();
        ck.manifest.rng_state = j.at("rng_state").get<std::string>();
        ck.manifest.extra = j.at("extra");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::integrity,
                              "checkpoint '" + path + "' has an unreadable manifest: " + e.what());
    }
    const auto count = r.pod<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        const auto nlen = r.pod<uint32_t>();
        if (nlen > body) {
            throw CheckpointError(CheckpointError::Kind::integrity, "checkpoint '" + path + "' has a bad name size");
        }
        std::string name(nlen, '\0');
        r.bytes(name.data(), nlen);
        const auto dtype = r.pod<uint8_t>();
        if (dtype != 1) {
            throw CheckpointError(CheckpointError::Kind::integrity,
                                  "array '" + name + "' has unknown dtype tag " + std::to_string(dtype));
        }
        const auto rank = r.pod<uint32_t>();
        if (rank > 8) {
            throw CheckpointError(CheckpointError::Kind::integrity, "array '" + name + "' has bad rank");
        }
        std::vector<int> shape(rank);
        size_t n = 1;
        for (auto& d : shape) {
            d = r.pod<int32_t>();
            if (d < 0) {
                throw CheckpointError(CheckpointError::Kind::integrity, "array '" + name + "' has a negative dim");
            }
            n *= static_cast<size_t>(d);
        }
        if (n * sizeof(float) > body) {
            throw CheckpointError(CheckpointError::Kind::integrity, "array '" + name + "' is larger than the file");
        }
        nn::Tensor t(shape);
        r.bytes(t.data.data(), n * sizeof(float));
        ck.arrays.emplace_back(std::move(name), std::move(t));
    }
    ck.hash = hex64(digest);
    ck.config_mismatch = !expected_config_hash.empty() && expected_config_hash != ck.manifest.config_hash;
    return ck;
}

NamedArrays store_arrays(const nn::ParameterStore& ps, const std::string& prefix) {
    NamedArrays out;
    for (const auto& p : ps) {
        out.emplace_back(prefix + p.name, p.value);
    }
    return out;
}

void load_store(nn::ParameterStore& ps, const Checkpoint& ckpt, const std::string& prefix) {
    for (auto& p : ps) {
        const nn::Tensor& t = ckpt.array(prefix + p.name);
        if (t.shape != p.value.shape) {
            throw CheckpointError(CheckpointError::Kind::shape, "array '" + prefix + p.name + "' has shape " +
                                                                    nn::shape_string(t.shape) + ", expected " +
                                                                    nn::shape_string(p.value.shape));
        }
        p.value = t;
    }
}

nlohmann::json tokenizer_config_json(const rvq::TokenizerConfig& c) {
    return {{"vocab", c.vocab},       {"code_dim", c.code_dim},       {"depth", c.depth},
            {"channels", c.channels}, {"strides", c.strides},         {"lr", c.lr},
            {"commitment", c.commitment}, {"ema_decay", c.ema_decay}, {"batch", c.batch},
            {"crop", c.crop},         {"steps", c.steps},             {"reseed_every", c.reseed_every},
            {"seed", c.seed}};
}

rvq::TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
    rvq::TokenizerConfig c;
    c.vocab = j.at("vocab");
    c.code_dim = j.at("code_dim");
    c.depth = j.at("depth");
    c.channels = j.at("channels");
    c.strides = j.at("strides").get<std::vector<int>>();
    c.lr = j.at("lr");
    c.commitment = j.at("commitment");
    c.ema_decay = j.at("ema_decay");
    c.batch = j.at("batch");
    c.crop = j.at("crop");
    c.steps = j.at("steps");
    c.reseed_every = j.at("reseed_every");
    c.seed = j.at("seed");
    return c;
}

Checkpoint tokenizer_checkpoint(const rvq::Tokenizer& tok, const std::string& config_hash) {
    Checkpoint ck;
    ck.manifest.kind = "tokenizer";
    ck.manifest.config_hash = config_hash;
    ck.manifest.extra = {{"config", tokenizer_config_json(tok.config())}, {"trained_steps", tok.trained_steps()}};
    ck.arrays = tok.state();
    return ck;
}

rvq::Tokenizer tokenizer_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.manifest.kind != "tokenizer") {
        throw CheckpointError(CheckpointError::Kind::integrity,
                              "expected a tokenizer checkpoint, got '" + ckpt.manifest.kind + "'");
    }
    rvq::Tokenizer tok(tokenizer_config_from_json(ckpt.manifest.extra.at("config")));
    try {
        tok.load_state(ckpt.arrays, ckpt.manifest.extra.at("trained_steps").get<int64_t>());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(CheckpointError::Kind::missing_array, e.what());
    }
    return tok;
}

void write_grid(const std::string& path, const rvq::CodeGrid& grid) {
    Writer w;
    w.bytes(kGridMagic, sizeof kGridMagic);
    w.pod<uint32_t>(1);
    w.pod<uint32_t>(static_cast<uint32_t>(grid.layers));
    w.pod<uint32_t>(static_cast<uint32_t>(grid.length));
    for (int c : grid.codes) {
        if (c < 0 || c > 0xffff) {
            throw std::out_of_range("code " + std::to_string(c) + " does not fit the grid format");
        }
        w.pod<uint16_t>(static_cast<uint16_t>(c));
    }
    write_file(path, w.buffer());
}

rvq::CodeGrid read_grid(const std::string& path) {
    const auto buf = read_file(path);
    if (buf.size() < 20 || std::memcmp(buf.data(), kGridMagic, sizeof kGridMagic) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic, "'" + path + "' is not a token-grid file");
    }
    Reader r(buf, buf.size(), path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    const auto version = r.pod<uint32_t>();
    if (version != 1) {
        throw CheckpointError(CheckpointError::Kind::version, "token grid version " + std::to_string(version));
    }
    rvq::CodeGrid g;
    g.layers = static_cast<int>(r.pod<uint32_t>());
    g.length = static_cast<int>(r.pod<uint32_t>());
    const size_t n = static_cast<size_t>(g.layers) * static_cast<size_t>(g.length);
    if (buf.size() != 20 + 2 * n) {
        throw CheckpointError(CheckpointError::Kind::integrity, "token grid '" + path + "' has the wrong size");
    }
    g.codes.resize(n);
    for (auto& c : g.codes) {
        c = r.pod<uint16_t>();
    }
    return g;
}

}  // namespace siren::io
