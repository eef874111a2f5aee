#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "siren/nn/tensor.h"

namespace siren::nn {

template <typename T>
struct BasicParameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
};

using Parameter = BasicParameter<float>;

// Owns a model's parameters. Handles are plain indices so a store (and any
// struct holding handles into it) stays valid under copy.
template <typename T>
class BasicParameterStore {
public:
    int add(const std::string& name, BasicTensor<T> init) {
        if (find(name) >= 0) {
            throw std::invalid_argument("parameter name already registered: " + name);
        }
        BasicParameter<T> p;
        p.name = name;
        p.grad = BasicTensor<T>(init.shape);
        p.value = std::move(init);
        params_.push_back(std::move(p));
        index_.emplace(name, static_cast<int>(params_.size()) - 1);
        return static_cast<int>(params_.size()) - 1;
    }

    int find(const std::string& name) const {
        const auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    BasicParameter<T>& at(const std::string& name) {
        const int i = find(name);
        if (i < 0) {
            throw std::out_of_range("no parameter named " + name);
        }
        return params_[static_cast<size_t>(i)];
    }
    const BasicParameter<T>& at(const std::string& name) const {
        const int i = find(name);
        if (i < 0) {
            throw std::out_of_range("no parameter named " + name);
        }
        return params_[static_cast<size_t>(i)];
    }

    BasicParameter<T>& operator[](int i) { return params_[static_cast<size_t>(i)]; }
    const BasicParameter<T>& operator[](int i) const { return params_[static_cast<size_t>(i)]; }

    size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::vector<BasicParameter<T>*> pointers() {
        std::vector<BasicParameter<T>*> out;
        out.reserve(params_.size());
        for (auto& p : params_) {
            out.push_back(&p);
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) {
            std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
        }
    }

    size_t total_elements() const {
        size_t n = 0;
        for (const auto& p : params_) {
            n += p.value.numel();
        }
        return n;
    }

private:
    std::vector<BasicParameter<T>> params_;
    std::unordered_map<std::string, int> index_;
};

using ParameterStore = BasicParameterStore<float>;

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0) {
    return mix_seed(mix_seed(master ^ mix_seed(a)) ^ mix_seed(b + 0x632be59bd9b4e019ULL));
}

template <typename T>
BasicTensor<T> normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
    BasicTensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : t.data) {
        x = static_cast<T>(dist(rng));
    }
    return t;
}

template <typename T>
BasicTensor<T> uniform_tensor(std::vector<int> shape, double lo, double hi, Rng& rng) {
    BasicTensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : t.data) {
        x = static_cast<T>(dist(rng));
    }
    return t;
}

}  // namespace siren::nn
