#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

enum class Paradigm { CNN, TRANSFORMER };

inline const char* paradigm_name(Paradigm p) {
    return p == Paradigm::CNN ? "CNN" : "TRANSFORMER";
}

// Deterministic RNG. All transforms are stateless over the raw engine so that
// serializing the engine alone captures the whole stream position (the
// standard distributions may cache values, which would break bit-exact
// resume).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    double uniform() {  // [0, 1)
        return (double)(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two fresh draws per call, no cached state.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
        return mean + stddev * z;
    }

    // Uniform integer in [0, n).
    int64_t index(int64_t n) { return (int64_t)(uniform() * (double)n); }

    bool coin() { return uniform() < 0.5; }

    std::string serialize() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

private:
    std::mt19937_64 gen_;
};

// splitmix64; used to derive independent child seeds from (base, salt).
inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Named parameters plus non-trainable buffers, in registration order.
template <typename T>
class ParamSet {
public:
    explicit ParamSet(Paradigm p = Paradigm::CNN) : paradigm_(p) {}

    Paradigm paradigm() const { return paradigm_; }
    void set_paradigm(Paradigm p) { paradigm_ = p; }

    // Returned handles alias the stored tensor (shared impl), so they stay
    // valid across later registrations.
    Tensor<T> add_param(const std::string& name, Tensor<T> t) {
        check_unique(name);
        t.set_requires_grad(true);
        params_.emplace_back(name, std::move(t));
        return params_.back().second;
    }

    Tensor<T> add_buffer(const std::string& name, Tensor<T> t) {
        check_unique(name);
        buffers_.emplace_back(name, std::move(t));
        return buffers_.back().second;
    }

    std::vector<std::pair<std::string, Tensor<T>>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
    std::vector<std::pair<std::string, Tensor<T>>>& buffers() { return buffers_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const { return buffers_; }

    Tensor<T>* find(const std::string& name) {
        for (auto& kv : params_)
            if (kv.first == name) return &kv.second;
        for (auto& kv : buffers_)
            if (kv.first == name) return &kv.second;
        return nullptr;
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& kv : params_) n += kv.second.numel();
        return n;
    }

    void zero_grads() {
        for (auto& kv : params_) kv.second.zero_grad();
    }

private:
    void check_unique(const std::string& name) {
        for (const auto& kv : params_)
            if (kv.first == name) throw ConfigError("duplicate parameter name: " + name);
        for (const auto& kv : buffers_)
            if (kv.first == name) throw ConfigError("duplicate buffer name: " + name);
    }

    Paradigm paradigm_;
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::vector<std::pair<std::string, Tensor<T>>> buffers_;
};

// ---------------------------------------------------------------------------
// initializers; values are drawn in double so every dtype consumes the same
// stream, then cast to the target type
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / (double)fan_in);
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (auto& v : t.data()) v = (T)rng.uniform(-bound, bound);
    return t;
}

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); keeps features of constant input
// patches non-degenerate so LayerNorm never sees zero variance
template <typename T>
Tensor<T> uniform_bias(const Shape& shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt((double)fan_in);
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (auto& v : t.data()) v = (T)rng.uniform(-bound, bound);
    return t;
}

template <typename T>
Tensor<T> trunc_normal(const Shape& shape, double stddev, Rng& rng) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (auto& v : t.data()) {
        double z = rng.normal(0.0, stddev);
        while (std::abs(z) > 2.0 * stddev) z = rng.normal(0.0, stddev);
        v = (T)z;
    }
    return t;
}

}  // namespace ct
