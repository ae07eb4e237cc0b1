#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gtt/model.hpp"

namespace gtt::acceptance {

struct Context {
    std::filesystem::path work_dir;
};

/// Failed expectations and informational notes of one criterion.
struct Outcome {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    void expect(bool ok, const std::string& what)
    {
        if (!ok) failures.push_back(what);
    }
    void note(const std::string& text) { notes.push_back(text); }
    bool passed() const { return failures.empty(); }
};

Outcome parameter_counts(const Context& ctx);
Outcome gradient_correctness(const Context& ctx);
Outcome architecture_invariants(const Context& ctx);
Outcome revin_contracts(const Context& ctx);
Outcome data_pipeline(const Context& ctx);
Outcome trainability(const Context& ctx);
Outcome training_recipe(const Context& ctx);
Outcome protocol_conformance(const Context& ctx);
Outcome scaling_probe(const Context& ctx);

/// init_params plus Gaussian noise on every entry, so no term is trivially zero.
template <class T>
ModelParams<T> noisy_params(const ModelConfig& config, std::uint64_t seed, double scale)
{
    ModelParams<T> p = init_params<T>(config, seed);
    std::mt19937_64 rng(seed + 17);
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& np : p.named()) {
        for (T& v : np.tensor.mutable_values()) {
            v = static_cast<T>(static_cast<double>(v) + normal(rng));
        }
    }
    return p;
}

} // namespace gtt::acceptance
