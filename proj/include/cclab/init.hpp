#pragma once

#include <cstdint>

#include "cclab/model.hpp"
#include "cclab/rng.hpp"
#include "cclab/tensor.hpp"

namespace cclab {

/// How trainable matrices are drawn. GammaRate: std = d_in^-gamma. FixedStd: std = sigma.
struct InitScheme {
    enum class Kind { GammaRate, FixedStd };
    Kind kind = Kind::GammaRate;
    double value = 0.5;
    std::uint64_t seed = 0;

    static InitScheme gamma_rate(double gamma, std::uint64_t seed) { return {Kind::GammaRate, gamma, seed}; }
    static InitScheme fixed_std(double sigma, std::uint64_t seed) { return {Kind::FixedStd, sigma, seed}; }

    void validate() const;
    /// Standard deviation this scheme assigns to a matrix with fan-in `d_in`.
    double std_for(std::size_t d_in) const;

    friend bool operator==(const InitScheme&, const InitScheme&) = default;
};

Tensor gamma_init(std::size_t d_in, std::size_t d_out, double gamma, Rng& rng);
Tensor fixed_std_init(std::size_t d_in, std::size_t d_out, double sigma, Rng& rng);

/// Draws every 2-D parameter from the scheme with its own fan-in (d_model for the
/// token embedding) and a sub-seed derived from the scheme seed and the tensor name.
/// 1-D parameters are left untouched.
void apply_scheme(ModelParams& params, const InitScheme& scheme);

}  // namespace cclab
