#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace cclab {

/// mt19937_64 with portable uniform/normal/integer draws. The whole state lives in
/// the engine, so `state()`/`restore()` reproduce the stream exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal();
    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n);

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic sub-seed for a named stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace cclab
