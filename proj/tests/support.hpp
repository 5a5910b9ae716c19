#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cclab/grad_check.hpp"
#include "cclab/graph.hpp"
#include "cclab/model.hpp"
#include "cclab/rng.hpp"

namespace cclab::testing {

Tensor random_uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

/// One engine primitive wrapped as loss = sum(op(x) * r) with random weights r.
struct PrimitiveCase {
    std::string name;
    std::function<GradCheckReport(std::uint64_t seed)> run;
};
std::vector<PrimitiveCase> primitive_cases();

/// Tiny one-layer decoder; the seed picks inputs, weights and the norm options.
ModelConfig tiny_model_config(std::uint64_t seed);
GradCheckReport model_grad_check(std::uint64_t seed);

/// Elementwise product whose backward scales grad_a by 1.01.
std::shared_ptr<const CustomOp> corrupted_multiply();
GradCheckReport corrupted_multiply_check(std::uint64_t seed);

/// Unique scratch directory under the system temp path, created on demand.
std::string scratch_dir(const std::string& tag);

}  // namespace cclab::testing

#include "cclab/theory.hpp"

namespace cclab::testing {

/// Dense-shallow vs sparse-deep preference flip between gamma = -1 and gamma = -1/2.
struct FlipInstance {
    std::size_t n, depth;
    double eps;
};
/// Brute-force sweep over N in [2,64], L in [2,8], eps in {1e-1,1e-2,1e-3}: first instance
/// whose argmin is sparse-deep at gamma_small and dense-shallow at gamma_large.
/// `unit_weights` selects c_i = 1 for the dense family, otherwise c_i = 1/N.
std::optional<FlipInstance> find_preference_flip(bool unit_weights, double gamma_small = -1.0,
                                                 double gamma_large = -0.5);

}  // namespace cclab::testing
