#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "cclab/tensor.hpp"

namespace cclab {

using TensorMap = std::map<std::string, Tensor>;

struct OptimHyper {
    double lr_max = 1e-3;
    double lr_min = 1e-5;
    double warmup_frac = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    /// Decoupled weight-decay coefficient (lambda).
    double weight_decay = 0.0;
    std::size_t total_steps = 1000;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 0.0;

    void validate() const;
    std::size_t warmup_steps() const;

    friend bool operator==(const OptimHyper&, const OptimHyper&) = default;
};

struct Moments {
    Tensor m;
    Tensor v;
    friend bool operator==(const Moments&, const Moments&) = default;
};

struct OptimState {
    std::map<std::string, Moments> moments;
    /// Number of completed updates.
    std::uint64_t t = 0;

    static OptimState zeros_like(const TensorMap& params);
    friend bool operator==(const OptimState&, const OptimState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(std::string param)
        : std::runtime_error("non-finite gradient in '" + param + "'"), param_(std::move(param)) {}
    const std::string& param() const { return param_; }

private:
    std::string param_;
};

/// Linear warmup from 0 to lr_max over ceil(warmup_frac * total_steps) steps,
/// then cosine decay to lr_min at total_steps.
double schedule_lr(std::size_t step, const OptimHyper& hyper);

/// One AdamW update with learning rate `lr`:
///   m, v <- moments of g;  p_hat = p - lr * m_hat / (sqrt(v_hat) + eps);
///   p <- p_hat - weight_decay * lr * p   (2-D tensors only, p taken before the update).
/// Checks every gradient before touching anything; throws NonFiniteGradient.
void adamw_step(TensorMap& params, const TensorMap& grads, OptimState& state, const OptimHyper& hyper, double lr);

/// As above with lr = schedule_lr(state.t + 1).
double adamw_step(TensorMap& params, const TensorMap& grads, OptimState& state, const OptimHyper& hyper);

/// Scales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
double clip_global_norm(TensorMap& grads, double max_norm);

}  // namespace cclab
