#include "cclab/optim.hpp"

#include <cmath>
#include <numbers>

namespace cclab {

void OptimHyper::validate() const {
    auto need = [](bool ok, const char* msg) {
        if (!ok) throw std::invalid_argument(std::string("optim: ") + msg);
    };
    need(lr_min > 0.0 && lr_min <= lr_max, "need 0 < lr_min <= lr_max");
    need(warmup_frac >= 0.0 && warmup_frac < 1.0, "warmup_frac must be in [0, 1)");
    need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
    need(eps > 0.0, "eps must be positive");
    need(weight_decay >= 0.0, "weight decay must be >= 0");
    need(total_steps >= 1, "total_steps must be >= 1");
    need(grad_clip >= 0.0, "grad_clip must be >= 0");
}

std::size_t OptimHyper::warmup_steps() const {
    return static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
}

OptimState OptimState::zeros_like(const TensorMap& params) {
    OptimState s;
    for (const auto& [name, p] : params) s.moments.emplace(name, Moments{Tensor(p.shape()), Tensor(p.shape())});
    return s;
}

double schedule_lr(std::size_t step, const OptimHyper& hyper) {
    if (step > hyper.total_steps)
        throw std::out_of_range("schedule_lr: step " + std::to_string(step) + " beyond total_steps " +
                                std::to_string(hyper.total_steps));
    const std::size_t warm = hyper.warmup_steps();
    if (step < warm) return hyper.lr_max * static_cast<double>(step) / static_cast<double>(warm);
    if (hyper.total_steps == warm) return hyper.lr_max;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(hyper.total_steps - warm);
    return hyper.lr_min + 0.5 * (hyper.lr_max - hyper.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(TensorMap& params, const TensorMap& grads, OptimState& state, const OptimHyper& hyper, double lr) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw std::invalid_argument("adamw_step: no gradient for '" + name + "'");
        if (it->second.shape() != p.shape())
            throw std::invalid_argument("adamw_step: gradient shape mismatch for '" + name + "'");
        if (!it->second.all_finite()) throw NonFiniteGradient(name);
    }

    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name).storage();
        auto mit = state.moments.find(name);
        if (mit == state.moments.end())
            mit = state.moments.emplace(name, Moments{Tensor(p.shape()), Tensor(p.shape())}).first;
        auto& m = mit->second.m.storage();
        auto& v = mit->second.v.storage();
        auto& x = p.storage();
        const double decay = p.rank() == 2 ? hyper.weight_decay * lr : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            // theta_hat - decay * theta, grouped so zero gradients shrink by exactly (1 - decay)
            x[i] = (1.0 - decay) * x[i] - lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

double adamw_step(TensorMap& params, const TensorMap& grads, OptimState& state, const OptimHyper& hyper) {
    const double lr = schedule_lr(static_cast<std::size_t>(state.t + 1), hyper);
    adamw_step(params, grads, state, hyper, lr);
    return lr;
}

double clip_global_norm(TensorMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, g] : grads)
        for (double v : g.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, g] : grads)
            for (auto& v : g.data()) v *= s;
    }
    return norm;
}

}  // namespace cclab
