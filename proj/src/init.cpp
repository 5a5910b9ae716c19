#include "cclab/init.hpp"

#include <cmath>
#include <stdexcept>

namespace cclab {

void InitScheme::validate() const {
    if (kind == Kind::FixedStd && !(value > 0.0))
        throw std::invalid_argument("fixed-std init needs sigma > 0, got " + std::to_string(value));
    if (!std::isfinite(value)) throw std::invalid_argument("init scheme value must be finite");
}

double InitScheme::std_for(std::size_t d_in) const {
    return kind == Kind::GammaRate ? std::pow(static_cast<double>(d_in), -value) : value;
}

static Tensor normal_matrix(std::size_t d_in, std::size_t d_out, double std, Rng& rng) {
    if (d_in == 0 || d_out == 0) throw std::invalid_argument("init: matrix extents must be positive");
    Tensor w({d_in, d_out});
    for (auto& x : w.data()) x = std * rng.normal();
    return w;
}

Tensor gamma_init(std::size_t d_in, std::size_t d_out, double gamma, Rng& rng) {
    if (!std::isfinite(gamma)) throw std::invalid_argument("gamma_init: gamma must be finite");
    return normal_matrix(d_in, d_out, std::pow(static_cast<double>(d_in), -gamma), rng);
}

Tensor fixed_std_init(std::size_t d_in, std::size_t d_out, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("fixed_std_init: sigma must be > 0");
    return normal_matrix(d_in, d_out, sigma, rng);
}

void apply_scheme(ModelParams& params, const InitScheme& scheme) {
    scheme.validate();
    for (auto& [name, t] : params.tensors) {
        if (t.rank() != 2) continue;
        Rng rng(derive_seed(scheme.seed, name));
        const std::size_t d_in = fan_in(params.config, name, t.shape());
        const double std = scheme.std_for(d_in);
        for (auto& x : t.data()) x = std * rng.normal();
    }
}

}  // namespace cclab
