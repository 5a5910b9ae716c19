#include "cclab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace cclab::theory {

void CircuitEnsemble::validate() const {
    if (circuits.empty()) throw std::invalid_argument("circuit ensemble is empty");
    if (total_depth < 1) throw std::invalid_argument("total depth L must be >= 1");
    if (!(mass_small > 0.0) || !(mass_small < mass_big) || !(mass_big <= 1.0))
        throw std::invalid_argument("need 0 < eps < mass_big <= 1");
    for (const auto& c : circuits) {
        if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw std::invalid_argument("circuit weights must be > 0");
        if (c.depth > total_depth) throw std::invalid_argument("circuit depth exceeds total depth L");
    }
}

GammaExponent::GammaExponent(double gamma) : gamma_(gamma) {
    if (!(gamma > -1.5) || !std::isfinite(gamma))
        throw std::invalid_argument("norm exponent gamma must exceed -3/2, got " + std::to_string(gamma));
}

double lp_quasi_norm(const std::vector<double>& v, double p) {
    if (!(p > 0.0)) throw std::invalid_argument("lp_quasi_norm: p must be > 0");
    // factor out the max for range safety
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, std::abs(x));
    if (mx == 0.0) return 0.0;
    double s = 0.0;
    for (double x : v) s += std::pow(std::abs(x) / mx, p);
    return mx * std::pow(s, 1.0 / p);
}

double ensemble_log_norm(const CircuitEnsemble& e, const GammaExponent& g) {
    e.validate();
    const double p = g.p();
    const double log_ratio = std::log(e.mass_big / e.mass_small);
    std::vector<double> terms;
    terms.reserve(e.circuits.size());
    for (const auto& c : e.circuits) terms.push_back(p * (std::log(c.weight) + static_cast<double>(c.depth) * log_ratio));
    const double mx = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    const double log_norm = -static_cast<double>(e.total_depth) * std::log(e.mass_big) + (mx + std::log(s)) / p;
    if (!std::isfinite(log_norm)) throw std::overflow_error("ensemble norm overflows even in log space");
    return log_norm;
}

double ensemble_norm(const CircuitEnsemble& e, const GammaExponent& g) {
    const double ln = ensemble_log_norm(e, g);
    if (ln > std::log(std::numeric_limits<double>::max()))
        throw std::overflow_error("ensemble norm exceeds double range (log value " + std::to_string(ln) + ")");
    return std::exp(ln);
}

std::size_t preferred_ensemble(const std::vector<CircuitEnsemble>& candidates, const GammaExponent& g) {
    if (candidates.empty()) throw std::invalid_argument("preferred_ensemble: no candidates");
    for (const auto& c : candidates)
        if (c.total_depth != candidates.front().total_depth || c.mass_small != candidates.front().mass_small)
            throw std::invalid_argument("preferred_ensemble: candidates must share L and eps");
    // compare in log space; the norm is monotone in its log
    std::size_t best = 0;
    double best_val = ensemble_log_norm(candidates[0], g);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double v = ensemble_log_norm(candidates[i], g);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    return best;
}

Regime limit_check(double gamma) {
    GammaExponent{gamma};
    if (std::abs(gamma + 0.5) <= 1e-12) return Regime::Kernel;
    if (std::abs(gamma + 1.0) <= 1e-12) return Regime::MeanField;
    return Regime::Interpolated;
}

const char* regime_name(Regime r) {
    switch (r) {
    case Regime::Kernel: return "kernel";
    case Regime::MeanField: return "mean_field";
    case Regime::Interpolated: return "interpolated";
    }
    return "?";
}

CircuitEnsemble dense_shallow(std::size_t n, double weight, std::size_t total_depth, double eps) {
    CircuitEnsemble e;
    e.circuits.assign(n, Circuit{weight, 1});
    e.total_depth = total_depth;
    e.mass_small = eps;
    return e;
}

CircuitEnsemble sparse_deep(std::size_t total_depth, double eps) {
    CircuitEnsemble e;
    e.circuits = {Circuit{1.0, total_depth}};
    e.total_depth = total_depth;
    e.mass_small = eps;
    return e;
}

CircuitEnsemble ensemble_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("ensemble must be a JSON object");
    static const std::set<std::string> allowed{"L", "eps", "mass_big", "circuits"};
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw std::invalid_argument("ensemble: unknown key '" + key + "'");
    CircuitEnsemble e;
    try {
        e.total_depth = j.at("L").get<std::size_t>();
        e.mass_small = j.at("eps").get<double>();
        e.mass_big = j.value("mass_big", 0.9);
        for (const auto& c : j.at("circuits")) {
            for (const auto& [key, _] : c.items())
                if (key != "c" && key != "Li") throw std::invalid_argument("circuit: unknown key '" + key + "'");
            e.circuits.push_back({c.at("c").get<double>(), c.at("Li").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& ex) {
        throw std::invalid_argument(std::string("ensemble: ") + ex.what());
    }
    e.validate();
    return e;
}

nlohmann::json to_json(const CircuitEnsemble& e) {
    nlohmann::json circuits = nlohmann::json::array();
    for (const auto& c : e.circuits) circuits.push_back({{"c", c.weight}, {"Li", c.depth}});
    return {{"L", e.total_depth}, {"eps", e.mass_small}, {"mass_big", e.mass_big}, {"circuits", circuits}};
}

}  // namespace cclab::theory
