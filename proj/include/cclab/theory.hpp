#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cclab::theory {

struct Circuit {
    double weight;      ///< c_i > 0
    std::size_t depth;  ///< L_i, layers where the component is non-trivial
};

/// Weighted sum of product measures, reduced to its weights and depths.
struct CircuitEnsemble {
    std::vector<Circuit> circuits;
    std::size_t total_depth = 1;  ///< L
    double mass_small = 0.01;     ///< epsilon
    double mass_big = 0.9;

    void validate() const;
};

/// Norm exponent gamma > -3/2 and its l^p order p = 3 + 2 gamma.
class GammaExponent {
public:
    explicit GammaExponent(double gamma);
    double gamma() const { return gamma_; }
    double p() const { return 3.0 + 2.0 * gamma_; }

private:
    double gamma_;
};

/// (sum |v_i|^p)^(1/p); a quasi-norm for p in (0, 1).
double lp_quasi_norm(const std::vector<double>& v, double p);

/// log of mass_big^-L * || c_i (mass_big / eps)^L_i ||_p, evaluated without exponentiating.
double ensemble_log_norm(const CircuitEnsemble& e, const GammaExponent& g);

/// exp(ensemble_log_norm); throws std::overflow_error if the value is not representable.
double ensemble_norm(const CircuitEnsemble& e, const GammaExponent& g);

/// Index of the minimum-norm candidate, lowest index on ties.
/// Candidates must share total depth and epsilon.
std::size_t preferred_ensemble(const std::vector<CircuitEnsemble>& candidates, const GammaExponent& g);

enum class Regime { Kernel, MeanField, Interpolated };
/// gamma = -1/2 -> Kernel (RKHS), gamma = -1 -> MeanField (Barron), else Interpolated.
Regime limit_check(double gamma);
const char* regime_name(Regime r);

/// Dense-shallow: n circuits of weight `weight` at depth 1. Sparse-deep: one unit circuit at depth L.
CircuitEnsemble dense_shallow(std::size_t n, double weight, std::size_t total_depth, double eps);
CircuitEnsemble sparse_deep(std::size_t total_depth, double eps);

/// {"L":int, "eps":float, "mass_big":float, "circuits":[{"c":float,"Li":int}, ...]}
CircuitEnsemble ensemble_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CircuitEnsemble& e);

}  // namespace cclab::theory
