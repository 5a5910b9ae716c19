#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cclab/model.hpp"
#include "cclab/tensor.hpp"

namespace cclab {

/// Undefined statistic (constant input, zero matrix, ...).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct CondensationDegree {
    /// (1 / (d_in d_out)) * sum over all row pairs (i, j) of cos(W_i, W_j).
    double literal = 0.0;
    /// The same sum divided by the number of contributing (nonzero-row) pairs.
    double pair_mean = 0.0;
};

/// Rows with norm below 1e-12 contribute zero to every pair.
CondensationDegree condensation_dc(const Tensor& w);

/// Singular values, descending, by one-sided Jacobi rotations.
std::vector<double> singular_values(const Tensor& w);

/// Largest singular value over the sum of singular values.
double dominance_ds(const Tensor& w);

/// K x K cosine similarities between the embedding rows `ids`. Zero rows give 0.
Tensor embedding_similarity(const Tensor& embedding, const std::vector<TokenId>& ids);
/// Mean of the off-diagonal entries of a square matrix.
double mean_off_diagonal(const Tensor& sim);

/// 1-based ranks; tied values share their average rank.
std::vector<double> average_ranks(const std::vector<double>& xs);
/// Pearson correlation of average ranks.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct NormProfile {
    double global = 0.0;
    std::map<std::string, double> per_tensor;
};
NormProfile param_norm_profile(const ModelParams& params);

struct ScalingPoint {
    double size;
    double loss;
};

/// loss ~= amplitude * size^(-exponent) + floor.
struct PowerFit {
    double amplitude = 0.0;
    double exponent = 0.0;
    double floor = 0.0;
    /// RMS of ln(loss) - ln(prediction).
    double residual = 0.0;

    double predict(double size) const;
};

/// Without a floor: least squares on (ln size, ln loss). With a floor: grid search over
/// floor in [0, min loss), log-linear fit of (loss - floor) at each candidate, then a
/// golden-section refinement of the log-space residual.
PowerFit fit_power_law(const std::vector<ScalingPoint>& points, bool with_floor);

enum class LayerMetric { Dc, Ds };
LayerMetric parse_layer_metric(const std::string& name);
const char* layer_metric_name(LayerMetric m);

struct LayerValue {
    std::size_t layer;
    std::string matrix;  ///< "wq" or "wk"
    double value;
    friend bool operator==(const LayerValue&, const LayerValue&) = default;
};

/// Per-layer D_c (literal) or D_s of the query and key projections.
std::vector<LayerValue> layer_profile(const ModelParams& params, LayerMetric metric);
/// Rows `layer,matrix,metric,value`.
std::string layer_profile_csv(const std::vector<LayerValue>& rows, LayerMetric metric);

}  // namespace cclab
