#include "cclab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace cclab {

namespace {

constexpr double kZeroRow = 1e-12;

void require_matrix(const Tensor& w, const char* what) {
    if (w.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected a 2-D matrix, got " + shape_str(w.shape()));
}

}  // namespace

CondensationDegree condensation_dc(const Tensor& w) {
    require_matrix(w, "condensation_dc");
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    // sum_{i,j} <u_i, u_j> = |sum_i u_i|^2 for unit rows u_i
    std::vector<double> acc(cols, 0.0);
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sq += w.at(i, j) * w.at(i, j);
        const double norm = std::sqrt(sq);
        if (norm < kZeroRow) continue;
        ++nonzero;
        for (std::size_t j = 0; j < cols; ++j) acc[j] += w.at(i, j) / norm;
    }
    double total = 0.0;
    for (double a : acc) total += a * a;
    CondensationDegree dc;
    dc.literal = total / static_cast<double>(rows * cols);
    dc.pair_mean = nonzero ? total / static_cast<double>(nonzero * nonzero) : 0.0;
    return dc;
}

std::vector<double> singular_values(const Tensor& w) {
    require_matrix(w, "singular_values");
    // Work on columns of the orientation with fewer columns.
    const bool flip = w.dim(1) > w.dim(0);
    const std::size_t m = flip ? w.dim(1) : w.dim(0);
    const std::size_t n = flip ? w.dim(0) : w.dim(1);
    std::vector<std::vector<double>> col(n, std::vector<double>(m));
    for (std::size_t i = 0; i < w.dim(0); ++i)
        for (std::size_t j = 0; j < w.dim(1); ++j) {
            if (flip)
                col[i][j] = w.at(i, j);
            else
                col[j][i] = w.at(i, j);
        }

    constexpr double tol = 1e-15;
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    alpha += col[p][k] * col[p][k];
                    beta += col[q][k] * col[q][k];
                    gamma += col[p][k] * col[q][k];
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t k = 0; k < m; ++k) {
                    const double a = col[p][k], b = col[q][k];
                    col[p][k] = c * a - s * b;
                    col[q][k] = s * a + c * b;
                }
            }
        if (!rotated) break;
    }
    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double sq = 0.0;
        for (double v : col[j]) sq += v * v;
        sv[j] = std::sqrt(sq);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

double dominance_ds(const Tensor& w) {
    const auto sv = singular_values(w);
    const double total = std::accumulate(sv.begin(), sv.end(), 0.0);
    if (!(total > 0.0)) throw UndefinedMetric("dominance_ds: zero matrix has no dominant direction");
    return sv.front() / total;
}

Tensor embedding_similarity(const Tensor& embedding, const std::vector<TokenId>& ids) {
    require_matrix(embedding, "embedding_similarity");
    if (ids.size() < 2) throw std::invalid_argument("embedding_similarity: need at least two ids");
    if (std::set<TokenId>(ids.begin(), ids.end()).size() != ids.size())
        throw std::invalid_argument("embedding_similarity: duplicate ids");
    const std::size_t V = embedding.dim(0), D = embedding.dim(1), K = ids.size();
    std::vector<std::vector<double>> unit(K, std::vector<double>(D, 0.0));
    for (std::size_t a = 0; a < K; ++a) {
        if (ids[a] < 0 || static_cast<std::size_t>(ids[a]) >= V)
            throw std::invalid_argument("embedding_similarity: id " + std::to_string(ids[a]) + " out of range");
        const auto row = static_cast<std::size_t>(ids[a]);
        double sq = 0.0;
        for (std::size_t j = 0; j < D; ++j) sq += embedding.at(row, j) * embedding.at(row, j);
        const double norm = std::sqrt(sq);
        if (norm < kZeroRow) continue;
        for (std::size_t j = 0; j < D; ++j) unit[a][j] = embedding.at(row, j) / norm;
    }
    Tensor sim({K, K});
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = a; b < K; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += unit[a][j] * unit[b][j];
            sim.at(a, b) = sim.at(b, a) = dot;
        }
    return sim;
}

double mean_off_diagonal(const Tensor& sim) {
    if (sim.rank() != 2 || sim.dim(0) != sim.dim(1) || sim.dim(0) < 2)
        throw std::invalid_argument("mean_off_diagonal: need a square matrix of size >= 2");
    const std::size_t K = sim.dim(0);
    double s = 0.0;
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b)
            if (a != b) s += sim.at(a, b);
    return s / static_cast<double>(K * (K - 1));
}

// ---------------------------------------------------------------------------

std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("spearman: need at least 3 pairs");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double n = static_cast<double>(rx.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("spearman: undefined for a constant series");
    return sxy / std::sqrt(sxx * syy);
}

NormProfile param_norm_profile(const ModelParams& params) {
    NormProfile p;
    double sq = 0.0;
    for (const auto& [name, t] : params.tensors) {
        const double f = frobenius_norm(t);
        p.per_tensor[name] = f;
        sq += f * f;
    }
    p.global = std::sqrt(sq);
    return p;
}

// ---------------------------------------------------------------------------

double PowerFit::predict(double size) const { return amplitude * std::pow(size, -exponent) + floor; }

namespace {

struct LogLinear {
    double amplitude, exponent;
};

LogLinear fit_log_linear(const std::vector<ScalingPoint>& pts, double floor) {
    const double n = static_cast<double>(pts.size());
    double sx = 0.0, sy = 0.0;
    for (const auto& p : pts) {
        sx += std::log(p.size);
        sy += std::log(p.loss - floor);
    }
    const double mx = sx / n, my = sy / n;
    double sxy = 0.0, sxx = 0.0;
    for (const auto& p : pts) {
        const double dx = std::log(p.size) - mx;
        sxy += dx * (std::log(p.loss - floor) - my);
        sxx += dx * dx;
    }
    const double slope = sxy / sxx;
    return {std::exp(my - slope * mx), -slope};
}

double log_residual(const std::vector<ScalingPoint>& pts, const PowerFit& f) {
    double s = 0.0;
    for (const auto& p : pts) {
        const double r = std::log(p.loss) - std::log(f.predict(p.size));
        s += r * r;
    }
    return std::sqrt(s / static_cast<double>(pts.size()));
}

PowerFit fit_with_floor(const std::vector<ScalingPoint>& pts, double floor) {
    const auto ll = fit_log_linear(pts, floor);
    PowerFit f{ll.amplitude, ll.exponent, floor, 0.0};
    f.residual = log_residual(pts, f);
    return f;
}

}  // namespace

PowerFit fit_power_law(const std::vector<ScalingPoint>& points, bool with_floor) {
    const std::size_t need = with_floor ? 4 : 3;
    if (points.size() < need)
        throw std::invalid_argument("fit_power_law: need at least " + std::to_string(need) + " points");
    std::set<double> sizes;
    for (const auto& p : points) {
        if (!(p.size > 0.0) || !(p.loss > 0.0)) throw std::invalid_argument("fit_power_law: sizes and losses must be > 0");
        sizes.insert(p.size);
    }
    if (sizes.size() != points.size()) throw std::invalid_argument("fit_power_law: sizes must be distinct");

    if (!with_floor) return fit_with_floor(points, 0.0);

    double min_loss = points.front().loss;
    for (const auto& p : points) min_loss = std::min(min_loss, p.loss);
    constexpr int grid = 400;
    const double step = min_loss / grid;
    int best = 0;
    double best_res = fit_with_floor(points, 0.0).residual;
    for (int i = 1; i < grid; ++i) {
        const double r = fit_with_floor(points, step * i).residual;
        if (r < best_res) {
            best_res = r;
            best = i;
        }
    }
    // golden-section refinement inside the neighbouring grid cells
    double lo = step * std::max(0, best - 1);
    double hi = std::min(step * (best + 1), min_loss * (1.0 - 1e-12));
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = fit_with_floor(points, x1).residual, f2 = fit_with_floor(points, x2).residual;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, min_loss); ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = fit_with_floor(points, x1).residual;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = fit_with_floor(points, x2).residual;
        }
    }
    PowerFit refined = fit_with_floor(points, 0.5 * (lo + hi));
    PowerFit grid_best = fit_with_floor(points, step * best);
    return refined.residual <= grid_best.residual ? refined : grid_best;
}

// ---------------------------------------------------------------------------

LayerMetric parse_layer_metric(const std::string& name) {
    if (name == "dc") return LayerMetric::Dc;
    if (name == "ds") return LayerMetric::Ds;
    throw std::invalid_argument("unknown layer metric '" + name + "' (expected dc or ds)");
}

const char* layer_metric_name(LayerMetric m) { return m == LayerMetric::Dc ? "dc" : "ds"; }

std::vector<LayerValue> layer_profile(const ModelParams& params, LayerMetric metric) {
    std::vector<LayerValue> out;
    for (std::size_t l = 0; l < params.config.n_layers; ++l)
        for (const char* m : {"wq", "wk"}) {
            const Tensor& w = params.at(names::layer(l, m));
            const double v = metric == LayerMetric::Dc ? condensation_dc(w).literal : dominance_ds(w);
            out.push_back({l, m, v});
        }
    return out;
}

std::string layer_profile_csv(const std::vector<LayerValue>& rows, LayerMetric metric) {
    std::string out = "layer,matrix,metric,value\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9g", r.value);
        out += std::to_string(r.layer) + "," + r.matrix + "," + layer_metric_name(metric) + "," + buf + "\n";
    }
    return out;
}

}  // namespace cclab
