#pragma once

#include <span>
#include <vector>

namespace cclab::stats {

double mean(std::span<const double> xs);
/// Population standard deviation.
double stddev(std::span<const double> xs);

double normal_cdf(double x);

/// Two-sided Kolmogorov-Smirnov statistic of `xs` against N(0, sigma^2).
double ks_statistic_normal(std::vector<double> xs, double sigma);
/// Asymptotic p-value of a KS statistic `d` with `n` samples.
double ks_pvalue(double d, std::size_t n);

}  // namespace cclab::stats
