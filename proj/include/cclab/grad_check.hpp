#pragma once

#include <string>
#include <vector>

#include "cclab/graph.hpp"

namespace cclab {

struct GradCheckOptions {
    double tol = 1e-4;
    /// Central-difference step.
    double step = 1e-5;
    /// Floor of the relative-error denominator.
    double denom_floor = 1e-8;
};

struct LeafGradReport {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<LeafGradReport> leaves;
    bool pass = true;

    /// Names of the leaves that failed.
    std::vector<std::string> failures() const;
};

/// Compares reverse-mode gradients of `loss` against central differences for every
/// parameter leaf. Per leaf: max over entries of |analytic - numeric| / max(|numeric|, floor).
GradCheckReport grad_check(Graph& graph, const Bindings& bindings, NodeId loss, const GradCheckOptions& opts = {});

}  // namespace cclab
