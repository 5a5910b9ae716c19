#include "cclab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cclab {

std::vector<std::string> GradCheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& l : leaves)
        if (!l.pass) out.push_back(l.name);
    return out;
}

GradCheckReport grad_check(Graph& graph, const Bindings& bindings, NodeId loss, const GradCheckOptions& opts) {
    graph.forward(bindings);
    if (graph.value(loss).size() != 1)
        throw EngineError("grad_check: loss node " + graph.describe(loss) + " is not scalar");
    const auto analytic = graph.backward(loss);

    Bindings work = bindings;
    GradCheckReport report;
    for (const auto& [name, grad] : analytic) {
        Tensor& x = work.at(name);
        LeafGradReport leaf{name};
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + opts.step;
            graph.forward(work);
            const double f_up = graph.value(loss)[0];
            x[i] = orig - opts.step;
            graph.forward(work);
            const double f_dn = graph.value(loss)[0];
            x[i] = orig;
            const double numeric = (f_up - f_dn) / (2.0 * opts.step);
            const double err = std::abs(grad[i] - numeric) / std::max(std::abs(numeric), opts.denom_floor);
            leaf.max_rel_error = std::max(leaf.max_rel_error, err);
        }
        leaf.pass = leaf.max_rel_error < opts.tol;
        report.pass = report.pass && leaf.pass;
        report.leaves.push_back(std::move(leaf));
    }
    // leave the graph evaluated at the unperturbed bindings
    graph.forward(bindings);
    return report;
}

}  // namespace cclab
