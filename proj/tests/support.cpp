#include "support.hpp"

#include <filesystem>

#include "cclab/init.hpp"

namespace cclab::testing {

Tensor random_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

namespace {

using Build = std::function<NodeId(Graph&)>;

/// Runs grad_check on sum(build(g) * r). Parameters "x0", "x1" ... get uniform [-1,1] values.
GradCheckReport check(std::uint64_t seed, const Build& build, Bindings extra = {}) {
    Rng rng(seed);
    Graph g;
    const NodeId out = build(g);
    const NodeId r = g.input("r", g.shape(out));
    const NodeId loss = g.sum(g.multiply(out, r));
    Bindings b = std::move(extra);
    for (const auto& name : g.parameter_names()) b[name] = random_uniform(g.shape(*g.find_leaf(name)), rng);
    b["r"] = random_uniform(g.shape(out), rng);
    return grad_check(g, b, loss);
}

Tensor int_tensor(std::size_t n, std::size_t bound, Rng& rng) {
    Tensor t({n});
    for (auto& v : t.data()) v = static_cast<double>(rng.below(bound));
    return t;
}

}  // namespace

std::vector<PrimitiveCase> primitive_cases() {
    std::vector<PrimitiveCase> cases;
    auto add = [&](std::string name, Build build) {
        cases.push_back({name, [build](std::uint64_t s) { return check(s, build); }});
    };
    add("matmul", [](Graph& g) { return g.matmul(g.parameter("x0", {3, 4}), g.parameter("x1", {4, 2})); });
    add("batch_matmul", [](Graph& g) {
        return g.batch_matmul(g.parameter("x0", {2, 3, 4}), g.parameter("x1", {2, 4, 5}));
    });
    add("batch_matmul_t", [](Graph& g) {
        return g.batch_matmul(g.parameter("x0", {2, 3, 4}), g.parameter("x1", {2, 5, 4}), true);
    });
    add("add", [](Graph& g) { return g.add(g.parameter("x0", {3, 4}), g.parameter("x1", {3, 4})); });
    add("add_broadcast", [](Graph& g) { return g.add(g.parameter("x0", {2, 3, 4}), g.parameter("x1", {4})); });
    add("multiply", [](Graph& g) { return g.multiply(g.parameter("x0", {3, 4}), g.parameter("x1", {3, 4})); });
    add("multiply_broadcast",
        [](Graph& g) { return g.multiply(g.parameter("x0", {3, 4}), g.parameter("x1", {4})); });
    add("scale", [](Graph& g) { return g.scale(g.parameter("x0", {3, 4}), -1.7); });
    add("sum", [](Graph& g) { return g.sum(g.parameter("x0", {3, 4})); });
    add("row_softmax", [](Graph& g) { return g.row_softmax(g.parameter("x0", {3, 5})); });
    add("rms_normalize", [](Graph& g) { return g.rms_normalize(g.parameter("x0", {3, 6})); });
    add("rotary", [](Graph& g) { return g.rotary(g.parameter("x0", {2, 5, 6}), 10000.0); });
    add("silu", [](Graph& g) { return g.silu(g.parameter("x0", {3, 4})); });
    add("sigmoid", [](Graph& g) { return g.sigmoid(g.parameter("x0", {3, 4})); });
    add("reshape", [](Graph& g) { return g.reshape(g.parameter("x0", {3, 4}), {2, 6}); });
    add("permute", [](Graph& g) { return g.permute(g.parameter("x0", {2, 3, 4}), {1, 2, 0}); });
    add("repeat_heads", [](Graph& g) { return g.repeat_heads(g.parameter("x0", {2, 2, 3, 4}), 2); });
    add("causal_mask", [](Graph& g) { return g.row_softmax(g.causal_mask(g.parameter("x0", {2, 4, 4}))); });
    cases.push_back({"gather_rows", [](std::uint64_t s) {
                         Rng rng(s ^ 0x9e37u);
                         Bindings ids{{"ids", int_tensor(6, 5, rng)}};
                         return check(
                             s, [](Graph& g) { return g.gather_rows(g.parameter("x0", {5, 3}), g.input("ids", {6})); },
                             ids);
                     }});
    cases.push_back({"cross_entropy", [](std::uint64_t s) {
                         Rng rng(s ^ 0x51u);
                         Bindings t{{"targets", int_tensor(4, 5, rng)}};
                         return check(
                             s,
                             [](Graph& g) {
                                 return g.cross_entropy(g.parameter("x0", {4, 5}), g.input("targets", {4}));
                             },
                             t);
                     }});
    return cases;
}

ModelConfig tiny_model_config(std::uint64_t seed) {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_kv_heads = seed % 2 ? 1 : 2;
    c.head_dim = 4;
    c.vocab_size = 11;
    c.max_seq_len = 8;
    c.use_embedding_norm = seed % 3 == 1;
    c.use_sandwich_norm = seed % 3 == 2;
    return c;
}

GradCheckReport model_grad_check(std::uint64_t seed) {
    const ModelConfig c = tiny_model_config(seed);
    ModelParams p = build(c);
    apply_scheme(p, InitScheme::gamma_rate(0.25, seed));
    Rng rng(derive_seed(seed, "gc-model"));
    // norm gains away from 1 so their gradients are exercised generically
    for (auto& [_, t] : p.tensors)
        if (t.rank() == 1)
            for (auto& v : t.data()) v = 0.5 + rng.uniform();
    const std::size_t batch = 2, seq = 5;
    TokenMatrix tokens{batch, seq, {}}, targets{batch, seq, {}};
    for (std::size_t i = 0; i < batch * seq; ++i) {
        tokens.ids.push_back(static_cast<TokenId>(rng.below(c.vocab_size)));
        targets.ids.push_back(static_cast<TokenId>(rng.below(c.vocab_size)));
    }
    ModelGraph mg = build_model_graph(c, batch, seq);
    return grad_check(mg.graph, model_bindings(p, tokens, targets), mg.loss);
}

std::shared_ptr<const CustomOp> corrupted_multiply() {
    auto op = std::make_shared<CustomOp>();
    op->name = "corrupted_multiply";
    op->forward = [](std::span<const Tensor* const> in, Tensor& out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * (*in[1])[i];
    };
    op->backward = [](std::span<const Tensor* const> in, const Tensor&, const Tensor& go,
                      std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < go.size(); ++i) {
            (*gi[0])[i] += 1.01 * go[i] * (*in[1])[i];
            (*gi[1])[i] += go[i] * (*in[0])[i];
        }
    };
    return op;
}

GradCheckReport corrupted_multiply_check(std::uint64_t seed) {
    return check(seed, [](Graph& g) {
        const NodeId a = g.parameter("a", {3, 3});
        const NodeId b = g.parameter("b", {3, 3});
        return g.custom(corrupted_multiply(), {a, b}, {3, 3});
    });
}

std::string scratch_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("cclab_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace cclab::testing

namespace cclab::testing {

std::optional<FlipInstance> find_preference_flip(bool unit_weights, double gamma_small, double gamma_large) {
    const theory::GammaExponent small(gamma_small), large(gamma_large);
    for (double eps : {1e-1, 1e-2, 1e-3})
        for (std::size_t L = 2; L <= 8; ++L)
            for (std::size_t n = 2; n <= 64; ++n) {
                const double c = unit_weights ? 1.0 : 1.0 / static_cast<double>(n);
                const std::vector<theory::CircuitEnsemble> cands{theory::dense_shallow(n, c, L, eps),
                                                                 theory::sparse_deep(L, eps)};
                if (theory::preferred_ensemble(cands, small) == 1 && theory::preferred_ensemble(cands, large) == 0)
                    return FlipInstance{n, L, eps};
            }
    return std::nullopt;
}

}  // namespace cclab::testing
