#include <doctest.h>

#include <cmath>

#include "cclab/grad_check.hpp"
#include "cclab/graph.hpp"
#include "support.hpp"

using namespace cclab;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor::matrix(r, c, std::move(v)); }

}  // namespace

TEST_CASE("matmul hand cases") {
    Graph g;
    auto a = g.input("a", {2, 2});
    auto b = g.input("b", {2, 2});
    auto c = g.input("c", {2, 1});
    g.name_output(g.matmul(a, b), "ab");
    g.name_output(g.matmul(b, c), "bc");
    auto out = g.forward({{"a", identity(2)}, {"b", mat(2, 2, {1, 2, 3, 4})}, {"c", mat(2, 1, {5, 6})}});
    CHECK(out.at("ab") == mat(2, 2, {1, 2, 3, 4}));
    CHECK(out.at("bc") == mat(2, 1, {17, 39}));
}

TEST_CASE("row softmax") {
    Graph g;
    auto x = g.input("x", {1, 2});
    g.name_output(g.row_softmax(x), "p");
    CHECK(g.forward({{"x", mat(1, 2, {0, 0})}}).at("p") == mat(1, 2, {0.5, 0.5}));

    Graph h;
    auto y = h.input("y", {7, 9});
    auto p = h.row_softmax(y);
    Rng rng(3);
    h.forward({{"y", testing::random_uniform({7, 9}, rng, -30, 30)}});
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) {
            CHECK(h.value(p).at(r, c) >= 0.0);
            s += h.value(p).at(r, c);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax survives large logits") {
    Graph g;
    auto x = g.input("x", {1, 3});
    auto p = g.row_softmax(x);
    g.forward({{"x", mat(1, 3, {1000, 1000, -1000})}});
    CHECK(g.value(p).at(0, 0) == doctest::Approx(0.5));
    CHECK(g.value(p).at(0, 2) == 0.0);
}

TEST_CASE("gradient of sum is ones") {
    Graph g;
    auto w = g.parameter("w", {2, 3, 2});
    auto loss = g.sum(w);
    Rng rng(1);
    g.forward({{"w", testing::random_uniform({2, 3, 2}, rng)}});
    CHECK(g.backward(loss).at("w") == Tensor({2, 3, 2}, 1.0));
}

TEST_CASE("sum(AB) gradient is ones * B^T") {
    Graph g;
    auto a = g.parameter("A", {2, 3});
    auto b = g.parameter("B", {3, 2});
    auto loss = g.sum(g.matmul(a, b));
    const Tensor B = mat(3, 2, {1, 2, 3, 4, 5, 6});
    g.forward({{"A", Tensor({2, 3}, 0.5)}, {"B", B}});
    // row sums of B: 3, 7, 11
    CHECK(g.backward(loss).at("A") == mat(2, 3, {3, 7, 11, 3, 7, 11}));
}

TEST_CASE("uniform logits push uniformly toward the target") {
    Graph g;
    auto z = g.parameter("z", {1, 4});
    auto t = g.input("t", {1});
    auto loss = g.cross_entropy(z, t);
    g.forward({{"z", Tensor({1, 4}, 0.3)}, {"t", Tensor({1}, 2.0)}});
    CHECK(g.value(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    const Tensor gz = g.backward(loss).at("z");
    CHECK(gz == mat(1, 4, {0.25, 0.25, -0.75, 0.25}));
}

TEST_CASE("unused parameter gets an exact zero gradient") {
    Graph g;
    auto used = g.parameter("used", {2});
    g.parameter("unused", {3, 2});
    auto loss = g.sum(g.multiply(used, used));
    g.forward({{"used", Tensor({2}, {1.0, -2.0})}, {"unused", Tensor({3, 2}, 5.0)}});
    auto grads = g.backward(loss);
    CHECK(grads.at("unused") == Tensor({3, 2}, 0.0));
    CHECK(grads.at("used") == Tensor({2}, {2.0, -4.0}));
}

TEST_CASE("forward is pure") {
    Graph g;
    auto x = g.parameter("x", {4, 6});
    auto y = g.silu(g.rms_normalize(g.row_softmax(x)));
    Rng rng(9);
    const Bindings b{{"x", testing::random_uniform({4, 6}, rng)}};
    g.forward(b);
    const Tensor first = g.value(y);
    g.forward(b);
    CHECK(g.value(y) == first);
}

TEST_CASE("rotary rotates half-split pairs by position") {
    Graph g;
    auto x = g.input("x", {1, 2, 2});
    auto r = g.rotary(x, 10000.0);
    g.forward({{"x", Tensor({1, 2, 2}, {1.0, 0.0, 1.0, 0.0})}});
    // D = 2: one pair with frequency 1; position 1 rotates by 1 radian
    CHECK(g.value(r)[0] == 1.0);
    CHECK(g.value(r)[1] == 0.0);
    CHECK(g.value(r)[2] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
    CHECK(g.value(r)[3] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
}

TEST_CASE("causal mask and repeat_heads") {
    Graph g;
    auto s = g.input("s", {1, 2, 2});
    auto m = g.causal_mask(s);
    auto h = g.input("h", {1, 2, 1, 1});
    auto rep = g.repeat_heads(h, 2);
    g.forward({{"s", Tensor({1, 2, 2}, 1.0)}, {"h", Tensor({1, 2, 1, 1}, {3.0, 4.0})}});
    CHECK(std::isinf(g.value(m)[1]));
    CHECK(g.value(m)[2] == 1.0);
    CHECK(g.value(rep) == Tensor({1, 4, 1, 1}, {3.0, 3.0, 4.0, 4.0}));
}

TEST_CASE("quadratic loss passes at 1e-6") {
    Graph g;
    auto w = g.parameter("w", {3, 3});
    auto loss = g.sum(g.multiply(w, w));
    Rng rng(5);
    auto report = grad_check(g, {{"w", testing::random_uniform({3, 3}, rng)}}, loss, {1e-6});
    CHECK(report.pass);
}

TEST_CASE("every primitive passes grad_check over 20 seeds") {
    for (const auto& c : testing::primitive_cases()) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto report = c.run(seed);
            INFO(c.name << " seed " << seed);
            for (const auto& leaf : report.leaves) INFO(leaf.name << " err " << leaf.max_rel_error);
            CHECK(report.pass);
        }
    }
}

TEST_CASE("one-layer model passes grad_check") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto report = testing::model_grad_check(seed);
        std::string worst;
        for (const auto& leaf : report.leaves)
            if (!leaf.pass) worst += leaf.name + "=" + std::to_string(leaf.max_rel_error) + " ";
        INFO("seed " << seed << " failures: " << worst);
        CHECK(report.pass);
    }
}

TEST_CASE("corrupted multiply backward is caught and named") {
    const auto report = testing::corrupted_multiply_check(4);
    CHECK_FALSE(report.pass);
    CHECK(report.failures() == std::vector<std::string>{"a"});
}

TEST_CASE("errors") {
    SUBCASE("unbound leaf") {
        Graph g;
        auto x = g.input("x", {2});
        g.sum(x);
        CHECK_THROWS_AS(g.forward({}), BindingError);
    }
    SUBCASE("binding shape mismatch") {
        Graph g;
        g.input("x", {2});
        CHECK_THROWS_AS(g.forward({{"x", Tensor({3})}}), ShapeError);
    }
    SUBCASE("construction shape mismatch names the node") {
        Graph g;
        auto a = g.input("a", {2, 3});
        auto b = g.input("b", {2, 3});
        try {
            g.matmul(a, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        }
    }
    SUBCASE("backward before forward") {
        Graph g;
        auto loss = g.sum(g.parameter("w", {2}));
        CHECK_THROWS_AS(g.backward(loss), EngineError);
    }
    SUBCASE("non-scalar loss") {
        Graph g;
        auto w = g.parameter("w", {2});
        g.forward({{"w", Tensor({2}, 1.0)}});
        CHECK_THROWS_AS(g.backward(w), EngineError);
        CHECK_THROWS_AS(grad_check(g, {{"w", Tensor({2}, 1.0)}}, w), EngineError);
    }
    SUBCASE("gather index out of range") {
        Graph g;
        auto t = g.parameter("t", {3, 2});
        auto ids = g.input("ids", {1});
        g.gather_rows(t, ids);
        CHECK_THROWS_AS(g.forward({{"t", Tensor({3, 2})}, {"ids", Tensor({1}, 3.0)}}), EngineError);
    }
    SUBCASE("zero extent") { CHECK_THROWS(Tensor({2, 0})); }
}
