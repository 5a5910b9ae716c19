#include <doctest.h>

#include <cmath>

#include "cclab/init.hpp"
#include "cclab/model.hpp"
#include "support.hpp"

using namespace cclab;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // [rows][cols]

Mat rows_of(const Tensor& t) {
    Mat m(t.dim(0), Vec(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    return m;
}

Vec vec_mat(const Vec& x, const Tensor& w) {
    Vec y(w.dim(1), 0.0);
    for (std::size_t i = 0; i < w.dim(0); ++i)
        for (std::size_t j = 0; j < w.dim(1); ++j) y[j] += x[i] * w.at(i, j);
    return y;
}

Vec rms(const Vec& x, const Tensor& gain) {
    double ms = 0;
    for (double v : x) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.size()) + 1e-6);
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain[i];
    return y;
}

void rope(double* x, std::size_t hd, std::size_t pos, double base) {
    for (std::size_t i = 0; i < hd / 2; ++i) {
        const double th = static_cast<double>(pos) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
        const double a = x[i], b = x[i + hd / 2];
        x[i] = a * std::cos(th) - b * std::sin(th);
        x[i + hd / 2] = a * std::sin(th) + b * std::cos(th);
    }
}

/// Straight-line decoder for one sequence; logits [seq][vocab].
Mat reference_logits(const ModelParams& p, const std::vector<TokenId>& toks) {
    const auto& c = p.config;
    const std::size_t T = toks.size(), H = c.n_heads, hd = c.head_dim, grp = c.n_heads / c.n_kv_heads;
    Mat h(T);
    for (std::size_t t = 0; t < T; ++t) {
        h[t] = rows_of(p.at("tok_embedding"))[static_cast<std::size_t>(toks[t])];
        if (c.use_embedding_norm) h[t] = rms(h[t], p.at("emb_norm"));
    }
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        auto W = [&](const char* n) -> const Tensor& { return p.at(names::layer(l, n)); };
        Mat q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            const Vec a = rms(h[t], W("attn_norm"));
            q[t] = vec_mat(a, W("wq"));
            k[t] = vec_mat(a, W("wk"));
            v[t] = vec_mat(a, W("wv"));
            for (std::size_t hh = 0; hh < H; ++hh) rope(&q[t][hh * hd], hd, t, c.rope_base);
            for (std::size_t hh = 0; hh < c.n_kv_heads; ++hh) rope(&k[t][hh * hd], hd, t, c.rope_base);
        }
        for (std::size_t t = 0; t < T; ++t) {
            Vec ctx(H * hd, 0.0);
            for (std::size_t hh = 0; hh < H; ++hh) {
                const std::size_t kh = hh / grp;
                Vec s(t + 1);
                double mx = -INFINITY;
                for (std::size_t u = 0; u <= t; ++u) {
                    double dot = 0;
                    for (std::size_t i = 0; i < hd; ++i) dot += q[t][hh * hd + i] * k[u][kh * hd + i];
                    s[u] = dot / std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, s[u]);
                }
                double z = 0;
                for (auto& x : s) z += (x = std::exp(x - mx));
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t i = 0; i < hd; ++i) ctx[hh * hd + i] += s[u] / z * v[u][kh * hd + i];
            }
            Vec o = vec_mat(ctx, W("wo"));
            if (c.use_sandwich_norm) o = rms(o, W("attn_post_norm"));
            for (std::size_t i = 0; i < o.size(); ++i) h[t][i] += o[i];
        }
        for (std::size_t t = 0; t < T; ++t) {
            const Vec m = rms(h[t], W("mlp_norm"));
            Vec g = vec_mat(m, W("w_gate"));
            const Vec u = vec_mat(m, W("w_up"));
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
            Vec d = vec_mat(g, W("w_down"));
            if (c.use_sandwich_norm) d = rms(d, W("mlp_post_norm"));
            for (std::size_t i = 0; i < d.size(); ++i) h[t][i] += d[i];
        }
    }
    Mat out(T);
    for (std::size_t t = 0; t < T; ++t) out[t] = vec_mat(c.use_final_norm ? rms(h[t], p.at("final_norm")) : h[t], p.at("output"));
    return out;
}

ModelParams random_model(const ModelConfig& c, std::uint64_t seed) {
    ModelParams p = build(c);
    apply_scheme(p, InitScheme::gamma_rate(0.3, seed));
    Rng rng(seed + 1);
    for (auto& [_, t] : p.tensors)
        if (t.rank() == 1)
            for (auto& v : t.data()) v = 0.5 + rng.uniform();
    return p;
}

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.head_dim = 4;
    c.vocab_size = 13;
    c.max_seq_len = 6;
    return c;
}

TokenMatrix random_tokens(std::size_t b, std::size_t s, std::size_t vocab, Rng& rng) {
    TokenMatrix m(b, s);
    for (auto& id : m.ids) id = static_cast<TokenId>(rng.below(vocab));
    return m;
}

}  // namespace

TEST_CASE("build: parameter inventory and shapes") {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 64;
    c.n_heads = 4;
    c.n_kv_heads = 4;
    c.head_dim = 16;
    c.vocab_size = 256;
    const ModelParams p = build(c);
    std::size_t matrices = 0, gains = 0;
    for (const auto& [name, t] : p.tensors) {
        if (t.rank() == 2) {
            ++matrices;
            for (double v : t.data()) REQUIRE(v == 0.0);
        } else {
            ++gains;
            CHECK(t.shape() == Shape{64});
            for (double v : t.data()) REQUIRE(v == 1.0);
        }
    }
    // 7 per layer plus embedding and output head
    CHECK(matrices == 2 * 7 + 2);
    CHECK(gains == 2 * 2 + 1);
    CHECK(p.at("tok_embedding").shape() == Shape{256, 64});
    CHECK(p.at("output").shape() == Shape{64, 256});
    CHECK(p.at("layers.1.w_gate").shape() == Shape{64, 176});
    CHECK(p.at("layers.1.w_down").shape() == Shape{176, 64});
    CHECK(c.mlp_hidden() == 176);
}

TEST_CASE("build: grouped KV heads narrow W_K and W_V") {
    ModelConfig c;
    c.n_kv_heads = 2;
    const ModelParams p = build(c);
    CHECK(p.at("layers.0.wk").shape() == Shape{64, 32});
    CHECK(p.at("layers.0.wv").shape() == Shape{64, 32});
    CHECK(p.at("layers.0.wq").shape() == Shape{64, 64});
}

TEST_CASE("config validation") {
    ModelConfig c;
    c.n_heads = 3;
    c.n_kv_heads = 2;
    CHECK_THROWS_AS(build(c), ConfigError);
    ModelConfig d;
    d.head_dim = 8;  // 4 * 8 != 64
    CHECK_THROWS_AS(d.validate(), ConfigError);
    ModelConfig e;
    e.vocab_size = 1;
    CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("d_model 4 hand-set weights match the straight-line reference") {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 4;
    c.n_heads = 1;
    c.n_kv_heads = 1;
    c.head_dim = 4;
    c.vocab_size = 5;
    c.max_seq_len = 4;
    ModelParams p = build(c);
    // deterministic hand pattern
    for (auto& [name, t] : p.tensors)
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = t.rank() == 2 ? 0.1 * static_cast<double>((i * 7 + name.size()) % 11) - 0.5 : 1.0 + 0.05 * i;
    const std::vector<TokenId> toks{1, 4, 0, 2};
    const Tensor got = forward_logits(p, TokenMatrix(1, 4, toks));
    const Mat want = reference_logits(p, toks);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t v = 0; v < 5; ++v) CHECK(got[t * 5 + v] == doctest::Approx(want[t][v]).epsilon(1e-12));
}

TEST_CASE("reference agreement across norm options and GQA") {
    for (int variant = 0; variant < 4; ++variant) {
        ModelConfig c = small_config();
        c.use_embedding_norm = variant & 1;
        c.use_sandwich_norm = variant & 2;
        const ModelParams p = random_model(c, 11 + variant);
        Rng rng(variant);
        const TokenMatrix toks = random_tokens(1, 6, c.vocab_size, rng);
        const Tensor got = forward_logits(p, toks);
        const Mat want = reference_logits(p, toks.ids);
        double worst = 0;
        for (std::size_t t = 0; t < 6; ++t)
            for (std::size_t v = 0; v < c.vocab_size; ++v)
                worst = std::max(worst, std::abs(got[t * c.vocab_size + v] - want[t][v]));
        INFO("variant " << variant);
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("causality: perturbing position t leaves earlier logits bit-identical") {
    for (int variant = 0; variant < 4; ++variant) {
        ModelConfig c = small_config();
        c.use_embedding_norm = variant & 1;
        c.use_sandwich_norm = variant & 2;
        const ModelParams p = random_model(c, 3);
        Rng rng(7);
        TokenMatrix toks = random_tokens(1, 6, c.vocab_size, rng);
        const Tensor base = forward_logits(p, toks);
        for (std::size_t t = 0; t < 6; ++t) {
            TokenMatrix pert = toks;
            pert.ids[t] = static_cast<TokenId>((pert.ids[t] + 1) % static_cast<TokenId>(c.vocab_size));
            const Tensor out = forward_logits(p, pert);
            for (std::size_t i = 0; i < t * c.vocab_size; ++i) REQUIRE(out[i] == base[i]);
            bool changed = false;
            for (std::size_t i = t * c.vocab_size; i < (t + 1) * c.vocab_size; ++i) changed |= out[i] != base[i];
            CHECK(changed);
        }
    }
}

TEST_CASE("batch rows are independent") {
    const ModelConfig c = small_config();
    const ModelParams p = random_model(c, 5);
    Rng rng(1);
    TokenMatrix one = random_tokens(1, 5, c.vocab_size, rng);
    TokenMatrix two(2, 5);
    for (std::size_t i = 0; i < 5; ++i) two.ids[i] = two.ids[i + 5] = one.ids[i];
    const Tensor out = forward_logits(p, two);
    const std::size_t slice = 5 * c.vocab_size;
    for (std::size_t i = 0; i < slice; ++i) REQUIRE(out[i] == out[i + slice]);
}

TEST_CASE("norm options change outputs but keep shapes") {
    ModelConfig a = small_config();
    ModelConfig b = a;
    b.use_sandwich_norm = true;
    b.use_embedding_norm = true;
    ModelParams pa = random_model(a, 2);
    ModelParams pb = build(b);
    for (auto& [name, t] : pa.tensors) pb.at(name) = t;
    Rng rng(4);
    const TokenMatrix toks = random_tokens(2, 6, a.vocab_size, rng);
    const Tensor la = forward_logits(pa, toks), lb = forward_logits(pb, toks);
    CHECK(la.shape() == lb.shape());
    CHECK_FALSE(la == lb);
}

TEST_CASE("0-layer model logits scale by c^2") {
    ModelConfig c = small_config();
    c.n_layers = 0;
    c.use_final_norm = false;
    ModelParams p = random_model(c, 8);
    ModelParams q = p;
    const double k = 3.0;
    for (auto& [_, t] : q.tensors)
        if (t.rank() == 2)
            for (auto& v : t.data()) v *= k;
    Rng rng(2);
    const TokenMatrix toks = random_tokens(1, 4, c.vocab_size, rng);
    const Tensor lp = forward_logits(p, toks), lq = forward_logits(q, toks);
    for (std::size_t i = 0; i < lp.size(); ++i) CHECK(lq[i] == doctest::Approx(k * k * lp[i]).epsilon(1e-12));
}

TEST_CASE("next_token_loss") {
    SUBCASE("uniform logits give ln V") {
        const Tensor logits({1, 3, 256}, 0.7);
        CHECK(next_token_loss(logits, TokenMatrix(1, 3, {5, 200, 9})) == doctest::Approx(std::log(256.0)));
        CHECK(std::log(256.0) == doctest::Approx(5.545).epsilon(1e-4));
    }
    SUBCASE("margin drives loss to zero monotonically") {
        double prev = INFINITY;
        for (double m : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0}) {
            Tensor logits({1, 1, 4}, 0.0);
            logits[2] = m;
            const double l = next_token_loss(logits, TokenMatrix(1, 1, {2}));
            CHECK(l < prev);
            prev = l;
        }
        CHECK(prev < 1e-8);
    }
    SUBCASE("two positions equal the per-position mean") {
        const Tensor logits({1, 2, 3}, {1.0, 2.0, 3.0, 0.5, -1.0, 0.0});
        const double l0 = -(1.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
        const double l1 = -(0.0 - std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(0.0)));
        CHECK(next_token_loss(logits, TokenMatrix(1, 2, {0, 2})) == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
    }
    SUBCASE("shape mismatch") { CHECK_THROWS(next_token_loss(Tensor({1, 2, 3}), TokenMatrix(1, 3))); }
}

TEST_CASE("forward_logits input errors") {
    const ModelConfig c = small_config();
    const ModelParams p = build(c);
    CHECK_THROWS(forward_logits(p, TokenMatrix(1, 2, {0, 13})));
    CHECK_THROWS(forward_logits(p, TokenMatrix(1, 2, {0, -1})));
    CHECK_THROWS(forward_logits(p, TokenMatrix(1, 7)));
}

TEST_CASE("predict_topk") {
    const ModelConfig c = small_config();
    SUBCASE("full vocabulary sums to one, sorted") {
        const ModelParams p = random_model(c, 9);
        const auto top = predict_topk(p, {1, 2, 3}, c.vocab_size);
        double s = 0;
        for (std::size_t i = 0; i < top.size(); ++i) {
            s += top[i].prob;
            if (i) CHECK(top[i - 1].prob >= top[i].prob);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
    SUBCASE("zero model is uniform, ties by id") {
        const ModelParams p = build(c);
        const auto top = predict_topk(p, {4}, 3);
        REQUIRE(top.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(top[i].token == static_cast<TokenId>(i));
            CHECK(top[i].prob == doctest::Approx(1.0 / 13));
        }
    }
    SUBCASE("long context uses the trailing window") {
        const ModelParams p = random_model(c, 4);
        std::vector<TokenId> ctx{9, 9, 9, 1, 2, 3, 4, 5, 6};
        CHECK(predict_topk(p, ctx, 5) == predict_topk(p, {1, 2, 3, 4, 5, 6}, 5));
    }
    SUBCASE("errors") {
        const ModelParams p = build(c);
        CHECK_THROWS(predict_topk(p, {}, 1));
        CHECK_THROWS(predict_topk(p, {1}, 14));
        CHECK_THROWS(predict_topk(p, {1}, 0));
    }
}
