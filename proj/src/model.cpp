#include "cclab/model.hpp"

#include <algorithm>
#include <cmath>

namespace cclab {

Tensor TokenMatrix::as_tensor() const {
    std::vector<double> v(ids.begin(), ids.end());
    return Tensor({ids.size()}, std::move(v));
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("model config: " + msg);
    };
    need(d_model > 0 && n_heads > 0 && n_kv_heads > 0 && head_dim > 0 && max_seq_len > 0,
         "extents must be positive");
    need(n_heads % n_kv_heads == 0, "n_heads (" + std::to_string(n_heads) + ") must be a multiple of n_kv_heads (" +
                                        std::to_string(n_kv_heads) + ")");
    need(n_heads * head_dim == d_model, "n_heads * head_dim must equal d_model");
    need(head_dim % 2 == 0, "head_dim must be even for rotary embedding");
    need(vocab_size >= 2, "vocab_size must be at least 2");
    need(rope_base > 1.0, "rope_base must exceed 1");
}

std::size_t ModelConfig::mlp_hidden() const {
    const std::size_t raw = (8 * d_model + 2) / 3;
    return (raw + 7) / 8 * 8;
}

namespace names {
std::string layer(std::size_t l, const char* leaf) { return "layers." + std::to_string(l) + "." + leaf; }
}  // namespace names

ModelParams build(const ModelConfig& config) {
    config.validate();
    ModelParams p{config, {}};
    const std::size_t d = config.d_model, h = config.mlp_hidden();
    const std::size_t q_out = config.n_heads * config.head_dim;
    const std::size_t kv_out = config.n_kv_heads * config.head_dim;
    auto& t = p.tensors;
    t.emplace(names::token_embedding, Tensor({config.vocab_size, d}));
    if (config.use_embedding_norm) t.emplace(names::embedding_norm, Tensor({d}, 1.0));
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        t.emplace(names::layer(l, "attn_norm"), Tensor({d}, 1.0));
        t.emplace(names::layer(l, "wq"), Tensor({d, q_out}));
        t.emplace(names::layer(l, "wk"), Tensor({d, kv_out}));
        t.emplace(names::layer(l, "wv"), Tensor({d, kv_out}));
        t.emplace(names::layer(l, "wo"), Tensor({q_out, d}));
        t.emplace(names::layer(l, "mlp_norm"), Tensor({d}, 1.0));
        t.emplace(names::layer(l, "w_gate"), Tensor({d, h}));
        t.emplace(names::layer(l, "w_up"), Tensor({d, h}));
        t.emplace(names::layer(l, "w_down"), Tensor({h, d}));
        if (config.use_sandwich_norm) {
            t.emplace(names::layer(l, "attn_post_norm"), Tensor({d}, 1.0));
            t.emplace(names::layer(l, "mlp_post_norm"), Tensor({d}, 1.0));
        }
    }
    if (config.use_final_norm) t.emplace(names::final_norm, Tensor({d}, 1.0));
    t.emplace(names::output, Tensor({d, config.vocab_size}));
    return p;
}

std::size_t fan_in(const ModelConfig& config, const std::string& name, const Shape& shape) {
    if (name == names::token_embedding) return config.d_model;
    return shape.at(0);
}

ModelGraph build_model_graph(const ModelConfig& config, std::size_t batch, std::size_t seq) {
    config.validate();
    if (batch == 0 || seq == 0) throw ConfigError("model graph needs positive batch and seq");
    if (seq > config.max_seq_len)
        throw ConfigError("sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                          std::to_string(config.max_seq_len));

    const ModelParams shapes = build(config);
    ModelGraph mg;
    mg.batch = batch;
    mg.seq = seq;
    Graph& g = mg.graph;
    std::map<std::string, NodeId> p;
    for (const auto& [name, t] : shapes.tensors) p[name] = g.parameter(name, t.shape());

    const std::size_t N = batch * seq, H = config.n_heads, Hkv = config.n_kv_heads, hd = config.head_dim;
    mg.tokens = g.input("tokens", {N});
    mg.targets = g.input("targets", {N});

    auto norm = [&](NodeId x, const std::string& gain) { return g.multiply(g.rms_normalize(x), p.at(gain)); };
    // [N, heads*hd] -> [batch*heads, seq, hd]
    auto split_heads = [&](NodeId x, std::size_t heads) {
        auto r = g.reshape(x, {batch, seq, heads, hd});
        return g.reshape(g.permute(r, {0, 2, 1, 3}), {batch * heads, seq, hd});
    };
    // [batch*kv, seq, hd] -> [batch*heads, seq, hd]
    auto expand_kv = [&](NodeId x) {
        if (Hkv == H) return x;
        auto r = g.repeat_heads(g.reshape(x, {batch, Hkv, seq, hd}), H / Hkv);
        return g.reshape(r, {batch * H, seq, hd});
    };

    NodeId h = g.gather_rows(p.at(names::token_embedding), mg.tokens);
    if (config.use_embedding_norm) h = norm(h, names::embedding_norm);

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        auto L = [&](const char* leaf) { return p.at(names::layer(l, leaf)); };

        NodeId a = norm(h, names::layer(l, "attn_norm"));
        NodeId q = g.rotary(split_heads(g.matmul(a, L("wq")), H), config.rope_base);
        NodeId k = expand_kv(g.rotary(split_heads(g.matmul(a, L("wk")), Hkv), config.rope_base));
        NodeId v = expand_kv(split_heads(g.matmul(a, L("wv")), Hkv));
        NodeId scores = g.scale(g.batch_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(hd)));
        NodeId probs = g.row_softmax(g.causal_mask(scores));
        NodeId ctx = g.batch_matmul(probs, v);
        ctx = g.reshape(g.permute(g.reshape(ctx, {batch, H, seq, hd}), {0, 2, 1, 3}), {N, H * hd});
        NodeId attn = g.matmul(ctx, L("wo"));
        if (config.use_sandwich_norm) attn = norm(attn, names::layer(l, "attn_post_norm"));
        h = g.add(h, attn);

        NodeId m = norm(h, names::layer(l, "mlp_norm"));
        NodeId gated = g.multiply(g.silu(g.matmul(m, L("w_gate"))), g.matmul(m, L("w_up")));
        NodeId mlp = g.matmul(gated, L("w_down"));
        if (config.use_sandwich_norm) mlp = norm(mlp, names::layer(l, "mlp_post_norm"));
        h = g.add(h, mlp);
    }

    if (config.use_final_norm) h = norm(h, names::final_norm);
    mg.logits = g.matmul(h, p.at(names::output));
    mg.loss = g.cross_entropy(mg.logits, mg.targets);
    g.name_output(mg.logits, "logits");
    g.name_output(mg.loss, "loss");
    return mg;
}

Bindings model_bindings(const ModelParams& params, const TokenMatrix& tokens, const TokenMatrix& targets) {
    Bindings b = params.tensors;
    b.emplace("tokens", tokens.as_tensor());
    b.emplace("targets", targets.as_tensor());
    return b;
}

static void check_tokens(const ModelConfig& config, const TokenMatrix& tokens) {
    if (tokens.batch == 0 || tokens.seq == 0) throw std::invalid_argument("empty token matrix");
    if (tokens.ids.size() != tokens.batch * tokens.seq) throw std::invalid_argument("token matrix size mismatch");
    if (tokens.seq > config.max_seq_len)
        throw std::invalid_argument("sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                                    std::to_string(config.max_seq_len));
    for (auto id : tokens.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
            throw std::invalid_argument("token id " + std::to_string(id) + " out of range for vocab " +
                                        std::to_string(config.vocab_size));
}

Tensor forward_logits(const ModelParams& params, const TokenMatrix& tokens) {
    check_tokens(params.config, tokens);
    auto mg = build_model_graph(params.config, tokens.batch, tokens.seq);
    // targets are unused by the logits; any in-range id will do
    TokenMatrix dummy(tokens.batch, tokens.seq);
    auto out = mg.graph.forward(model_bindings(params, tokens, dummy));
    return out.at("logits").reshaped({tokens.batch, tokens.seq, params.config.vocab_size});
}

double next_token_loss(const Tensor& logits, const TokenMatrix& targets) {
    if (logits.rank() != 3 || logits.dim(0) != targets.batch || logits.dim(1) != targets.seq)
        throw std::invalid_argument("next_token_loss: logits " + shape_str(logits.shape()) + " vs targets [" +
                                    std::to_string(targets.batch) + ", " + std::to_string(targets.seq) + "]");
    const std::size_t N = targets.batch * targets.seq, V = logits.dim(2);
    Graph g;
    auto x = g.input("logits", {N, V});
    auto t = g.input("targets", {N});
    auto loss = g.cross_entropy(x, t);
    g.forward({{"logits", logits.reshaped({N, V})}, {"targets", targets.as_tensor()}});
    return g.value(loss)[0];
}

std::vector<TokenProb> predict_topk(const ModelParams& params, const std::vector<TokenId>& context, std::size_t k) {
    if (context.empty()) throw std::invalid_argument("predict_topk: empty context");
    const auto& cfg = params.config;
    if (k == 0 || k > cfg.vocab_size) throw std::invalid_argument("predict_topk: k must be in [1, vocab_size]");
    const std::size_t len = std::min(context.size(), cfg.max_seq_len);
    TokenMatrix tokens(1, len, std::vector<TokenId>(context.end() - static_cast<std::ptrdiff_t>(len), context.end()));
    const Tensor logits = forward_logits(params, tokens);

    const std::size_t V = cfg.vocab_size;
    const double* last = &logits.storage()[(len - 1) * V];
    const double mx = *std::max_element(last, last + V);
    std::vector<TokenProb> probs(V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
        probs[j] = {static_cast<TokenId>(j), std::exp(last[j] - mx)};
        z += probs[j].prob;
    }
    for (auto& p : probs) p.prob /= z;
    std::stable_sort(probs.begin(), probs.end(), [](const TokenProb& a, const TokenProb& b) {
        return a.prob > b.prob || (a.prob == b.prob && a.token < b.token);
    });
    probs.resize(k);
    return probs;
}

}  // namespace cclab
