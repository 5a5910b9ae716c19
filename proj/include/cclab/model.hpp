#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cclab/graph.hpp"
#include "cclab/tensor.hpp"

namespace cclab {

using TokenId = std::int32_t;

/// Row-major batch x seq grid of token ids.
struct TokenMatrix {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<TokenId> ids;

    TokenMatrix() = default;
    TokenMatrix(std::size_t b, std::size_t s) : batch(b), seq(s), ids(b * s, 0) {}
    TokenMatrix(std::size_t b, std::size_t s, std::vector<TokenId> v) : batch(b), seq(s), ids(std::move(v)) {}

    TokenId& operator()(std::size_t b, std::size_t t) { return ids[b * seq + t]; }
    TokenId operator()(std::size_t b, std::size_t t) const { return ids[b * seq + t]; }

    /// Flattened ids as an engine input tensor of shape [batch*seq].
    Tensor as_tensor() const;

    friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_kv_heads = 4;
    std::size_t head_dim = 16;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 64;
    bool use_embedding_norm = false;
    bool use_sandwich_norm = false;
    double rope_base = 10000.0;
    /// RMS-normalize before the output projection. Off only for bare embedding/output probes.
    bool use_final_norm = true;

    /// Throws ConfigError when the shape is inconsistent.
    void validate() const;
    /// SwiGLU hidden width: ceil(8/3 d_model) rounded up to a multiple of 8.
    std::size_t mlp_hidden() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named trainable tensors of the decoder. Matrices are stored d_in x d_out and
/// applied as x W.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name) { return tensors.at(name); }
    const Tensor& at(const std::string& name) const { return tensors.at(name); }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

namespace names {
inline constexpr const char* token_embedding = "tok_embedding";
inline constexpr const char* embedding_norm = "emb_norm";
inline constexpr const char* final_norm = "final_norm";
inline constexpr const char* output = "output";
std::string layer(std::size_t l, const char* leaf);
}  // namespace names

/// Allocates every tensor: zero matrices, unit norm gains.
ModelParams build(const ModelConfig& config);

/// Fan-in used for the initialization scale of a 2-D parameter.
std::size_t fan_in(const ModelConfig& config, const std::string& name, const Shape& shape);

/// The decoder as an engine graph for a fixed batch/sequence shape.
/// Leaves: every parameter by name, "tokens" and "targets" of shape [batch*seq].
struct ModelGraph {
    Graph graph;
    NodeId tokens;
    NodeId targets;
    NodeId logits;  ///< [batch*seq, vocab]
    NodeId loss;
    std::size_t batch = 0;
    std::size_t seq = 0;
};

ModelGraph build_model_graph(const ModelConfig& config, std::size_t batch, std::size_t seq);

/// Parameter bindings plus token/target inputs for a ModelGraph.
Bindings model_bindings(const ModelParams& params, const TokenMatrix& tokens, const TokenMatrix& targets);

/// Logits of shape [batch, seq, vocab].
Tensor forward_logits(const ModelParams& params, const TokenMatrix& tokens);

/// Mean cross-entropy of [batch, seq, vocab] logits against targets.
double next_token_loss(const Tensor& logits, const TokenMatrix& targets);

struct TokenProb {
    TokenId token;
    double prob;
    friend bool operator==(const TokenProb&, const TokenProb&) = default;
};

/// Top-k of the next-token distribution after `context`, descending, ties by id.
/// Contexts longer than max_seq_len use their trailing window.
std::vector<TokenProb> predict_topk(const ModelParams& params, const std::vector<TokenId>& context, std::size_t k);

}  // namespace cclab
