#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cclab/model.hpp"
#include "cclab/rng.hpp"

namespace cclab {

struct TokenSeq {
    std::vector<TokenId> tokens;
    std::string source_name;

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

/// Byte-level tokenization: one token per byte, vocabulary 256.
TokenSeq ingest(std::string_view raw, std::string source_name = "<memory>");
TokenSeq ingest_file(const std::filesystem::path& path);
/// Inverse of `ingest`; throws if any id is not a byte.
std::string detokenize(const TokenSeq& seq);

struct FreqEntry {
    TokenId token;
    std::uint64_t count;
    friend bool operator==(const FreqEntry&, const FreqEntry&) = default;
};

/// Observed tokens with exact counts, count descending, ties by ascending id.
using FreqTable = std::vector<FreqEntry>;

FreqTable frequencies(const TokenSeq& seq);
/// Ids of the `k` most frequent tokens (fewer if fewer were observed).
std::vector<TokenId> top_k_tokens(const FreqTable& table, std::size_t k);

struct Batch {
    TokenMatrix inputs;
    TokenMatrix targets;  ///< inputs shifted left by one within each window
    std::vector<std::size_t> starts;
};

/// Draws windows of seq_len + 1 tokens uniformly with replacement.
class BatchSampler {
public:
    BatchSampler(std::vector<TokenId> corpus, std::size_t batch, std::size_t seq_len, std::uint64_t seed);

    Batch next();
    std::size_t window_count() const { return corpus_.size() - seq_len_; }
    Rng& rng() { return rng_; }
    const Rng& rng() const { return rng_; }

private:
    std::vector<TokenId> corpus_;
    std::size_t batch_;
    std::size_t seq_len_;
    Rng rng_;
};

/// Builds the window at `start` (inputs/targets for one row).
Batch window_batch(const std::vector<TokenId>& corpus, const std::vector<std::size_t>& starts, std::size_t seq_len);

/// Order-1 Markov chain over `symbols`; transitions[i][j] = P(next = symbols[j] | current = symbols[i]).
struct MarkovChain {
    std::vector<TokenId> symbols;
    std::vector<std::vector<double>> transitions;

    void validate() const;
    std::vector<double> stationary() const;
    /// Entropy rate in nats: sum_i pi_i H(row_i). The optimal next-token loss.
    double conditional_entropy() const;

    /// Random chain where each state has `branching` successors with random weights.
    static MarkovChain random_sparse(std::size_t n_states, std::size_t branching, TokenId first_symbol,
                                     std::uint64_t seed);
};

/// Samples `length` tokens; the first state is drawn from the stationary law.
TokenSeq synth_markov(const MarkovChain& chain, std::size_t length, Rng& rng);

}  // namespace cclab
