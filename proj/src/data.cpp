#include "cclab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <stdexcept>

namespace cclab {

TokenSeq ingest(std::string_view raw, std::string source_name) {
    TokenSeq seq{{}, std::move(source_name)};
    seq.tokens.reserve(raw.size());
    for (unsigned char c : raw) seq.tokens.push_back(static_cast<TokenId>(c));
    return seq;
}

TokenSeq ingest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ingest(raw, path.string());
}

std::string detokenize(const TokenSeq& seq) {
    std::string out;
    out.reserve(seq.size());
    for (auto id : seq.tokens) {
        if (id < 0 || id > 255) throw std::invalid_argument("detokenize: id " + std::to_string(id) + " is not a byte");
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

FreqTable frequencies(const TokenSeq& seq) {
    if (seq.empty()) throw std::invalid_argument("frequencies: empty sequence");
    std::map<TokenId, std::uint64_t> counts;
    for (auto id : seq.tokens) ++counts[id];
    FreqTable table;
    table.reserve(counts.size());
    for (const auto& [id, n] : counts) table.push_back({id, n});
    std::stable_sort(table.begin(), table.end(), [](const FreqEntry& a, const FreqEntry& b) { return a.count > b.count; });
    return table;
}

std::vector<TokenId> top_k_tokens(const FreqTable& table, std::size_t k) {
    std::vector<TokenId> ids;
    for (std::size_t i = 0; i < std::min(k, table.size()); ++i) ids.push_back(table[i].token);
    return ids;
}

// ---------------------------------------------------------------------------

Batch window_batch(const std::vector<TokenId>& corpus, const std::vector<std::size_t>& starts, std::size_t seq_len) {
    Batch b{TokenMatrix(starts.size(), seq_len), TokenMatrix(starts.size(), seq_len), starts};
    for (std::size_t r = 0; r < starts.size(); ++r) {
        if (starts[r] + seq_len >= corpus.size()) throw std::out_of_range("window exceeds corpus");
        for (std::size_t t = 0; t < seq_len; ++t) {
            b.inputs(r, t) = corpus[starts[r] + t];
            b.targets(r, t) = corpus[starts[r] + t + 1];
        }
    }
    return b;
}

BatchSampler::BatchSampler(std::vector<TokenId> corpus, std::size_t batch, std::size_t seq_len, std::uint64_t seed)
    : corpus_(std::move(corpus)), batch_(batch), seq_len_(seq_len), rng_(seed) {
    if (batch_ == 0 || seq_len_ == 0) throw std::invalid_argument("sampler needs positive batch and seq_len");
    if (corpus_.size() < seq_len_ + 1)
        throw std::invalid_argument("corpus too short: " + std::to_string(corpus_.size()) + " tokens for windows of " +
                                    std::to_string(seq_len_ + 1));
}

Batch BatchSampler::next() {
    std::vector<std::size_t> starts(batch_);
    for (auto& s : starts) s = rng_.below(window_count());
    return window_batch(corpus_, starts, seq_len_);
}

// ---------------------------------------------------------------------------

void MarkovChain::validate() const {
    const std::size_t n = symbols.size();
    if (n == 0) throw std::invalid_argument("markov chain: no states");
    if (transitions.size() != n) throw std::invalid_argument("markov chain: transition table must be square");
    if (std::set<TokenId>(symbols.begin(), symbols.end()).size() != n)
        throw std::invalid_argument("markov chain: symbols must be distinct");
    for (auto s : symbols)
        if (s < 0) throw std::invalid_argument("markov chain: negative symbol");
    for (std::size_t i = 0; i < n; ++i) {
        if (transitions[i].size() != n) throw std::invalid_argument("markov chain: transition table must be square");
        double sum = 0.0;
        for (double p : transitions[i]) {
            if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("markov chain: invalid probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("markov chain: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
}

std::vector<double> MarkovChain::stationary() const {
    validate();
    const std::size_t n = symbols.size();
    // Solve pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
    std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) a[j][i] = transitions[i][j] - (i == j ? 1.0 : 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) a[n - 1][i] = 1.0;
    a[n - 1][n] = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        if (std::abs(a[piv][c]) < 1e-13) return std::vector<double>(n, 1.0 / static_cast<double>(n));
        std::swap(a[c], a[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
        }
    }
    std::vector<double> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = std::max(0.0, a[i][n] / a[i][i]);
    return pi;
}

double MarkovChain::conditional_entropy() const {
    const auto pi = stationary();
    double h = 0.0;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        double row = 0.0;
        for (double p : transitions[i])
            if (p > 0.0) row -= p * std::log(p);
        h += pi[i] * row;
    }
    return h;
}

MarkovChain MarkovChain::random_sparse(std::size_t n_states, std::size_t branching, TokenId first_symbol,
                                       std::uint64_t seed) {
    if (n_states == 0 || branching == 0 || branching > n_states)
        throw std::invalid_argument("random chain needs 1 <= branching <= n_states");
    Rng rng(seed);
    MarkovChain c;
    for (std::size_t i = 0; i < n_states; ++i) c.symbols.push_back(first_symbol + static_cast<TokenId>(i));
    c.transitions.assign(n_states, std::vector<double>(n_states, 0.0));
    for (auto& row : c.transitions) {
        std::vector<std::size_t> order(n_states);
        for (std::size_t i = 0; i < n_states; ++i) order[i] = i;
        for (std::size_t i = n_states; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
        double total = 0.0;
        for (std::size_t b = 0; b < branching; ++b) total += (row[order[b]] = 0.25 + rng.uniform());
        for (auto& p : row) p /= total;
    }
    return c;
}

static std::size_t draw(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (probs[j] <= 0.0) continue;
        acc += probs[j];
        last = j;
        if (u < acc) return j;
    }
    return last;
}

TokenSeq synth_markov(const MarkovChain& chain, std::size_t length, Rng& rng) {
    chain.validate();
    TokenSeq seq{{}, "synth_markov"};
    if (length == 0) return seq;
    seq.tokens.reserve(length);
    std::size_t state = draw(chain.stationary(), rng);
    seq.tokens.push_back(chain.symbols[state]);
    while (seq.tokens.size() < length) {
        state = draw(chain.transitions[state], rng);
        seq.tokens.push_back(chain.symbols[state]);
    }
    return seq;
}

}  // namespace cclab
