#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cclab/data.hpp"
#include "cclab/init.hpp"
#include "cclab/model.hpp"
#include "cclab/optim.hpp"

namespace cclab {

using Json = nlohmann::json;

/// Synthetic corpus recipe. Either an explicit chain or a random sparse one.
struct SynthSpec {
    enum class Kind { Markov, RandomMarkov };
    Kind kind = Kind::Markov;
    MarkovChain chain;  ///< Markov
    std::size_t n_states = 0, branching = 0;
    TokenId first_symbol = 0;
    std::uint64_t chain_seed = 0;  ///< RandomMarkov
    std::size_t length = 0;

    MarkovChain resolve_chain() const;
    friend bool operator==(const SynthSpec& a, const SynthSpec& b);
};

struct DataSpec {
    std::string path;  ///< raw byte corpus, used when synth is empty
    std::optional<SynthSpec> synth;
    std::size_t batch = 8;
    std::size_t seq_len = 32;
    double holdout = 0.1;

    friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct LoggingSpec {
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 0;
    std::string out_dir = "out";

    friend bool operator==(const LoggingSpec&, const LoggingSpec&) = default;
};

struct TrainConfig {
    ModelConfig model;
    InitScheme init;
    OptimHyper optim;
    DataSpec data;
    LoggingSpec logging;
    /// Seeds the corpus generator and the batch sampler.
    std::uint64_t seed = 0;

    std::size_t total_steps() const { return optim.total_steps; }
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

Json to_json(const ModelConfig& c);
Json to_json(const InitScheme& s);
Json to_json(const OptimHyper& h);
Json to_json(const DataSpec& d);
Json to_json(const TrainConfig& c);

/// Strict parsers: unknown keys, wrong types and invariant violations throw ConfigError.
ModelConfig model_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
TrainConfig load_train_config(const std::string& path);

/// Hash of everything that determines the trajectory (all but logging), hex encoded.
std::string config_hash(const TrainConfig& c);

/// Loads the corpus the config describes (file or synthetic).
TokenSeq load_corpus(const TrainConfig& c);

}  // namespace cclab
