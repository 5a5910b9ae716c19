#include "cclab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace cclab {

namespace {

// Field reader that remembers which keys were consumed so leftovers can be rejected.
class Fields {
public:
    Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail("must be an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    template <class T>
    T get(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) fail(std::string("missing required key '") + key + "'");
        return convert<T>(key);
    }

    template <class T>
    T get_or(const char* key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return convert<T>(key);
    }

    const Json& raw(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) fail(std::string("missing required key '") + key + "'");
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) fail("unknown key '" + key + "'");
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }
    const std::string& where() const { return where_; }

private:
    template <class T>
    T convert(const char* key) {
        const Json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(std::string("'") + key + "' must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(std::string("'") + key + "' must be an integer");
            if (std::is_unsigned_v<T> && v.get<long long>() < 0) fail(std::string("'") + key + "' must be >= 0");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(std::string("'") + key + "' must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(std::string("'") + key + "' must be a string");
        }
        return v.get<T>();
    }

    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class Fn>
auto rethrow_as_config(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

Json chain_json(const MarkovChain& c) { return Json{{"symbols", c.symbols}, {"transitions", c.transitions}}; }

SynthSpec synth_from_json(const Json& j) {
    Fields f(j, "data.synth");
    SynthSpec s;
    const auto kind = f.get<std::string>("kind");
    s.length = f.get<std::size_t>("length");
    if (kind == "markov") {
        s.kind = SynthSpec::Kind::Markov;
        const Json& trans = f.raw("transitions");
        if (f.has("alphabet") == f.has("symbols")) f.fail("give exactly one of 'alphabet' or 'symbols'");
        if (f.has("alphabet")) {
            for (unsigned char ch : f.get<std::string>("alphabet")) s.chain.symbols.push_back(ch);
        } else {
            const Json& sym = f.raw("symbols");
            if (!sym.is_array()) f.fail("'symbols' must be an array of token ids");
            s.chain.symbols = rethrow_as_config(f.where(), [&] { return sym.get<std::vector<TokenId>>(); });
        }
        if (!trans.is_array()) f.fail("'transitions' must be a matrix");
        s.chain.transitions =
            rethrow_as_config(f.where(), [&] { return trans.get<std::vector<std::vector<double>>>(); });
        rethrow_as_config(f.where(), [&] {
            s.chain.validate();
            return 0;
        });
    } else if (kind == "random_markov") {
        s.kind = SynthSpec::Kind::RandomMarkov;
        s.n_states = f.get<std::size_t>("n_states");
        s.branching = f.get<std::size_t>("branching");
        s.first_symbol = f.get_or<TokenId>("first_symbol", 0);
        s.chain_seed = f.get_or<std::uint64_t>("chain_seed", 0);
        if (s.n_states == 0 || s.branching == 0 || s.branching > s.n_states)
            f.fail("need 1 <= branching <= n_states");
    } else {
        f.fail("unknown synth kind '" + kind + "' (expected markov or random_markov)");
    }
    f.finish();
    return s;
}

}  // namespace

MarkovChain SynthSpec::resolve_chain() const {
    if (kind == Kind::Markov) return chain;
    return MarkovChain::random_sparse(n_states, branching, first_symbol, chain_seed);
}

bool operator==(const SynthSpec& a, const SynthSpec& b) {
    return a.kind == b.kind && a.chain.symbols == b.chain.symbols && a.chain.transitions == b.chain.transitions &&
           a.n_states == b.n_states && a.branching == b.branching && a.first_symbol == b.first_symbol &&
           a.chain_seed == b.chain_seed && a.length == b.length;
}

void TrainConfig::validate() const {
    rethrow_as_config("config", [&] {
        model.validate();
        init.validate();
        optim.validate();
        return 0;
    });
    if (data.holdout < 0.0 || data.holdout > 0.5) throw ConfigError("data: holdout must be in [0, 0.5]");
    if (data.batch == 0 || data.seq_len == 0) throw ConfigError("data: batch and seq_len must be positive");
    if (data.seq_len > model.max_seq_len) throw ConfigError("data: seq_len exceeds model.max_seq_len");
    if (data.path.empty() == !data.synth.has_value()) throw ConfigError("data: give exactly one of 'path' or 'synth'");
    if (data.synth) {
        const auto chain = rethrow_as_config("data.synth", [&] { return data.synth->resolve_chain(); });
        for (auto s : chain.symbols)
            if (static_cast<std::size_t>(s) >= model.vocab_size)
                throw ConfigError("data.synth: symbol " + std::to_string(s) + " outside model vocabulary");
    } else if (model.vocab_size < 256) {
        throw ConfigError("data: byte corpora need model.vocab_size >= 256");
    }
    if (logging.log_every == 0) throw ConfigError("logging: log_every must be positive");
}

// ---------------------------------------------------------------------------

Json to_json(const ModelConfig& c) {
    return Json{{"n_layers", c.n_layers},
                {"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"n_kv_heads", c.n_kv_heads},
                {"head_dim", c.head_dim},
                {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len},
                {"use_embedding_norm", c.use_embedding_norm},
                {"use_sandwich_norm", c.use_sandwich_norm},
                {"use_final_norm", c.use_final_norm},
                {"rope_base", c.rope_base}};
}

Json to_json(const InitScheme& s) {
    return Json{{"kind", s.kind == InitScheme::Kind::GammaRate ? "gamma" : "sigma"},
                {"value", s.value},
                {"seed", s.seed}};
}

Json to_json(const OptimHyper& h) {
    return Json{{"lr_max", h.lr_max},     {"lr_min", h.lr_min}, {"warmup_frac", h.warmup_frac},
                {"beta1", h.beta1},       {"beta2", h.beta2},   {"eps", h.eps},
                {"lambda", h.weight_decay}, {"total_steps", h.total_steps}, {"grad_clip", h.grad_clip}};
}

Json to_json(const DataSpec& d) {
    Json j{{"batch", d.batch}, {"seq_len", d.seq_len}, {"holdout", d.holdout}};
    if (d.synth) {
        const auto& s = *d.synth;
        Json sj{{"length", s.length}};
        if (s.kind == SynthSpec::Kind::Markov) {
            sj["kind"] = "markov";
            sj.update(chain_json(s.chain));
        } else {
            sj["kind"] = "random_markov";
            sj["n_states"] = s.n_states;
            sj["branching"] = s.branching;
            sj["first_symbol"] = s.first_symbol;
            sj["chain_seed"] = s.chain_seed;
        }
        j["synth"] = sj;
    } else {
        j["path"] = d.path;
    }
    return j;
}

Json to_json(const TrainConfig& c) {
    return Json{{"model", to_json(c.model)},
                {"init", to_json(c.init)},
                {"optim", to_json(c.optim)},
                {"data", to_json(c.data)},
                {"logging",
                 {{"log_every", c.logging.log_every},
                  {"checkpoint_every", c.logging.checkpoint_every},
                  {"out_dir", c.logging.out_dir}}},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const Json& j) {
    Fields f(j, "model");
    ModelConfig c;
    c.n_layers = f.get<std::size_t>("n_layers");
    c.d_model = f.get<std::size_t>("d_model");
    c.n_heads = f.get<std::size_t>("n_heads");
    c.n_kv_heads = f.get_or<std::size_t>("n_kv_heads", c.n_heads);
    c.head_dim = f.get<std::size_t>("head_dim");
    c.vocab_size = f.get<std::size_t>("vocab_size");
    c.max_seq_len = f.get<std::size_t>("max_seq_len");
    c.use_embedding_norm = f.get_or<bool>("use_embedding_norm", false);
    c.use_sandwich_norm = f.get_or<bool>("use_sandwich_norm", false);
    c.use_final_norm = f.get_or<bool>("use_final_norm", true);
    c.rope_base = f.get_or<double>("rope_base", 10000.0);
    f.finish();
    c.validate();
    return c;
}

TrainConfig train_config_from_json(const Json& j) {
    Fields top(j, "config");
    TrainConfig c;
    c.model = model_config_from_json(top.raw("model"));

    {
        Fields f(top.raw("init"), "init");
        const auto kind = f.get<std::string>("kind");
        if (kind == "gamma")
            c.init.kind = InitScheme::Kind::GammaRate;
        else if (kind == "sigma")
            c.init.kind = InitScheme::Kind::FixedStd;
        else
            f.fail("kind must be \"gamma\" or \"sigma\", got \"" + kind + "\"");
        c.init.value = f.get<double>("value");
        c.init.seed = f.get_or<std::uint64_t>("seed", 0);
        f.finish();
    }
    {
        Fields f(top.raw("optim"), "optim");
        OptimHyper d;
        c.optim.lr_max = f.get_or("lr_max", d.lr_max);
        c.optim.lr_min = f.get_or("lr_min", d.lr_min);
        c.optim.warmup_frac = f.get_or("warmup_frac", d.warmup_frac);
        c.optim.beta1 = f.get_or("beta1", d.beta1);
        c.optim.beta2 = f.get_or("beta2", d.beta2);
        c.optim.eps = f.get_or("eps", d.eps);
        c.optim.weight_decay = f.get_or("lambda", d.weight_decay);
        c.optim.total_steps = f.get<std::size_t>("total_steps");
        c.optim.grad_clip = f.get_or("grad_clip", d.grad_clip);
        f.finish();
    }
    {
        Fields f(top.raw("data"), "data");
        c.data.batch = f.get<std::size_t>("batch");
        c.data.seq_len = f.get<std::size_t>("seq_len");
        c.data.holdout = f.get_or("holdout", c.data.holdout);
        if (f.has("path")) c.data.path = f.get<std::string>("path");
        if (f.has("synth")) c.data.synth = synth_from_json(f.raw("synth"));
        f.finish();
    }
    if (top.has("logging")) {
        Fields f(top.raw("logging"), "logging");
        c.logging.log_every = f.get_or("log_every", c.logging.log_every);
        c.logging.checkpoint_every = f.get_or("checkpoint_every", c.logging.checkpoint_every);
        c.logging.out_dir = f.get_or("out_dir", c.logging.out_dir);
        f.finish();
    }
    c.seed = top.get_or<std::uint64_t>("seed", 0);
    top.finish();
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return train_config_from_json(j);
}

std::string config_hash(const TrainConfig& c) {
    Json j = to_json(c);
    j.erase("logging");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

TokenSeq load_corpus(const TrainConfig& c) {
    if (c.data.synth) {
        Rng rng(derive_seed(c.seed, "corpus"));
        return synth_markov(c.data.synth->resolve_chain(), c.data.synth->length, rng);
    }
    return ingest_file(c.data.path);
}

}  // namespace cclab
