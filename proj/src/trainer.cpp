#include "cclab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cclab/init.hpp"

namespace cclab {

namespace {

constexpr std::size_t kMaxEvalWindows = 32;

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void round_all(ModelParams& params, OptimState& state) {
    for (auto& [_, t] : params.tensors) round_to_storage(t);
    for (auto& [_, m] : state.moments) {
        round_to_storage(m.m);
        round_to_storage(m.v);
    }
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

CorpusSplit split_corpus(const TokenSeq& corpus, double holdout) {
    const auto n_eval = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(corpus.size())));
    CorpusSplit s;
    s.train.assign(corpus.tokens.begin(), corpus.tokens.end() - static_cast<std::ptrdiff_t>(n_eval));
    s.eval.assign(corpus.tokens.end() - static_cast<std::ptrdiff_t>(n_eval), corpus.tokens.end());
    return s;
}

double global_param_norm(const ModelParams& params) {
    double sq = 0.0;
    for (const auto& [_, t] : params.tensors)
        for (double v : t.data()) sq += v * v;
    return std::sqrt(sq);
}

std::vector<std::size_t> detect_spikes(const std::vector<double>& losses, std::size_t window, double k) {
    if (window < 8) throw std::invalid_argument("detect_spikes: window must be >= 8");
    if (losses.size() < window)
        throw std::invalid_argument("detect_spikes: series of length " + std::to_string(losses.size()) +
                                    " is shorter than the window " + std::to_string(window));
    std::vector<std::size_t> flagged;
    for (std::size_t t = window; t < losses.size(); ++t) {
        std::vector<double> prev(losses.begin() + static_cast<std::ptrdiff_t>(t - window),
                                 losses.begin() + static_cast<std::ptrdiff_t>(t));
        const double med = quantile(prev, 0.5);
        const double iqr = quantile(prev, 0.75) - quantile(prev, 0.25);
        if (losses[t] > med + k * iqr) flagged.push_back(t);
    }
    return flagged;
}

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    const TokenSeq corpus = load_corpus(cfg);
    if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
    const CorpusSplit split = split_corpus(corpus, cfg.data.holdout);
    const std::size_t seq = cfg.data.seq_len, T = cfg.total_steps();
    if (split.train.size() < seq + 1)
        throw std::invalid_argument("training split has " + std::to_string(split.train.size()) +
                                    " tokens, need at least " + std::to_string(seq + 1));
    if (cfg.data.holdout > 0.0 && split.eval.size() < seq + 1)
        throw std::invalid_argument("eval split has " + std::to_string(split.eval.size()) + " tokens, need at least " +
                                    std::to_string(seq + 1));
    for (auto id : corpus.tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.model.vocab_size)
            throw std::invalid_argument("corpus token " + std::to_string(id) + " outside the model vocabulary");

    const std::string hash = config_hash(cfg);
    BatchSampler sampler(split.train, cfg.data.batch, seq, derive_seed(cfg.seed, "sampler"));
    ModelParams params;
    OptimState state;
    std::size_t step = 0;
    if (opts.resume) {
        if (opts.resume->config_hash != hash)
            throw CheckpointError("resume checkpoint was produced by a different config (hash " +
                                  opts.resume->config_hash + " vs " + hash + ")");
        params = opts.resume->params;
        state = opts.resume->optim;
        sampler.rng().restore(opts.resume->sampler_rng);
        step = opts.resume->step;
        if (state.t != step) throw CheckpointError("checkpoint optimizer step does not match its training step");
    } else {
        params = build(cfg.model);
        apply_scheme(params, cfg.init);
        state = OptimState::zeros_like(params.tensors);
        round_all(params, state);
    }

    auto snapshot = [&](std::size_t s) {
        return Checkpoint{cfg, s, params, state, sampler.rng().state(), hash};
    };

    ModelGraph mg = build_model_graph(cfg.model, cfg.data.batch, seq);

    std::optional<ModelGraph> eval_graph;
    Batch eval_batch;
    if (cfg.data.holdout > 0.0) {
        std::vector<std::size_t> starts;
        for (std::size_t s = 0; s + seq < split.eval.size() && starts.size() < kMaxEvalWindows; s += seq + 1)
            starts.push_back(s);
        eval_batch = window_batch(split.eval, starts, seq);
        eval_graph.emplace(build_model_graph(cfg.model, starts.size(), seq));
    }

    const std::size_t stop = opts.stop_after ? std::min(opts.stop_after, T) : T;
    RunLog log;
    log.first_step = step + 1;
    while (step < stop) {
        const std::size_t s = step + 1;
        const Batch batch = sampler.next();
        mg.graph.forward(model_bindings(params, batch.inputs, batch.targets));
        const double loss = mg.graph.value(mg.loss)[0];
        if (!std::isfinite(loss)) throw NonFiniteLoss(s, snapshot(step), log);

        auto grads = mg.graph.backward(mg.loss);
        if (cfg.optim.grad_clip > 0.0) clip_global_norm(grads, cfg.optim.grad_clip);
        const double lr = adamw_step(params.tensors, grads, state, cfg.optim);
        round_all(params, state);
        step = s;
        log.step_losses.push_back(loss);

        if (s % cfg.logging.log_every == 0 || s == T) {
            RunRecord rec{s, loss, std::nullopt, lr, global_param_norm(params)};
            if (eval_graph) {
                eval_graph->graph.forward(model_bindings(params, eval_batch.inputs, eval_batch.targets));
                rec.eval_loss = eval_graph->graph.value(eval_graph->loss)[0];
            }
            log.records.push_back(rec);
        }
        if (cfg.logging.checkpoint_every && s % cfg.logging.checkpoint_every == 0 && opts.on_checkpoint)
            opts.on_checkpoint(snapshot(s));
    }

    if (log.step_losses.size() >= opts.spike_window && opts.spike_window >= 8)
        for (auto i : detect_spikes(log.step_losses, opts.spike_window, opts.spike_k))
            log.spikes.push_back(log.first_step + i);
    return TrainResult{snapshot(step), std::move(log)};
}

// ---------------------------------------------------------------------------

std::string metrics_csv(const RunLog& log) {
    std::string out = "step,train_loss,eval_loss,lr,param_norm\n";
    for (const auto& r : log.records) {
        out += std::to_string(r.step) + "," + fmt9(r.train_loss) + "," + (r.eval_loss ? fmt9(*r.eval_loss) : "") +
               "," + fmt9(r.lr) + "," + fmt9(r.param_norm) + "\n";
    }
    return out;
}

void write_metrics_csv(const RunLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
    out << metrics_csv(log);
}

std::vector<RunRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,train_loss,eval_loss,lr,param_norm")
        throw std::runtime_error(path.string() + ": missing metrics header");
    std::vector<RunRecord> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 5) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
        try {
            RunRecord r;
            r.step = std::stoull(cells[0]);
            r.train_loss = std::stod(cells[1]);
            if (!cells[2].empty()) r.eval_loss = std::stod(cells[2]);
            r.lr = std::stod(cells[3]);
            r.param_norm = std::stod(cells[4]);
            rows.push_back(r);
        } catch (const std::exception&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

}  // namespace cclab
