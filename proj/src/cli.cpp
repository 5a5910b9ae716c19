#include "cclab/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cclab/analysis.hpp"
#include "cclab/checkpoint.hpp"
#include "cclab/config.hpp"
#include "cclab/init.hpp"
#include "cclab/stats.hpp"
#include "cclab/theory.hpp"
#include "cclab/trainer.hpp"

namespace cclab {

namespace {

namespace fs = std::filesystem;

/// Malformed input documents; reported with exit code 2.
class SchemaError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw SchemaError(path + ": invalid JSON: " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
    if (out_path.empty())
        out << text;
    else
        write_file(out_path, text);
}

theory::CircuitEnsemble parse_ensemble(const Json& j, const std::string& where) {
    try {
        return theory::ensemble_from_json(j);
    } catch (const std::invalid_argument& e) {
        throw SchemaError(where + ": " + e.what());
    }
}

// -- subcommands -------------------------------------------------------------

int cmd_train(const std::string& config_path, std::ostream& out) {
    const TrainConfig cfg = load_train_config(config_path);
    const fs::path dir = cfg.logging.out_dir;
    fs::create_directories(dir);
    write_file(dir / "manifest.json", to_json(cfg).dump(2) + "\n");

    TrainOptions opts;
    opts.on_checkpoint = [&](const Checkpoint& c) {
        save_checkpoint(c, dir / ("ckpt_" + std::to_string(c.step) + ".cclm"));
    };
    try {
        const TrainResult result = train(cfg, opts);
        write_metrics_csv(result.log, dir / "metrics.csv");
        save_checkpoint(result.final, dir / "final.cclm");
        out << "trained " << result.final.step << " steps, final loss "
            << (result.log.step_losses.empty() ? NAN : result.log.step_losses.back()) << ", "
            << result.log.spikes.size() << " spikes; outputs in " << dir.string() << "\n";
    } catch (const NonFiniteLoss& e) {
        write_metrics_csv(e.log(), dir / "metrics.csv");
        save_checkpoint(e.last_good(), dir / "last_good.cclm");
        throw;
    }
    return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& metric, std::size_t top_k,
                const std::string& out_path, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (metric == "dc" || metric == "ds") {
        const LayerMetric m = parse_layer_metric(metric);
        emit(layer_profile_csv(layer_profile(ckpt.params, m), m), out_path, out);
        return 0;
    }
    if (metric == "norm") {
        const NormProfile p = param_norm_profile(ckpt.params);
        std::string text = "tensor,frobenius\n";
        for (const auto& [name, v] : p.per_tensor) text += name + "," + num(v) + "\n";
        text += "global," + num(p.global) + "\n";
        emit(text, out_path, out);
        return 0;
    }
    if (metric == "embed") {
        const TrainConfig& cfg = ckpt.config;
        const std::size_t k = top_k ? top_k : std::min<std::size_t>(350, cfg.model.vocab_size);
        const CorpusSplit split = split_corpus(load_corpus(cfg), cfg.data.holdout);
        const auto ids = top_k_tokens(frequencies(TokenSeq{split.train, "train"}), k);
        const Tensor sim = embedding_similarity(ckpt.params.at("tok_embedding"), ids);
        std::string text = "token";
        for (auto id : ids) text += "," + std::to_string(id);
        text += "\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            text += std::to_string(ids[i]);
            for (std::size_t j = 0; j < ids.size(); ++j) text += "," + num(sim.at(i, j));
            text += "\n";
        }
        emit(text, out_path, out);
        return 0;
    }
    throw SchemaError("unknown metric '" + metric + "' (expected dc, ds, embed or norm)");
}

int cmd_scaling_fit(const std::string& csv_path, bool with_floor, std::ostream& out) {
    std::istringstream in(read_file(csv_path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("size,loss", 0) != 0)
        throw SchemaError(csv_path + ": expected header 'size,loss'");
    std::vector<ScalingPoint> pts;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("");
            pts.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
        } catch (const std::exception&) {
            throw SchemaError(csv_path + ":" + std::to_string(lineno) + ": expected 'size,loss'");
        }
    }
    const PowerFit f = fit_power_law(pts, with_floor);
    Json j{{"A", f.amplitude}, {"alpha", f.exponent}, {"floor", f.floor}, {"residual", f.residual}};
    out << j.dump() << "\n";
    return 0;
}

int cmd_theory_norm(const std::string& path, double gamma, std::ostream& out) {
    const auto e = parse_ensemble(read_json(path), path);
    out << num(theory::ensemble_norm(e, theory::GammaExponent(gamma))) << "\n";
    return 0;
}

int cmd_theory_prefer(const std::string& path, double gamma, std::ostream& out) {
    const Json j = read_json(path);
    if (!j.is_array() || j.empty()) throw SchemaError(path + ": expected a non-empty array of ensembles");
    std::vector<theory::CircuitEnsemble> es;
    for (std::size_t i = 0; i < j.size(); ++i) es.push_back(parse_ensemble(j[i], path + "[" + std::to_string(i) + "]"));
    out << theory::preferred_ensemble(es, theory::GammaExponent(gamma)) << "\n";
    return 0;
}

int cmd_init_check(const std::string& config_path, std::size_t samples, std::ostream& out) {
    if (samples < 2) throw SchemaError("--samples must be at least 2");
    const TrainConfig cfg = load_train_config(config_path);
    const ModelParams shapes = build(cfg.model);
    out << "tensor,d_in,target_std,empirical_std,rel_error,ks_stat,ks_pvalue\n";
    for (const auto& [name, t] : shapes.tensors) {
        if (t.rank() != 2) continue;
        const std::size_t d_in = fan_in(cfg.model, name, t.shape());
        const double target = cfg.init.std_for(d_in);
        Rng rng(derive_seed(cfg.init.seed, "init-check/" + name));
        const std::size_t cols = (samples + d_in - 1) / d_in;
        const Tensor draw = cfg.init.kind == InitScheme::Kind::GammaRate
                                ? gamma_init(d_in, cols, cfg.init.value, rng)
                                : fixed_std_init(d_in, cols, cfg.init.value, rng);
        std::vector<double> xs(draw.data().begin(), draw.data().begin() + static_cast<std::ptrdiff_t>(samples));
        const double sd = stats::stddev(xs);
        const double ks = stats::ks_statistic_normal(xs, target);
        out << name << "," << d_in << "," << num(target) << "," << num(sd) << "," << num(sd / target - 1.0) << ","
            << num(ks) << "," << num(stats::ks_pvalue(ks, samples)) << "\n";
    }
    return 0;
}

int cmd_spikes(const std::string& csv_path, std::size_t window, double k, std::ostream& out) {
    const auto rows = read_metrics_csv(csv_path);
    std::vector<double> losses;
    for (const auto& r : rows) losses.push_back(r.train_loss);
    for (auto i : detect_spikes(losses, window, k)) out << rows[i].step << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"cclab: tiny decoder pretraining laboratory", "cclab"};
    app.require_subcommand(1);

    std::string path, metric = "ds", out_path;
    std::size_t top_k = 0, samples = 100000, window = 32;
    double gamma = 0.0, k = 5.0;
    bool floor = false;

    auto* train = app.add_subcommand("train", "train a model from a run config");
    train->add_option("config", path, "run config JSON")->required();

    auto* analyze = app.add_subcommand("analyze", "structural metrics of a checkpoint");
    analyze->add_option("checkpoint", path, "checkpoint file")->required();
    analyze->add_option("--metric", metric, "dc, ds, embed or norm")->capture_default_str();
    analyze->add_option("--top-k", top_k, "embed: number of most frequent tokens (default min(350, vocab))");
    analyze->add_option("--out", out_path, "write CSV here instead of stdout");

    auto* fit = app.add_subcommand("scaling-fit", "fit loss = A size^-alpha (+ floor)");
    fit->add_option("csv", path, "CSV with header size,loss")->required();
    fit->add_flag("--floor", floor, "fit an irreducible loss floor");

    auto* tnorm = app.add_subcommand("theory-norm", "gamma-norm of a circuit ensemble");
    tnorm->add_option("ensemble", path, "ensemble JSON")->required();
    tnorm->add_option("--gamma", gamma, "norm exponent, > -1.5")->required();

    auto* tpref = app.add_subcommand("theory-prefer", "index of the minimum-norm ensemble");
    tpref->add_option("ensembles", path, "JSON array of ensembles")->required();
    tpref->add_option("--gamma", gamma, "norm exponent, > -1.5")->required();

    auto* icheck = app.add_subcommand("init-check", "sample initialization statistics per matrix");
    icheck->add_option("config", path, "run config JSON")->required();
    icheck->add_option("--samples", samples, "draws per matrix")->capture_default_str();

    auto* spikes = app.add_subcommand("spikes", "flag loss spikes in a metrics CSV");
    spikes->add_option("metrics", path, "metrics CSV written by train")->required();
    spikes->add_option("--window", window, "trailing window, >= 8")->capture_default_str();
    spikes->add_option("--k", k, "IQR multiplier")->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << " (see --help)\n";
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(path, out);
        if (analyze->parsed()) return cmd_analyze(path, metric, top_k, out_path, out);
        if (fit->parsed()) return cmd_scaling_fit(path, floor, out);
        if (tnorm->parsed()) return cmd_theory_norm(path, gamma, out);
        if (tpref->parsed()) return cmd_theory_prefer(path, gamma, out);
        if (icheck->parsed()) return cmd_init_check(path, samples, out);
        if (spikes->parsed()) return cmd_spikes(path, window, k, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        err << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "error: no subcommand\n";
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace cclab
