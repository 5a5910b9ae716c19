#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cclab/checkpoint.hpp"
#include "cclab/config.hpp"

namespace cclab {

struct RunRecord {
    std::size_t step = 0;
    double train_loss = 0.0;
    std::optional<double> eval_loss;
    double lr = 0.0;
    double param_norm = 0.0;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct RunLog {
    std::vector<RunRecord> records;
    /// Training loss of every step, index i holding step (first_step + i).
    std::vector<double> step_losses;
    std::size_t first_step = 1;
    /// Steps flagged by detect_spikes over step_losses.
    std::vector<std::size_t> spikes;

    friend bool operator==(const RunLog&, const RunLog&) = default;
};

struct TrainOptions {
    /// Continue from this checkpoint instead of a fresh initialization.
    const Checkpoint* resume = nullptr;
    /// Stop after this step (0 runs to total_steps). The schedule still spans total_steps.
    std::size_t stop_after = 0;
    /// Called at every checkpoint_every boundary.
    std::function<void(const Checkpoint&)> on_checkpoint;
    std::size_t spike_window = 32;
    double spike_k = 5.0;
};

struct TrainResult {
    Checkpoint final;
    RunLog log;
};

/// Raised when the training loss becomes non-finite; carries the state before that step.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::size_t step, Checkpoint last_good, RunLog log)
        : std::runtime_error("non-finite training loss at step " + std::to_string(step)),
          step_(step),
          last_good_(std::move(last_good)),
          log_(std::move(log)) {}
    std::size_t step() const { return step_; }
    const Checkpoint& last_good() const { return last_good_; }
    const RunLog& log() const { return log_; }

private:
    std::size_t step_;
    Checkpoint last_good_;
    RunLog log_;
};

/// Corpus split: eval is the final `holdout` fraction.
struct CorpusSplit {
    std::vector<TokenId> train;
    std::vector<TokenId> eval;
};
CorpusSplit split_corpus(const TokenSeq& corpus, double holdout);

/// Deterministic pretraining loop. Parameters and optimizer moments are kept at
/// float32 precision between steps so that checkpoints resume bit-exactly.
TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {});

/// sqrt of the sum of squares over every tensor.
double global_param_norm(const ModelParams& params);

/// Step t is flagged iff loss[t] > median(previous window) + k * IQR(previous window).
/// Returns indices into `losses`; never flags inside the first window.
std::vector<std::size_t> detect_spikes(const std::vector<double>& losses, std::size_t window, double k);

/// `step,train_loss,eval_loss,lr,param_norm`, 9 significant digits, empty eval when absent.
void write_metrics_csv(const RunLog& log, const std::filesystem::path& path);
std::string metrics_csv(const RunLog& log);
std::vector<RunRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace cclab
