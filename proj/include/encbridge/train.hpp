#pragma once

// Adam, the training loop, and the fine-tune / retrain experiment workflows.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "encbridge/analysis.hpp"
#include "encbridge/bridge_init.hpp"
#include "encbridge/checkpoint.hpp"
#include "encbridge/data.hpp"
#include "encbridge/eval.hpp"
#include "encbridge/model.hpp"

namespace encbridge {

enum class TrainMode { Finetune, Retrain };

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct TrainConfig {
    TrainMode mode = TrainMode::Retrain;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> epochs;
    std::size_t batch_size = 16;
    double lr = 3e-4;
    AdamSettings adam;
    double grad_clip = 1.0;  // <= 0 disables clipping
    std::size_t warmup_steps = 0;
    std::uint64_t seed = 1;
    /// Absent: no bridge is attached (stock model).
    std::optional<InitScheme> bridge_init;
    BodyInit body_init = BodyInit::Xavier;
    bool freeze_base = false;
    std::size_t log_every = 0;  // 0 = silent

    /// Throws std::invalid_argument unless lr > 0 and exactly one of
    /// steps/epochs is set.
    void validate() const;
    std::string to_text() const;
};

/// Number of optimizer steps for a run over n_pairs.
std::size_t total_steps(const TrainConfig& cfg, std::size_t n_pairs);

struct AdamState {
    std::map<std::string, std::vector<float>> m;
    std::map<std::string, std::vector<float>> v;
    std::uint64_t step = 0;
};

class NonFiniteError : public std::runtime_error {
   public:
    NonFiniteError(const std::string& what, std::uint64_t step) : std::runtime_error(what), step_(step) {}
    std::uint64_t step() const { return step_; }

   private:
    std::uint64_t step_;
};

/// One bias-corrected Adam update of every parameter that requires grad,
/// using its current gradient buffer. Throws NonFiniteError (parameters
/// untouched) when any gradient is NaN or infinite.
void adam_step(std::map<std::string, Tensor<float>>& params, AdamState& state, double lr,
               const AdamSettings& settings);

/// Scales all trainable gradients so their global L2 norm is at most
/// max_norm; returns the norm before scaling.
double clip_grad_norm(std::map<std::string, Tensor<float>>& params, double max_norm);

/// Thrown when a run stops on a non-finite loss or gradient. Carries the
/// state at the failing step so it can be written out for diagnosis.
class TrainingHalted : public std::runtime_error {
   public:
    TrainingHalted(const std::string& what, Checkpoint diagnostic, std::vector<double> losses)
        : std::runtime_error(what), diagnostic_(std::move(diagnostic)), losses_(std::move(losses)) {}
    const Checkpoint& diagnostic() const { return diagnostic_; }
    const std::vector<double>& losses() const { return losses_; }

   private:
    Checkpoint diagnostic_;
    std::vector<double> losses_;
};

struct TrainResult {
    Model<float> model;
    Checkpoint checkpoint;
    std::vector<double> losses;  // one per step, loss before that step's update
};

/// Fresh model for the retrain workflow: body per cfg.body_init, bridge per
/// cfg.bridge_init (stock when absent).
Model<float> retrain_model(ModelConfig config, const TrainConfig& cfg);

/// Base model with the bridge attached per cfg.bridge_init (kept as-is when
/// absent). With freeze_base only bridge matrices train.
Model<float> finetune_model(const Checkpoint& base, const TrainConfig& cfg);

/// Epoch e shuffles with mix_seed(cfg.seed, e).
std::vector<ParallelBatch> epoch_batches(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                         const TrainConfig& cfg, std::size_t epoch);

TrainResult train_run(Model<float> model, const std::vector<SentencePair>& pairs, const Vocab& vocab,
                      const TrainConfig& cfg);

/// "step,loss" with 9 significant digits.
std::string loss_csv(const std::vector<double>& losses);

// ---- experiments -----------------------------------------------------------
//
//   0  stock model retrained from scratch (produces the base checkpoint)
//   1  base + original-connection bridge, fine-tuned
//   2  base fine-tuned directly, no bridge
//   3  base + GCA bridge, fine-tuned
//   4  bridged model (original connection) retrained from scratch

struct ExperimentData {
    Vocab vocab;
    std::vector<SentencePair> train;
    std::vector<SentencePair> eval;
};

struct ExperimentOptions {
    TrainConfig train;
    ModelConfig model;  // used by retrain experiments; vocab_size follows the vocab
    std::size_t eval_batch = 64;
};

struct ExperimentReport {
    int id = 0;
    double evaluate_loss = 0;
    BleuReport bleu;
    std::vector<double> losses;
    Checkpoint checkpoint;
    std::optional<BlockNormMatrix> initial_norms;
    std::optional<BlockNormMatrix> final_norms;
    std::optional<BlockNormMatrix> drift;

    static std::string csv_header() { return "experiment,evaluate_loss,bleu"; }
    std::string csv_row() const;
};

bool experiment_needs_base(int id);
/// Mode and bridge settings of experiment id applied over the given config.
TrainConfig experiment_config(int id, TrainConfig base);

/// Train (fine-tune from base, or retrain) per cfg, then evaluate on
/// data.eval. Fine-tuning uses the base checkpoint's vocabulary.
ExperimentReport run_workflow(const TrainConfig& cfg, const ExperimentData& data, const Checkpoint* base,
                              const ExperimentOptions& options);

/// Throws std::invalid_argument for an unknown id or a missing base.
ExperimentReport run_experiment(int id, const ExperimentData& data, const Checkpoint* base,
                                const ExperimentOptions& options);

}  // namespace encbridge
