#pragma once

#include "cect/dataset.hpp"
#include "cect/errors.hpp"
#include "cect/loss.hpp"
#include "cect/metrics.hpp"
#include "cect/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cect {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 8;  // 32 at full scale
    int epochs = 300;    // 800 at full scale
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;
    bool augment = true;
    double max_rotation_deg = 25.0;
    int checkpoint_every = 50; // epochs; 0 disables periodic checkpoints
    LossConfig loss;
    ModelConfig model;

    void validate() const;
};

/// Adam with bias correction over a fixed parameter list. Rejects a step
/// without touching any state when a gradient is non-finite.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps);

    /// Applies one update from the gradients currently on the parameters.
    /// Returns false (and changes nothing) if any gradient is non-finite.
    bool step();

    int64_t steps_taken() const { return t_; }

    /// Moment snapshot for checkpoints, aligned with the parameter order.
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;
    void restore(const std::vector<std::pair<std::string, Tensor>>& state, int64_t t);

private:
    std::vector<Tensor> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice = 0.0;
    double rmse = 0.0; // weighted components, averaged over batches
    double bce = 0.0;
    double l2 = 0.0;
    int rejected_steps = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    void save_csv(const std::string& path) const;
};

/// Thrown when training hits a non-finite loss; the last checkpoint on disk
/// survives.
struct TrainingError : Error {
    int epoch;
    int batch;
    TrainingError(int epoch_, int batch_, const std::string& what)
        : Error(what), epoch(epoch_), batch(batch_) {}
};

struct TrainOutcome {
    TrainHistory history;
};

/// Runs the full loop: seeded shuffling, per-sample rotation augmentation,
/// batched forward/backward, Adam, per-epoch validation loss and Dice, and
/// periodic checkpoints under checkpoint_dir (empty string disables). With
/// start_epoch > 0 the model/optimizer are expected to already hold the
/// checkpointed state and the loop continues at start_epoch + 1.
TrainOutcome train(Model& model, AdamOptimizer& opt,
                   const std::vector<VolumeSample>& train_set,
                   const std::vector<VolumeSample>& val_set, const TrainConfig& cfg,
                   const std::string& checkpoint_dir, int start_epoch = 0,
                   TrainHistory resume_history = {});

struct EvalOptions {
    int bins = 32;
    double peak_hu = 4095.0;
    double v_th_hu = 300.0;
};

/// Inference over a test set: slice metrics vs the reference CECT inside the
/// heart mask, plus volume-level agreement statistics.
EvalReport evaluate(Model& model, const std::vector<VolumeSample>& test_set,
                    const EvalOptions& opts);

/// Same report for an arbitrary slice predictor, e.g. a baseline that echoes
/// the reference.
EvalReport evaluate(const std::function<Slice(const PhantomPair&)>& predict,
                    const std::vector<VolumeSample>& test_set, const EvalOptions& opts);

/// Predicted CECT for one pair (inference mode), back in HU.
Slice predict_slice(Model& model, const PhantomPair& pair);

void save_checkpoint(const std::string& dir, int epoch, const Model& model,
                     const AdamOptimizer& opt);

struct CheckpointInfo {
    int epoch = 0;
    int64_t adam_t = 0;
};

CheckpointInfo load_checkpoint(const std::string& dir, int epoch, Model& model,
                               AdamOptimizer& opt);

} // namespace cect
