#pragma once

// AdamW pretraining with warmup + cosine decay, gradient clipping and
// validation-based early stopping; head-only fine-tuning; checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtt/datapipe.hpp"
#include "gtt/model.hpp"

namespace gtt {

struct TrainConfig {
    double initial_lr = 1e-3;
    double weight_decay = 0.004;
    double clip_norm = 1.0;
    std::size_t warmup_steps = 2048;
    std::size_t batch_size = 16;
    /// Cosine horizon. 0 means 100 epochs over the training split.
    std::size_t total_steps = 0;
    /// Hard stop after this many optimizer steps (0: none).
    std::size_t max_steps = 0;
    std::size_t max_epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 3;
    std::size_t eval_batch_size = 32;
    /// Also write last.ckpt every this many steps (0: only at epoch ends).
    std::size_t checkpoint_every = 0;

    /// Learning rate and batch size of a preset ("large" 3e-4/1024, "small"
    /// 6e-4/2048, "tiny" 1e-3/4096; "micro" 1e-3/16).
    static TrainConfig for_preset(const std::string& preset);
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Both reject unknown keys; missing keys keep the values of `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Warmup: initial_lr * (step + 1) / warmup; then cosine from initial_lr down to 0 at total_steps.
double lr_schedule(std::size_t step, double initial_lr, std::size_t warmup_steps, std::size_t total_steps);

/// L2 norm over the gradients of all parameters that require grad.
double global_grad_norm(const std::vector<NamedParam<float>>& params);

/// Scales all gradients by min(1, clip_norm / norm) and returns that scale.
/// Throws NonFiniteError (naming the tensor) on a non-finite gradient.
double clip_gradients(const std::vector<NamedParam<float>>& params, double clip_norm);

struct OptimizerState {
    std::size_t step = 0;
    std::vector<std::vector<float>> m; ///< first moments, in params order
    std::vector<std::vector<float>> v; ///< second moments

    void init(const std::vector<NamedParam<float>>& params);
};

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Bias-corrected Adam update plus decoupled decay p -= lr * wd * p on
/// parameters flagged `decay`. Parameters without grad are left untouched.
void adamw_step(const std::vector<NamedParam<float>>& params, OptimizerState& state, double lr,
                const AdamWOptions& options);

/// Stops once the validation loss has risen `patience` epochs in a row
/// (each epoch compared with the one before it).
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience = 3) : patience_(patience) {}

    /// Records one epoch; returns true when training should stop.
    bool update(double val_loss);
    bool should_stop() const { return patience_ > 0 && increases_ >= patience_; }
    bool last_was_best() const { return last_was_best_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; } ///< 1-based; 0 before any epoch
    std::size_t epochs() const { return epochs_; }
    std::size_t consecutive_increases() const { return increases_; }

    nlohmann::json to_json() const;
    static EarlyStopper from_json(const nlohmann::json& j);

private:
    std::size_t patience_;
    std::size_t epochs_ = 0;
    std::size_t increases_ = 0;
    std::size_t best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
    double previous_ = std::numeric_limits<double>::infinity();
    bool last_was_best_ = false;
};

struct Checkpoint {
    std::string kind = "pretrain"; ///< "pretrain" or "finetune"
    ModelConfig model;
    TrainConfig train;
    ModelParams<float> params;
    OptimizerState optimizer;
    std::size_t step = 0;
    std::size_t epoch = 0;          ///< completed epochs
    std::size_t batch_in_epoch = 0; ///< batches of the current epoch already consumed
    EarlyStopper stopper;
    std::vector<double> val_history;
    std::uint64_t shuffle_seed = 0; ///< epoch orders derive from this and the epoch index

    Checkpoint clone() const;
};

inline constexpr std::uint32_t kCheckpointMagic = 0x47545443;
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on missing, truncated, corrupt or incompatible files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Samples plus their shard boundaries (for shard-level shuffling).
struct SampleSet {
    std::vector<TrainingSample> samples;
    std::vector<std::size_t> shard_sizes;

    static SampleSet load(const std::filesystem::path& corpus_dir, const std::string& split);
    static SampleSet from(std::vector<TrainingSample> samples);
    std::size_t size() const { return samples.size(); }
};

struct Batch {
    Tensor<float> inputs; ///< [B x 1024 x 32]
    Tensor<float> target; ///< [B x 64 x 32]
    std::vector<std::uint8_t> valid;
};

Batch make_batch(const SampleSet& set, std::span<const std::size_t> indices);

/// Shard order shuffled, then samples within each shard, from `seed`.
std::vector<std::size_t> epoch_order(const SampleSet& set, std::uint64_t seed, std::size_t epoch);

/// Pooled masked MAE of the model over a sample set (no gradients).
double evaluate_loss(const ModelParams<float>& params, const ModelConfig& config, const SampleSet& set,
                     std::size_t batch_size);

struct StepRecord {
    std::size_t step = 0; ///< 1-based count of optimizer steps taken
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;    ///< before clipping
    double clipped_norm = 0.0; ///< after clipping
};

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir; ///< last.ckpt, best.ckpt, train_log.jsonl
    std::function<void(const StepRecord&)> on_step;
    std::function<void(std::size_t epoch, double val_loss)> on_epoch;
    /// Return true to stop after the current step (simulated interruption).
    std::function<bool(const StepRecord&)> interrupt;
};

struct TrainResult {
    Checkpoint best; ///< lowest validation loss (the final state when there is no validation data)
    Checkpoint last;
    std::vector<StepRecord> steps;
    bool early_stopped = false;
    bool interrupted = false;
};

/// Starts from freshly initialized parameters (init stream of train.seed).
TrainResult train(const SampleSet& train_set, const SampleSet& val_set, const ModelConfig& model,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Continues a run from a checkpoint written by train().
TrainResult resume(const Checkpoint& from, const std::optional<Checkpoint>& best, const SampleSet& train_set,
                   const SampleSet& val_set, const TrainOptions& options = {});

struct FineTuneConfig {
    double lr = 1e-3;
    std::size_t max_epochs = 10;
    std::size_t batch_size = 16;
    std::size_t early_stop_patience = 3;
    std::uint64_t seed = 0;
};

/// Adam (no decay, constant lr) on head.weight / head.bias only.
TrainResult fine_tune(const Checkpoint& base, const SampleSet& train_set, const SampleSet& val_set,
                      const FineTuneConfig& config, const TrainOptions& options = {});

} // namespace gtt
