#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "gtt/errors.hpp"
#include "gtt/rng.hpp"
#include "gtt/training.hpp"

namespace gtt {

namespace fs = std::filesystem;

SampleSet SampleSet::load(const fs::path& corpus_dir, const std::string& split)
{
    SampleSet set;
    set.samples = load_split(corpus_dir, split);
    const CorpusManifest manifest = CorpusManifest::load(corpus_dir / "manifest.json");
    for (const auto& shard : manifest.shards) {
        if (shard.split == split && shard.records > 0) {
            set.shard_sizes.push_back(shard.records);
        }
    }
    return set;
}

SampleSet SampleSet::from(std::vector<TrainingSample> samples)
{
    SampleSet set;
    if (!samples.empty()) {
        set.shard_sizes.push_back(samples.size());
    }
    set.samples = std::move(samples);
    return set;
}

Batch make_batch(const SampleSet& set, std::span<const std::size_t> indices)
{
    const std::size_t b = indices.size();
    std::vector<float> inputs(b * kContextLen * kSampleChannels);
    std::vector<float> target(b * kTargetLen * kSampleChannels);
    std::vector<std::uint8_t> valid(b * kSampleChannels);
    for (std::size_t i = 0; i < b; ++i) {
        const TrainingSample& s = set.samples.at(indices[i]);
        std::copy(s.context.begin(), s.context.end(), inputs.begin() + i * s.context.size());
        std::copy(s.target.begin(), s.target.end(), target.begin() + i * s.target.size());
        std::copy(s.channel_valid.begin(), s.channel_valid.end(), valid.begin() + i * kSampleChannels);
    }
    return Batch{Tensor<float>({b, kContextLen, kSampleChannels}, std::move(inputs)),
                 Tensor<float>({b, kTargetLen, kSampleChannels}, std::move(target)), std::move(valid)};
}

std::vector<std::size_t> epoch_order(const SampleSet& set, std::uint64_t seed, std::size_t epoch)
{
    std::vector<std::size_t> sizes = set.shard_sizes;
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != set.size()) {
        sizes.assign(1, set.size());
    }
    std::vector<std::size_t> offsets(sizes.size());
    std::exclusive_scan(sizes.begin(), sizes.end(), offsets.begin(), std::size_t{0});

    std::mt19937_64 rng(indexed_seed(seed, epoch));
    std::vector<std::size_t> shard_order(sizes.size());
    std::iota(shard_order.begin(), shard_order.end(), std::size_t{0});
    std::shuffle(shard_order.begin(), shard_order.end(), rng);

    std::vector<std::size_t> order;
    order.reserve(set.size());
    for (std::size_t s : shard_order) {
        const auto first = order.size();
        for (std::size_t i = 0; i < sizes[s]; ++i) {
            order.push_back(offsets[s] + i);
        }
        std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(first), order.end(), rng);
    }
    return order;
}

namespace {

void check_compatible(const SampleSet& set, const ModelConfig& model)
{
    if (model.context_len != kContextLen || model.max_channels != kSampleChannels ||
        model.patch_size != kTargetLen) {
        throw ConfigError("model context " + std::to_string(model.context_len) + " / channels " +
                          std::to_string(model.max_channels) + " / patch " + std::to_string(model.patch_size) +
                          " does not match the corpus layout (1024 / 32 / 64)");
    }
    for (const auto& s : set.samples) {
        if (s.context.size() != kContextLen * kSampleChannels || s.target.size() != kTargetLen * kSampleChannels) {
            throw DataError("sample with unexpected size in training set");
        }
    }
}

// Sum of |error| and count of valid entries, so batches pool exactly.
std::pair<double, double> batch_abs_error(const ModelParams<float>& params, const ModelConfig& config,
                                          const Batch& batch)
{
    Tape<float> tape(false);
    const auto out = forward(tape, batch.inputs, kSampleChannels, params, config);
    const auto pred = out.all.values();
    const auto target = batch.target.values();
    double sum = 0.0;
    double count = 0.0;
    const std::size_t b = batch.valid.size() / kSampleChannels;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < kTargetLen; ++t) {
            for (std::size_t c = 0; c < kSampleChannels; ++c) {
                if (!batch.valid[i * kSampleChannels + c]) {
                    continue;
                }
                const std::size_t k = (i * kTargetLen + t) * kSampleChannels + c;
                sum += std::fabs(static_cast<double>(pred[k]) - static_cast<double>(target[k]));
                count += 1.0;
            }
        }
    }
    return {sum, count};
}

} // namespace

double evaluate_loss(const ModelParams<float>& params, const ModelConfig& config, const SampleSet& set,
                     std::size_t batch_size)
{
    if (set.size() == 0) {
        throw DataError("evaluate_loss on an empty sample set");
    }
    batch_size = std::max<std::size_t>(batch_size, 1);
    double sum = 0.0;
    double count = 0.0;
    std::vector<std::size_t> indices;
    for (std::size_t begin = 0; begin < set.size(); begin += batch_size) {
        indices.resize(std::min(batch_size, set.size() - begin));
        std::iota(indices.begin(), indices.end(), begin);
        const auto [s, n] = batch_abs_error(params, config, make_batch(set, indices));
        sum += s;
        count += n;
    }
    return count > 0 ? sum / count : 0.0;
}

namespace {

bool is_head(const std::string& name)
{
    return name.rfind("head.", 0) == 0;
}

std::size_t steps_per_epoch(const SampleSet& set, std::size_t batch)
{
    return (set.size() + batch - 1) / batch;
}

std::size_t cosine_horizon(const TrainConfig& c, const SampleSet& set)
{
    return c.total_steps ? c.total_steps : c.max_epochs * steps_per_epoch(set, c.batch_size);
}

class RunLog {
public:
    explicit RunLog(const std::optional<fs::path>& dir, bool append)
    {
        if (dir) {
            fs::create_directories(*dir);
            out_.open(*dir / "train_log.jsonl", append ? std::ios::app : std::ios::trunc);
            if (!out_) {
                throw DataError("cannot write " + (*dir / "train_log.jsonl").string());
            }
        }
    }

    void step(const StepRecord& r)
    {
        if (out_.is_open()) {
            out_ << nlohmann::json{{"type", "step"},           {"step", r.step},
                                   {"epoch", r.epoch},         {"lr", r.lr},
                                   {"loss", r.loss},           {"grad_norm", r.grad_norm},
                                   {"clipped_norm", r.clipped_norm}}
                        .dump()
                 << '\n';
        }
    }

    void epoch(std::size_t epoch, std::size_t step, std::optional<double> val, const EarlyStopper& stopper)
    {
        if (out_.is_open()) {
            nlohmann::json j{{"type", "epoch"}, {"epoch", epoch}, {"step", step}};
            j["val_loss"] = val ? nlohmann::json(*val) : nlohmann::json(nullptr);
            j["consecutive_increases"] = stopper.consecutive_increases();
            j["best_epoch"] = stopper.best_epoch();
            out_ << j.dump() << '\n';
            out_.flush();
        }
    }

private:
    std::ofstream out_;
};

// Shared by pretraining, resumption and fine-tuning. `state` carries the
// live parameters and the position in the schedule.
TrainResult run(Checkpoint state, std::optional<Checkpoint> best, const SampleSet& train_set,
                const SampleSet& val_set, const TrainOptions& options, bool fresh)
{
    const TrainConfig& cfg = state.train;
    const bool finetune = state.kind == "finetune";
    cfg.validate();
    state.model.validate();
    if (train_set.size() == 0) {
        throw DataError("training split is empty");
    }
    check_compatible(train_set, state.model);
    check_compatible(val_set, state.model);

    const std::size_t per_epoch = steps_per_epoch(train_set, cfg.batch_size);
    const std::size_t horizon = cosine_horizon(cfg, train_set);
    if (!finetune && horizon <= cfg.warmup_steps) {
        throw ConfigError("cosine horizon of " + std::to_string(horizon) + " steps does not exceed warmup_steps " +
                          std::to_string(cfg.warmup_steps));
    }

    auto named = state.params.named();
    for (auto& p : named) {
        p.tensor.set_requires_grad(!finetune || is_head(p.name));
    }
    if (state.optimizer.m.empty()) {
        state.optimizer.init(named);
    }
    const AdamWOptions adam{cfg.beta1, cfg.beta2, cfg.adam_eps, finetune ? 0.0 : cfg.weight_decay};

    RunLog log(options.out_dir, !fresh);
    auto write = [&](const Checkpoint& c, const char* file) {
        if (options.out_dir) {
            save_checkpoint(c, *options.out_dir / file);
        }
    };
    auto snapshot = [&] {
        Checkpoint c = state.clone();
        c.params.set_requires_grad(false);
        return c;
    };

    TrainResult result;
    bool stop = false;
    while (!stop && state.epoch < cfg.max_epochs) {
        const auto order = epoch_order(train_set, state.shuffle_seed, state.epoch);
        while (state.batch_in_epoch < per_epoch) {
            if (cfg.max_steps && state.step >= cfg.max_steps) {
                stop = true;
                break;
            }
            const std::size_t begin = state.batch_in_epoch * cfg.batch_size;
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            const Batch batch = make_batch(train_set, std::span(order).subspan(begin, end - begin));

            state.params.zero_grad();
            Tape<float> tape;
            const auto out = forward(tape, batch.inputs, kSampleChannels, state.params, state.model);
            const auto loss = masked_mae_loss(tape, out.all, batch.target, batch.valid);
            tape.backward(loss);
            if (!loss.all_finite()) {
                throw NonFiniteError("non-finite training loss at step " + std::to_string(state.step + 1));
            }

            StepRecord rec;
            rec.epoch = state.epoch + 1;
            rec.loss = loss.item();
            rec.grad_norm = global_grad_norm(named);
            // Fine-tuning runs unclipped; the infinite bound still rejects non-finite gradients.
            const double clip = finetune ? std::numeric_limits<double>::infinity() : cfg.clip_norm;
            rec.clipped_norm = rec.grad_norm * clip_gradients(named, clip);
            rec.lr = finetune ? cfg.initial_lr : lr_schedule(state.step, cfg.initial_lr, cfg.warmup_steps, horizon);
            adamw_step(named, state.optimizer, rec.lr, adam);
            ++state.step;
            ++state.batch_in_epoch;
            rec.step = state.step;

            log.step(rec);
            result.steps.push_back(rec);
            if (options.on_step) {
                options.on_step(rec);
            }
            if (cfg.checkpoint_every && state.step % cfg.checkpoint_every == 0) {
                write(snapshot(), "last.ckpt");
            }
            if (options.interrupt && options.interrupt(rec)) {
                result.interrupted = true;
                stop = true;
                break;
            }
        }
        if (stop) {
            break;
        }

        ++state.epoch;
        state.batch_in_epoch = 0;
        std::optional<double> val;
        if (val_set.size() > 0) {
            val = evaluate_loss(state.params, state.model, val_set, cfg.eval_batch_size);
            state.val_history.push_back(*val);
            state.stopper.update(*val);
            if (state.stopper.last_was_best()) {
                best = snapshot();
                write(*best, "best.ckpt");
            }
            spdlog::info("epoch {} step {} val loss {:.6f} (best {:.6f} at epoch {})", state.epoch, state.step, *val,
                         state.stopper.best(), state.stopper.best_epoch());
        } else {
            spdlog::info("epoch {} step {} (no validation data)", state.epoch, state.step);
        }
        log.epoch(state.epoch, state.step, val, state.stopper);
        write(snapshot(), "last.ckpt");
        if (options.on_epoch) {
            options.on_epoch(state.epoch, val.value_or(std::nan("")));
        }
        if (state.stopper.should_stop()) {
            spdlog::info("early stop after epoch {}: validation loss rose {} epochs in a row", state.epoch,
                         state.stopper.consecutive_increases());
            result.early_stopped = true;
            stop = true;
        }
    }

    result.last = snapshot();
    write(result.last, "last.ckpt");
    if (best) {
        result.best = std::move(*best);
    } else {
        result.best = result.last.clone();
        write(result.best, "best.ckpt");
    }
    return result;
}

} // namespace

TrainResult train(const SampleSet& train_set, const SampleSet& val_set, const ModelConfig& model,
                  const TrainConfig& config, const TrainOptions& options)
{
    Checkpoint state;
    state.kind = "pretrain";
    state.model = model;
    state.train = config;
    state.model.validate();
    state.params = init_params<float>(model, substream_seed(config.seed, "init"));
    state.stopper = EarlyStopper(config.early_stop_patience);
    state.shuffle_seed = substream_seed(config.seed, "shuffle");
    return run(std::move(state), std::nullopt, train_set, val_set, options, true);
}

TrainResult resume(const Checkpoint& from, const std::optional<Checkpoint>& best, const SampleSet& train_set,
                   const SampleSet& val_set, const TrainOptions& options)
{
    return run(from.clone(), best ? std::optional<Checkpoint>(best->clone()) : std::nullopt, train_set, val_set,
               options, false);
}

TrainResult fine_tune(const Checkpoint& base, const SampleSet& train_set, const SampleSet& val_set,
                      const FineTuneConfig& config, const TrainOptions& options)
{
    if (config.lr <= 0.0 || config.batch_size == 0) {
        throw ConfigError("fine-tune lr and batch_size must be positive");
    }
    Checkpoint state;
    state.kind = "finetune";
    state.model = base.model;
    state.params = base.params.clone();
    state.train = base.train;
    state.train.initial_lr = config.lr;
    state.train.weight_decay = 0.0;
    state.train.warmup_steps = 0;
    state.train.total_steps = 0;
    state.train.max_steps = 0;
    state.train.batch_size = config.batch_size;
    state.train.max_epochs = config.max_epochs;
    state.train.early_stop_patience = config.early_stop_patience;
    state.train.seed = config.seed;
    state.train.checkpoint_every = 0;
    state.stopper = EarlyStopper(config.early_stop_patience);
    state.shuffle_seed = substream_seed(config.seed, "finetune-shuffle");
    if (config.max_epochs == 0) {
        TrainResult result;
        result.last = state.clone();
        result.best = state.clone();
        return result;
    }
    return run(std::move(state), std::nullopt, train_set, val_set, options, true);
}

} // namespace gtt
