#include "gtt/experiments.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gtt/errors.hpp"
#include "gtt/rng.hpp"

namespace gtt {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what)
{
    if (!j.is_object()) {
        throw ConfigError(std::string(what) + " config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown " + std::string(what) + " key '" + key + "'");
        }
    }
}

nlohmann::json parts_json(const std::vector<SyntheticSpec>& parts)
{
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : parts) {
        a.push_back(p.to_json());
    }
    return a;
}

std::vector<SyntheticSpec> parts_from_json(const nlohmann::json& j)
{
    std::vector<SyntheticSpec> parts;
    for (const auto& p : j) {
        parts.push_back(SyntheticSpec::from_json(p));
    }
    return parts;
}

// Single sines and two-term mixtures from two period bands with a gap
// between them; many short series rather than a few long ones.
std::vector<SyntheticSpec> banded_sines(std::size_t series_per_part)
{
    std::vector<SyntheticSpec> parts;
    for (std::size_t components : {1, 2}) {
        for (std::array<double, 2> band : {std::array{12.0, 44.0}, std::array{52.0, 240.0}}) {
            SyntheticSpec spec;
            spec.generator = "sine-mixture";
            spec.n_series = series_per_part;
            spec.length = 2048;
            spec.components = components;
            spec.period = band;
            spec.seed = parts.size() + 1;
            parts.push_back(spec);
        }
    }
    return parts;
}

TrainConfig short_run(std::size_t steps)
{
    TrainConfig t = TrainConfig::for_preset("micro");
    t.batch_size = 16;
    t.initial_lr = 1e-2;
    t.warmup_steps = 100;
    t.total_steps = steps;
    t.max_steps = steps;
    t.max_epochs = 100000;
    t.early_stop_patience = 0;
    return t;
}

// Spreads `limit` picks evenly over the set, keeping every series represented.
SampleSet thin(SampleSet set, std::size_t limit)
{
    if (limit == 0 || set.size() <= limit) {
        return set;
    }
    std::vector<TrainingSample> kept;
    kept.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i) {
        kept.push_back(std::move(set.samples[i * set.size() / limit]));
    }
    return SampleSet::from(std::move(kept));
}

// Trains in chunks (resuming is exact) and measures the train-set MAE after
// each chunk; stops early once `target` is reached.
struct ChunkedRun {
    Checkpoint last;
    std::vector<StepRecord> steps;
    std::vector<std::pair<std::size_t, double>> curve;
    double train_mae = 0.0;
};

ChunkedRun train_in_chunks(const SampleSet& train_set, const ModelConfig& model, const TrainConfig& config,
                           std::size_t chunk, double target)
{
    ChunkedRun run;
    const SampleSet no_val;
    std::size_t goal = std::min(chunk, config.max_steps);
    TrainConfig first = config;
    first.max_steps = goal;
    TrainResult r = train(train_set, no_val, model, first);
    while (true) {
        run.steps.insert(run.steps.end(), r.steps.begin(), r.steps.end());
        run.last = std::move(r.last);
        run.train_mae = evaluate_loss(run.last.params, model, train_set, 32);
        run.curve.emplace_back(run.last.step, run.train_mae);
        spdlog::info("{}: step {} train MAE {:.4f}", model.name, run.last.step, run.train_mae);
        if (run.train_mae < target || run.last.step >= config.max_steps) {
            break;
        }
        goal = std::min(goal + chunk, config.max_steps);
        Checkpoint next = run.last.clone();
        next.train.max_steps = goal;
        r = resume(next, std::nullopt, train_set, no_val);
    }
    return run;
}

} // namespace

SyntheticCorpus build_synthetic_corpus(const std::vector<SyntheticSpec>& parts, const CorpusConfig& corpus,
                                       std::uint64_t seed, std::size_t train_limit, const fs::path& dir)
{
    std::vector<RawSeries> series;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        for (auto& s : generate_synthetic(parts[p])) {
            s.series.id = fmt::format("part{}-{}", p, s.series.id);
            series.push_back(std::move(s.series));
        }
    }
    SyntheticCorpus out;
    out.manifest = build_corpus(series, corpus, seed, dir);
    out.train = thin(SampleSet::load(dir, "train"), train_limit);
    out.val = SampleSet::load(dir, "val");
    return out;
}

RawSeries sine_series(std::size_t length, double period, double amplitude, double phase, const std::string& id)
{
    RawSeries s;
    s.id = id;
    s.length = length;
    s.channels = 1;
    s.values.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
        s.values[t] = amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
    }
    s.roles = {ChannelRole::target};
    s.names = {"value"};
    return s;
}

TrainabilityConfig TrainabilityConfig::defaults()
{
    TrainabilityConfig c;
    c.model = ModelConfig::preset("micro");
    c.train = short_run(2000);
    c.corpus_parts = banded_sines(16);
    c.corpus.cap = 10;
    c.eval.context_len = 1024;
    c.eval.horizons = {48, 96};
    c.eval.split_fractions = {0.0, 0.0, 1.0};
    return c;
}

TrainabilityConfig TrainabilityConfig::from_json(const nlohmann::json& j, TrainabilityConfig base)
{
    reject_unknown(j,
                   {"model", "train", "corpus_parts", "corpus", "samples", "eval_every", "target_mae", "unseen_period",
                    "unseen_windows", "eval", "seed"},
                   "trainability");
    try {
        if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
        if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
        if (j.contains("corpus_parts")) base.corpus_parts = parts_from_json(j.at("corpus_parts"));
        if (j.contains("corpus")) base.corpus = CorpusConfig::from_json(j.at("corpus"), base.corpus);
        if (j.contains("samples")) base.samples = j.at("samples");
        if (j.contains("eval_every")) base.eval_every = j.at("eval_every");
        if (j.contains("target_mae")) base.target_mae = j.at("target_mae");
        if (j.contains("unseen_period")) base.unseen_period = j.at("unseen_period");
        if (j.contains("unseen_windows")) base.unseen_windows = j.at("unseen_windows");
        if (j.contains("eval")) base.eval = EvalSpec::from_json(j.at("eval"), base.eval);
        if (j.contains("seed")) base.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad trainability config: ") + e.what());
    }
    return base;
}

nlohmann::json TrainabilityConfig::to_json() const
{
    return {{"model", gtt::to_json(model)},
            {"train", gtt::to_json(train)},
            {"corpus_parts", parts_json(corpus_parts)},
            {"corpus", corpus.to_json()},
            {"samples", samples},
            {"eval_every", eval_every},
            {"target_mae", target_mae},
            {"unseen_period", unseen_period},
            {"unseen_windows", unseen_windows},
            {"eval", eval.to_json()},
            {"seed", seed}};
}

TrainabilityResult run_trainability(const TrainabilityConfig& config, const fs::path& work_dir)
{
    const auto start = std::chrono::steady_clock::now();
    const auto data =
        build_synthetic_corpus(config.corpus_parts, config.corpus, substream_seed(config.seed, "corpus"),
                               config.samples, work_dir / "corpus");
    if (data.train.size() < config.samples) {
        spdlog::warn("corpus yielded {} training samples, fewer than the requested {}", data.train.size(),
                     config.samples);
    }
    TrainConfig train_cfg = config.train;
    train_cfg.seed = config.seed;
    const auto run = train_in_chunks(data.train, config.model, train_cfg, config.eval_every, config.target_mae);

    TrainabilityResult result;
    result.steps = run.last.step;
    result.train_mae = run.train_mae;
    result.reached = run.train_mae < config.target_mae;
    result.curve = run.curve;
    result.step_log = run.steps;

    EvalSpec eval = config.eval;
    const std::size_t h_max = eval.max_horizon();
    const std::size_t length = eval.context_len + h_max + config.unseen_windows - 1;
    eval.split_lengths = std::array<std::size_t, 3>{0, 0, length};
    const RawSeries unseen = sine_series(length, config.unseen_period, 1.0, 0.3, "unseen-sine");
    result.model_table = rolling_eval(run.last.params, config.model, unseen, eval);
    result.naive_table = naive_last_value(unseen, eval);
    result.improvement = 1.0 - result.model_table.mean.mae / result.naive_table.mean.mae;
    save_checkpoint(run.last, work_dir / "trainability.ckpt");
    result.seconds = seconds_since(start);
    return result;
}

ScalingProbeConfig ScalingProbeConfig::defaults()
{
    ScalingProbeConfig c;
    c.base = ModelConfig::preset("micro");
    c.train = short_run(1500);
    // The 2x-wider model diverges above ~4e-3; both widths share one rate.
    c.train.initial_lr = 3e-3;
    c.corpus_parts = banded_sines(64);
    c.corpus.cap = 4;
    c.samples = 1024;
    c.eval.context_len = 1024;
    c.eval.horizons = {64, 128};
    c.eval.split_fractions = {0.0, 0.0, 1.0};
    return c;
}

ScalingProbeConfig ScalingProbeConfig::from_json(const nlohmann::json& j, ScalingProbeConfig base)
{
    reject_unknown(j,
                   {"base", "width_factor", "scale_lr", "train", "corpus_parts", "corpus", "samples", "heldout_series", "heldout_windows",
                    "eval", "seed"},
                   "scaling probe");
    try {
        if (j.contains("base")) base.base = model_config_from_json(j.at("base"), base.base);
        if (j.contains("width_factor")) base.width_factor = j.at("width_factor");
        if (j.contains("scale_lr")) base.scale_lr = j.at("scale_lr");
        if (j.contains("train")) base.train = train_config_from_json(j.at("train"), base.train);
        if (j.contains("corpus_parts")) base.corpus_parts = parts_from_json(j.at("corpus_parts"));
        if (j.contains("corpus")) base.corpus = CorpusConfig::from_json(j.at("corpus"), base.corpus);
        if (j.contains("samples")) base.samples = j.at("samples");
        if (j.contains("heldout_series")) base.heldout_series = j.at("heldout_series");
        if (j.contains("heldout_windows")) base.heldout_windows = j.at("heldout_windows");
        if (j.contains("eval")) base.eval = EvalSpec::from_json(j.at("eval"), base.eval);
        if (j.contains("seed")) base.seed = j.at("seed");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad scaling probe config: ") + e.what());
    }
    if (base.width_factor == 0) {
        throw ConfigError("width_factor must be positive");
    }
    return base;
}

nlohmann::json ScalingProbeConfig::to_json() const
{
    return {{"base", gtt::to_json(base)},
            {"width_factor", width_factor},
            {"scale_lr", scale_lr},
            {"train", gtt::to_json(train)},
            {"corpus_parts", parts_json(corpus_parts)},
            {"corpus", corpus.to_json()},
            {"samples", samples},
            {"heldout_series", heldout_series},
            {"heldout_windows", heldout_windows},
            {"eval", eval.to_json()},
            {"seed", seed}};
}

std::string ScalingProbeResult::to_text() const
{
    std::string out = fmt::format("{:<14} {:>10} {:>8} {:>7} {:>10} {:>10} {:>12} {:>9}\n", "model", "params", "lr",
                                  "steps", "train_MAE", "val_MAE", "heldout_MAE", "seconds");
    for (const auto& r : rows) {
        const std::string val = r.val_mae ? fmt::format("{:.4f}", *r.val_mae) : "-";
        out += fmt::format("{:<14} {:>10} {:>8.2g} {:>7} {:>10.4f} {:>10} {:>12.4f} {:>9.1f}\n", r.name, r.params, r.lr,
                           r.steps, r.train_mae, val, r.heldout_mae, r.seconds);
    }
    return out;
}

std::string ScalingProbeResult::to_csv() const
{
    std::string out = "model,embed_dim,mlp_dim,params,lr,steps,train_mae,val_mae,heldout_mae,seconds\n";
    for (const auto& r : rows) {
        const std::string val = r.val_mae ? fmt::format("{:.8g}", *r.val_mae) : "";
        out += fmt::format("{},{},{},{},{:g},{},{:.8g},{},{:.8g},{:.3f}\n", r.name, r.model.embed_dim, r.model.mlp_dim,
                           r.params, r.lr, r.steps, r.train_mae, val, r.heldout_mae, r.seconds);
    }
    return out;
}

ScalingProbeResult run_scaling_probe(const ScalingProbeConfig& config, const fs::path& out_dir)
{
    fs::create_directories(out_dir);
    const auto data = build_synthetic_corpus(config.corpus_parts, config.corpus, substream_seed(config.seed, "corpus"),
                                             config.samples, out_dir / "corpus");

    // Held-out series: the same generators under fresh seeds, scored by rolling evaluation.
    std::vector<RawSeries> heldout;
    for (std::size_t p = 0; p < config.corpus_parts.size(); ++p) {
        SyntheticSpec spec = config.corpus_parts[p];
        spec.n_series = config.heldout_series;
        spec.length = config.eval.context_len + config.eval.max_horizon() + config.heldout_windows - 1;
        spec.seed = indexed_seed(substream_seed(config.seed, "heldout"), p);
        for (auto& s : generate_synthetic(spec)) {
            heldout.push_back(std::move(s.series));
        }
    }

    ModelConfig wide = config.base;
    wide.name = fmt::format("{}-x{}", config.base.name, config.width_factor);
    wide.embed_dim *= config.width_factor;
    wide.mlp_dim *= config.width_factor;
    wide.validate();

    ScalingProbeResult result;
    for (const ModelConfig& model : {config.base, wide}) {
        const auto start = std::chrono::steady_clock::now();
        TrainConfig train_cfg = config.train;
        train_cfg.seed = config.seed;
        if (config.scale_lr && !(model == config.base)) {
            train_cfg.initial_lr /= static_cast<double>(config.width_factor);
        }
        const auto run = train_in_chunks(data.train, model, train_cfg, train_cfg.max_steps, 0.0);

        ProbeRow row;
        row.name = model.name;
        row.model = model;
        row.params = param_count(model);
        row.lr = train_cfg.initial_lr;
        row.steps = run.last.step;
        row.train_mae = run.train_mae;
        if (data.val.size() > 0) {
            row.val_mae = evaluate_loss(run.last.params, model, data.val, 32);
        }
        double mae_sum = 0.0;
        for (const auto& s : heldout) {
            mae_sum += rolling_eval(run.last.params, model, s, config.eval).mean.mae;
        }
        row.heldout_mae = mae_sum / static_cast<double>(heldout.size());
        row.seconds = seconds_since(start);
        save_checkpoint(run.last, out_dir / (model.name + ".ckpt"));
        spdlog::info("{}: train {:.4f} heldout {:.4f} ({:.0f} s)", row.name, row.train_mae, row.heldout_mae,
                     row.seconds);
        result.rows.push_back(row);
    }
    return result;
}

} // namespace gtt
