// gtt: corpus preparation, training, fine-tuning, forecasting, evaluation and
// synthetic data from one binary.

#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gtt/errors.hpp"
#include "gtt/evaluation.hpp"
#include "gtt/experiments.hpp"
#include "gtt/inference.hpp"
#include "gtt/kernels.hpp"
#include "gtt/rng.hpp"
#include "gtt/synthetic.hpp"
#include "gtt/tensor.hpp"
#include "gtt/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace gtt;
using gtt::cli::RunConfig;

namespace {

struct Flags {
    std::string config_path;
    cli::Overrides overrides;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out;
    std::string preset;
    std::size_t horizon = 0;
    std::size_t context_len = 0;
    std::string protocol;
    std::vector<std::string> inputs;
    std::string roles;
    std::string corpus;
    std::string checkpoint;
    bool resume = false;
    std::size_t stop_after = 0;
    bool baselines = false;
    std::size_t season = 0;
    bool dump_windows = false;
    std::string ckpt_a;
    std::string ckpt_b;
    std::string expect_equal;
};

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("gtt");
    logger->set_pattern("[%H:%M:%S] [%l] %v");
    spdlog::set_default_logger(logger);
    const char* env = std::getenv("GTT_LOG");
    const std::string level = env ? env : "info";
    if (level == "error") {
        spdlog::set_level(spdlog::level::err);
    } else if (level == "info") {
        spdlog::set_level(spdlog::level::info);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        throw ConfigError("GTT_LOG must be error, info or debug (got '" + level + "')");
    }
}

RunConfig resolve(const Flags& f, CLI::App& app, const std::vector<std::string>& sections)
{
    cli::Overrides o;
    auto given = [&](const char* name) { return app.get_option(name)->count() > 0; };
    if (given("--seed")) o.seed = f.seed;
    if (given("--threads")) o.threads = f.threads;
    if (given("--out")) o.out = f.out;
    if (given("--preset")) o.preset = f.preset;
    if (given("--horizon")) o.horizon = f.horizon;
    if (given("--context-len")) o.context_len = f.context_len;
    for (const auto& p : f.inputs) {
        o.inputs.emplace_back(p);
    }
    if (!f.roles.empty()) o.roles = f.roles;
    if (!f.corpus.empty()) o.corpus = f.corpus;
    if (!f.checkpoint.empty()) o.checkpoint = f.checkpoint;
    if (!f.protocol.empty()) o.protocol = f.protocol;

    const nlohmann::json file = f.config_path.empty() ? nlohmann::json::object() : RunConfig::load_file(f.config_path);
    RunConfig c = RunConfig::resolve(file, o);
    if (c.threads > 0) {
        kernels::set_num_threads(c.threads);
    }
    std::cerr << "effective config: " << c.to_json(sections).dump() << '\n';
    return c;
}

const fs::path& require_corpus(const RunConfig& c)
{
    if (!c.data.corpus) {
        throw ConfigError("no corpus directory (data.corpus or --corpus)");
    }
    return *c.data.corpus;
}

const fs::path& require_checkpoint(const RunConfig& c)
{
    if (!c.checkpoint) {
        throw ConfigError("no checkpoint (checkpoint or --checkpoint)");
    }
    return *c.checkpoint;
}

void require_inputs(const RunConfig& c)
{
    if (c.data.inputs.empty()) {
        throw ConfigError("no input files (data.inputs or --input)");
    }
}

ColumnRoles roles_of(const RunConfig& c)
{
    return c.data.roles ? ColumnRoles::load(*c.data.roles) : ColumnRoles{};
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

int cmd_synth(const RunConfig& c)
{
    fs::create_directories(c.out);
    const auto series = generate_synthetic(c.synth);
    if (series.empty()) {
        spdlog::info("n_series = 0: nothing written");
        return 0;
    }
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& s : series) {
        write_csv(s.series, c.out / (s.series.id + ".csv"));
        truth.push_back(s.truth);
    }
    write_text(c.out / "truth.json", truth.dump(2) + "\n");
    std::cout << fmt::format("wrote {} series of {} rows to {}\n", series.size(), c.synth.length, c.out.string());
    return 0;
}

int cmd_prepare(const RunConfig& c)
{
    require_inputs(c);
    const ColumnRoles roles = roles_of(c);
    std::vector<RawSeries> series;
    for (const auto& path : c.data.inputs) {
        series.push_back(read_csv(path, roles));
    }
    const auto manifest = build_corpus(series, c.corpus, substream_seed(c.seed, "corpus"), c.out);
    std::size_t windows[2] = {0, 0};
    std::size_t discarded[2] = {0, 0};
    for (const auto& s : manifest.series) {
        for (int k = 0; k < 2; ++k) {
            windows[k] += s.windows[k];
            discarded[k] += s.discarded[k];
        }
    }
    std::cout << fmt::format("series: {}\n", manifest.series.size());
    std::cout << fmt::format("train: {} windows, {} samples, {} discarded\n", windows[0], manifest.total("train"),
                             discarded[0]);
    std::cout << fmt::format("val: {} windows, {} samples, {} discarded\n", windows[1], manifest.total("val"),
                             discarded[1]);
    return 0;
}

void print_train_summary(const TrainResult& r)
{
    std::cout << fmt::format("steps: {}\nepochs: {}\n", r.last.step, r.last.epoch);
    if (!r.steps.empty()) {
        std::cout << fmt::format("final loss: {:.6f}\n", r.steps.back().loss);
    }
    if (!r.last.val_history.empty()) {
        std::cout << fmt::format("best epoch: {} (val {:.6f})\n", r.last.stopper.best_epoch(), r.last.stopper.best());
    }
    std::cout << (r.early_stopped ? "stopped early\n" : "completed\n");
}

int cmd_train(const RunConfig& c, bool resume_run, std::size_t stop_after)
{
    const fs::path& corpus = require_corpus(c);
    const SampleSet train_set = SampleSet::load(corpus, "train");
    const SampleSet val_set = SampleSet::load(corpus, "val");
    spdlog::info("corpus: {} train / {} val samples", train_set.size(), val_set.size());
    fs::create_directories(c.out);
    TrainOptions options;
    options.out_dir = c.out;
    if (stop_after > 0) {
        options.interrupt = [stop_after](const StepRecord& s) { return s.step >= stop_after; };
    }
    TrainResult r;
    if (resume_run) {
        const Checkpoint last = load_checkpoint(c.out / "last.ckpt");
        std::optional<Checkpoint> best;
        if (fs::exists(c.out / "best.ckpt")) {
            best = load_checkpoint(c.out / "best.ckpt");
        }
        spdlog::info("resuming from step {} (epoch {})", last.step, last.epoch);
        r = resume(last, best, train_set, val_set, options);
    } else {
        r = train(train_set, val_set, c.model, c.train, options);
    }
    print_train_summary(r);
    if (r.interrupted) {
        std::cout << fmt::format("stopped at step {}; continue with --resume\n", r.last.step);
    }
    return 0;
}

int cmd_finetune(const RunConfig& c)
{
    const Checkpoint base = load_checkpoint(require_checkpoint(c));
    const fs::path& corpus = require_corpus(c);
    const SampleSet train_set = SampleSet::load(corpus, "train");
    const SampleSet val_set = SampleSet::load(corpus, "val");
    fs::create_directories(c.out);
    TrainOptions options;
    options.out_dir = c.out;
    const TrainResult r = fine_tune(base, train_set, val_set, c.finetune, options);
    print_train_summary(r);
    return 0;
}

int cmd_forecast(const RunConfig& c)
{
    require_inputs(c);
    if (c.data.inputs.size() != 1) {
        throw ConfigError("forecast takes exactly one context file");
    }
    const Checkpoint ckpt = load_checkpoint(require_checkpoint(c));
    ForecastRequest request;
    request.context = read_csv(c.data.inputs.front(), roles_of(c));
    request.horizon = c.forecast.horizon;
    ForecastOptions options;
    options.keep_original_stats = c.forecast.keep_original_stats;
    options.batch_size = c.forecast.batch_size;
    const ForecastResult r = forecast(ckpt.params, ckpt.model, request, options);

    fs::create_directories(c.out);
    const bool stamps = !r.timestamps.empty();
    std::string csv = stamps ? "timestamp" : "";
    for (std::size_t o = 0; o < r.targets; ++o) {
        csv += (o > 0 || stamps ? "," : "") + r.names[o];
    }
    csv += '\n';
    for (std::size_t t = 0; t < r.horizon; ++t) {
        if (stamps) {
            csv += format_timestamp(r.timestamps[t]);
        }
        for (std::size_t o = 0; o < r.targets; ++o) {
            csv += fmt::format("{}{}", o > 0 || stamps ? "," : "", r.at(t, o));
        }
        csv += '\n';
    }
    write_text(c.out / "forecast.csv", csv);

    std::cerr << fmt::format("context rows: {}, horizon: {}, blocks: {}, model calls: {}\n",
                             request.context.length, r.horizon, r.blocks_used, r.forward_calls);
    for (std::size_t o = 0; o < r.targets; ++o) {
        std::cerr << fmt::format("revin {}: mean {:.6g} std {:.6g}\n", r.names[o], r.mean[o], r.std[o]);
    }
    std::cout << fmt::format("wrote {} rows x {} targets to {}\n", r.horizon, r.targets,
                             (c.out / "forecast.csv").string());
    return 0;
}

void write_table(const fs::path& dir, const std::string& name, const MetricTable& table, const std::string& title)
{
    write_text(dir / (name + ".csv"), table.to_csv());
    const std::string text = table.to_text(title);
    write_text(dir / (name + ".txt"), text);
    std::cout << text << '\n';
}

std::string window_csv(const MetricTable& table)
{
    std::string out = "window";
    for (std::size_t h : table.horizons) {
        out += fmt::format(",mae_h{}", h);
    }
    out += '\n';
    const std::size_t n_h = table.horizons.size();
    for (std::size_t w = 0; w < table.windows; ++w) {
        out += std::to_string(w);
        for (std::size_t k = 0; k < n_h; ++k) {
            out += fmt::format(",{}", table.window_mae[w * n_h + k]);
        }
        out += '\n';
    }
    return out;
}

int cmd_eval(const RunConfig& c, bool baselines, std::size_t season, bool dump_windows)
{
    require_inputs(c);
    const Checkpoint ckpt = load_checkpoint(require_checkpoint(c));
    EvalSpec spec = c.eval;
    spec.keep_window_errors = spec.keep_window_errors || dump_windows;
    const ColumnRoles roles = roles_of(c);
    for (const auto& path : c.data.inputs) {
        const RawSeries series = read_csv(path, roles);
        const fs::path dir = c.data.inputs.size() > 1 ? c.out / series.id : c.out;
        fs::create_directories(dir);
        ForecastOptions options;
        options.batch_size = spec.batch_size;
        const MetricTable table = rolling_eval(ckpt.params, ckpt.model, series, spec, options);
        write_table(dir, "gtt", table, fmt::format("{}: GTT ({} windows)", series.id, table.windows));
        if (spec.keep_window_errors) {
            write_text(dir / "gtt_windows.csv", window_csv(table));
        }
        if (baselines) {
            const MetricTable naive = naive_last_value(series, spec);
            write_table(dir, "naive_last", naive, fmt::format("{}: last value", series.id));
            if (season > 0) {
                const MetricTable seasonal = naive_seasonal(series, spec, season);
                write_table(dir, "naive_seasonal", seasonal, fmt::format("{}: seasonal naive ({})", series.id, season));
            }
        }
    }
    return 0;
}

int cmd_diff(const std::string& a_path, const std::string& b_path, const std::string& expect)
{
    if (!expect.empty() && expect != "all" && expect != "non-head") {
        throw ConfigError("--expect-equal must be 'all' or 'non-head'");
    }
    const Checkpoint a = load_checkpoint(a_path);
    const Checkpoint b = load_checkpoint(b_path);
    if (!(a.model == b.model)) {
        throw DataError("checkpoints hold different model configurations");
    }
    const auto na = a.params.named();
    const auto nb = b.params.named();
    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < na.size(); ++i) {
        const auto x = na[i].tensor.values();
        const auto y = nb[i].tensor.values();
        bool bitwise = true;
        double max_diff = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            bitwise = bitwise && std::bit_cast<std::uint32_t>(x[k]) == std::bit_cast<std::uint32_t>(y[k]);
            max_diff = std::max(max_diff, std::fabs(static_cast<double>(x[k]) - y[k]));
        }
        const bool is_head = na[i].name.rfind("head.", 0) == 0;
        const bool must_match = expect == "all" || (expect == "non-head" && !is_head);
        if (must_match && !bitwise) {
            ++mismatched;
        }
        std::cout << fmt::format("{:<40} {:<9} max|diff| {:.3g}{}\n", na[i].name, bitwise ? "identical" : "differs",
                                 max_diff, must_match && !bitwise ? "  MISMATCH" : "");
    }
    if (mismatched > 0) {
        throw InvariantError(fmt::format("{} tensor(s) differ that were expected to be identical", mismatched));
    }
    return 0;
}

int cmd_trainability(const RunConfig& c)
{
    fs::create_directories(c.out);
    const TrainabilityResult r = run_trainability(c.trainability, c.out);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [step, mae] : r.curve) {
        curve.push_back({{"step", step}, {"train_mae", mae}});
    }
    const nlohmann::json summary{{"steps", r.steps},
                                 {"train_mae", r.train_mae},
                                 {"reached_target", r.reached},
                                 {"curve", curve},
                                 {"zero_shot", r.model_table.to_json()},
                                 {"naive_last", r.naive_table.to_json()},
                                 {"improvement", r.improvement},
                                 {"seconds", r.seconds}};
    write_text(c.out / "trainability.json", summary.dump(2) + "\n");
    std::cout << fmt::format("train MAE {:.4f} after {} steps (target {}): {}\n", r.train_mae, r.steps,
                             c.trainability.target_mae, r.reached ? "reached" : "not reached");
    std::cout << r.model_table.to_text("zero-shot GTT") << '\n' << r.naive_table.to_text("last value") << '\n';
    std::cout << fmt::format("improvement over last value: {:.1f}%\n", 100.0 * r.improvement);
    return 0;
}

int cmd_scaling_probe(const RunConfig& c)
{
    const ScalingProbeResult r = run_scaling_probe(c.scaling_probe, c.out);
    write_text(c.out / "scaling_probe.csv", r.to_csv());
    write_text(c.out / "scaling_probe.txt", r.to_text());
    std::cout << r.to_text();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    kernels::tune_allocator();
    kernels::flush_denormals();
    CLI::App app{"GTT time-series foundation model"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", f.seed, "Root seed of every random stream");
    app.add_option("--threads", f.threads, "Worker threads (1 is bitwise reproducible)")->check(CLI::NonNegativeNumber);
    app.add_option("--out", f.out, "Output directory");
    app.add_option("--preset", f.preset, "Model preset: micro, tiny, small, large");
    app.add_option("--horizon", f.horizon, "Forecast horizon (eval: the single horizon)")->check(CLI::PositiveNumber);
    app.add_option("--context-len", f.context_len, "Evaluation context length")->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "Write synthetic series as CSV");
    auto* prepare = app.add_subcommand("prepare", "Build a training corpus from CSV files");
    auto* train_cmd = app.add_subcommand("train", "Pretrain from a corpus");
    auto* finetune = app.add_subcommand("finetune", "Tune the forecast head on a corpus");
    auto* forecast_cmd = app.add_subcommand("forecast", "Forecast from a context CSV");
    auto* eval = app.add_subcommand("eval", "Rolling evaluation of a checkpoint");
    auto* diff = app.add_subcommand("diff-checkpoints", "Compare the tensors of two checkpoints");
    auto* trainability = app.add_subcommand("trainability", "Sine trainability and zero-shot check");
    auto* probe = app.add_subcommand("scaling-probe", "Train two model widths on one corpus and compare");

    for (auto* sub : {prepare, eval, forecast_cmd}) {
        sub->add_option("--input", f.inputs, "Input CSV file(s)");
        sub->add_option("--roles", f.roles, "Column-role JSON sidecar");
    }
    for (auto* sub : {train_cmd, finetune}) {
        sub->add_option("--corpus", f.corpus, "Corpus directory");
    }
    for (auto* sub : {finetune, forecast_cmd, eval}) {
        sub->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
    }
    train_cmd->add_flag("--resume", f.resume, "Continue from <out>/last.ckpt");
    train_cmd->add_option("--stop-after", f.stop_after, "Stop once this many steps are done (resumable)");
    eval->add_option("--protocol", f.protocol, "standard or ili");
    eval->add_flag("--baselines", f.baselines, "Also score the naive baselines");
    eval->add_option("--season", f.season, "Period of the seasonal naive baseline (with --baselines)");
    eval->add_flag("--dump-windows", f.dump_windows, "Write per-window MAE");
    diff->add_option("a", f.ckpt_a, "First checkpoint")->required();
    diff->add_option("b", f.ckpt_b, "Second checkpoint")->required();
    diff->add_option("--expect-equal", f.expect_equal, "all or non-head: exit 3 when those tensors differ");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        setup_logging();
        if (*synth) return cmd_synth(resolve(f, app, {"synth"}));
        if (*prepare) return cmd_prepare(resolve(f, app, {"data", "corpus"}));
        if (*train_cmd) return cmd_train(resolve(f, app, {"data", "model", "train"}), f.resume, f.stop_after);
        if (*finetune) return cmd_finetune(resolve(f, app, {"data", "checkpoint", "finetune"}));
        if (*forecast_cmd) return cmd_forecast(resolve(f, app, {"data", "checkpoint", "forecast"}));
        if (*eval) return cmd_eval(resolve(f, app, {"data", "checkpoint", "eval"}), f.baselines, f.season,
                                   f.dump_windows);
        if (*diff) {
            resolve(f, app, {"checkpoint"});
            return cmd_diff(f.ckpt_a, f.ckpt_b, f.expect_equal);
        }
        if (*trainability) return cmd_trainability(resolve(f, app, {"trainability"}));
        if (*probe) return cmd_scaling_probe(resolve(f, app, {"scaling_probe"}));
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const DataError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 3;
    }
    return 3;
}
