#include "run_config.hpp"

#include <fstream>
#include <set>

#include "gtt/errors.hpp"

namespace gtt::cli {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kSections = {"seed",     "out",      "threads", "data",     "model",
                                         "train",    "corpus",   "finetune", "eval",    "forecast",
                                         "synth",    "checkpoint", "trainability", "scaling_probe"};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what)
{
    if (!j.is_object()) {
        throw ConfigError(what + " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("unknown " + what + " key '" + key + "'");
        }
    }
}

nlohmann::json section(const nlohmann::json& file, const char* name)
{
    if (!file.contains(name)) {
        return nlohmann::json::object();
    }
    const nlohmann::json& s = file.at(name);
    if (!s.is_object()) {
        throw ConfigError(std::string("config section '") + name + "' must be a JSON object");
    }
    if (s.contains("seed")) {
        throw ConfigError(std::string("'") + name + ".seed' is not allowed; set the top-level seed");
    }
    return s;
}

nlohmann::json without_seed(nlohmann::json j)
{
    j.erase("seed");
    return j;
}

DataConfig data_from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"inputs", "roles", "corpus"}, "data");
    DataConfig d;
    if (j.contains("inputs")) {
        for (const auto& p : j.at("inputs")) {
            d.inputs.emplace_back(p.get<std::string>());
        }
    }
    if (j.contains("roles") && !j.at("roles").is_null()) d.roles = j.at("roles").get<std::string>();
    if (j.contains("corpus") && !j.at("corpus").is_null()) d.corpus = j.at("corpus").get<std::string>();
    return d;
}

FineTuneConfig finetune_from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"lr", "max_epochs", "batch_size", "early_stop_patience"}, "finetune");
    FineTuneConfig f;
    if (j.contains("lr")) f.lr = j.at("lr");
    if (j.contains("max_epochs")) f.max_epochs = j.at("max_epochs");
    if (j.contains("batch_size")) f.batch_size = j.at("batch_size");
    if (j.contains("early_stop_patience")) f.early_stop_patience = j.at("early_stop_patience");
    if (!(f.lr > 0.0) || f.batch_size == 0) {
        throw ConfigError("finetune needs lr > 0 and batch_size > 0");
    }
    return f;
}

ForecastConfig forecast_from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"horizon", "keep_original_stats", "batch_size"}, "forecast");
    ForecastConfig f;
    if (j.contains("horizon")) f.horizon = j.at("horizon");
    if (j.contains("keep_original_stats")) f.keep_original_stats = j.at("keep_original_stats");
    if (j.contains("batch_size")) f.batch_size = j.at("batch_size");
    return f;
}

nlohmann::json optional_path(const std::optional<fs::path>& p)
{
    return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

} // namespace

nlohmann::json RunConfig::load_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

RunConfig RunConfig::resolve(const nlohmann::json& file_in, const Overrides& flags)
{
    const nlohmann::json file = file_in.is_null() ? nlohmann::json::object() : file_in;
    reject_unknown(file, kSections, "config");
    RunConfig c;
    try {
        if (file.contains("seed")) c.seed = file.at("seed").get<std::uint64_t>();
        if (file.contains("out")) c.out = file.at("out").get<std::string>();
        if (file.contains("threads")) c.threads = file.at("threads");
        c.data = data_from_json(section(file, "data"));

        nlohmann::json model = section(file, "model");
        if (model.contains("preset")) {
            c.preset = model.at("preset");
            model.erase("preset");
        }
        if (flags.preset) c.preset = *flags.preset;
        c.model = model_config_from_json(model, ModelConfig::preset(c.preset));
        c.train = train_config_from_json(section(file, "train"), TrainConfig::for_preset(c.preset));
        c.corpus = CorpusConfig::from_json(section(file, "corpus"));
        c.finetune = finetune_from_json(section(file, "finetune"));

        nlohmann::json eval = section(file, "eval");
        if (flags.protocol) eval["protocol"] = *flags.protocol;
        c.eval = EvalSpec::from_json(eval);
        c.forecast = forecast_from_json(section(file, "forecast"));
        c.synth = SyntheticSpec::from_json(section(file, "synth"));
        if (file.contains("checkpoint") && !file.at("checkpoint").is_null()) {
            c.checkpoint = file.at("checkpoint").get<std::string>();
        }
        c.trainability = TrainabilityConfig::from_json(section(file, "trainability"));
        c.scaling_probe = ScalingProbeConfig::from_json(section(file, "scaling_probe"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }

    if (flags.seed) c.seed = *flags.seed;
    if (flags.threads) c.threads = *flags.threads;
    if (flags.out) c.out = *flags.out;
    if (flags.horizon) {
        c.forecast.horizon = *flags.horizon;
        c.eval.horizons = {*flags.horizon};
    }
    if (flags.context_len) c.eval.context_len = *flags.context_len;
    if (!flags.inputs.empty()) c.data.inputs = flags.inputs;
    if (flags.roles) c.data.roles = flags.roles;
    if (flags.corpus) c.data.corpus = flags.corpus;
    if (flags.checkpoint) c.checkpoint = flags.checkpoint;

    c.train.seed = c.seed;
    c.finetune.seed = c.seed;
    c.synth.seed = c.seed;
    c.trainability.seed = c.seed;
    c.scaling_probe.seed = c.seed;

    if (c.threads < 0) throw ConfigError("threads must be >= 0");
    if (c.forecast.horizon == 0) throw ConfigError("forecast horizon must be at least 1");
    if (c.forecast.batch_size == 0) throw ConfigError("forecast batch_size must be positive");
    c.model.validate();
    c.train.validate();
    c.eval.validate();
    c.synth.validate();
    return c;
}

nlohmann::json RunConfig::to_json(const std::vector<std::string>& sections) const
{
    nlohmann::json all;
    all["seed"] = seed;
    all["out"] = out.string();
    all["threads"] = threads;
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& p : data.inputs) {
        inputs.push_back(p.string());
    }
    all["data"] = {{"inputs", inputs}, {"roles", optional_path(data.roles)}, {"corpus", optional_path(data.corpus)}};
    all["model"] = gtt::to_json(model);
    all["model"]["preset"] = preset;
    all["train"] = without_seed(gtt::to_json(train));
    all["corpus"] = corpus.to_json();
    all["finetune"] = {{"lr", finetune.lr},
                       {"max_epochs", finetune.max_epochs},
                       {"batch_size", finetune.batch_size},
                       {"early_stop_patience", finetune.early_stop_patience}};
    all["eval"] = eval.to_json();
    all["forecast"] = {{"horizon", forecast.horizon},
                       {"keep_original_stats", forecast.keep_original_stats},
                       {"batch_size", forecast.batch_size}};
    all["synth"] = without_seed(synth.to_json());
    all["checkpoint"] = optional_path(checkpoint);
    all["trainability"] = without_seed(trainability.to_json());
    all["scaling_probe"] = without_seed(scaling_probe.to_json());
    if (sections.empty()) {
        return all;
    }
    nlohmann::json out{{"seed", all["seed"]}, {"out", all["out"]}, {"threads", all["threads"]}};
    for (const auto& s : sections) {
        out[s] = all.at(s);
    }
    return out;
}

} // namespace gtt::cli
