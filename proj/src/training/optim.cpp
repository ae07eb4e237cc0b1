#include <cmath>
#include <numbers>
#include <set>

#include "gtt/errors.hpp"
#include "gtt/training.hpp"

namespace gtt {

TrainConfig TrainConfig::for_preset(const std::string& preset)
{
    const std::string key = ModelConfig::preset(preset).name; // rejects unknown names
    TrainConfig c;
    if (key == "large") {
        c.initial_lr = 3e-4, c.batch_size = 1024;
    } else if (key == "small") {
        c.initial_lr = 6e-4, c.batch_size = 2048;
    } else if (key == "tiny") {
        c.initial_lr = 1e-3, c.batch_size = 4096;
    } else {
        c.initial_lr = 1e-3, c.batch_size = 16;
    }
    return c;
}

void TrainConfig::validate() const
{
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (total_steps != 0 && total_steps <= warmup_steps) {
        throw ConfigError("total_steps (" + std::to_string(total_steps) + ") must exceed warmup_steps (" +
                          std::to_string(warmup_steps) + ")");
    }
}

nlohmann::json to_json(const ModelConfig& c)
{
    return {{"name", c.name},           {"n_layers", c.n_layers},       {"embed_dim", c.embed_dim},
            {"n_heads", c.n_heads},     {"mlp_dim", c.mlp_dim},         {"patch_size", c.patch_size},
            {"context_len", c.context_len}, {"max_channels", c.max_channels}};
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {{"initial_lr", c.initial_lr},
            {"weight_decay", c.weight_decay},
            {"clip_norm", c.clip_norm},
            {"warmup_steps", c.warmup_steps},
            {"batch_size", c.batch_size},
            {"total_steps", c.total_steps},
            {"max_steps", c.max_steps},
            {"max_epochs", c.max_epochs},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"seed", c.seed},
            {"early_stop_patience", c.early_stop_patience},
            {"eval_batch_size", c.eval_batch_size},
            {"checkpoint_every", c.checkpoint_every}};
}

namespace {

nlohmann::json merge_known(const nlohmann::json& defaults, const nlohmann::json& j, const char* what)
{
    if (!j.is_object()) {
        throw ConfigError(std::string(what) + " config must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) {
            throw ConfigError(std::string("unknown ") + what + " config key '" + key + "'");
        }
    }
    nlohmann::json merged = defaults;
    merged.update(j);
    return merged;
}

} // namespace

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base)
{
    const nlohmann::json m = merge_known(to_json(base), j, "model");
    try {
        base.name = m["name"];
        base.n_layers = m["n_layers"];
        base.embed_dim = m["embed_dim"];
        base.n_heads = m["n_heads"];
        base.mlp_dim = m["mlp_dim"];
        base.patch_size = m["patch_size"];
        base.context_len = m["context_len"];
        base.max_channels = m["max_channels"];
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    base.validate();
    return base;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base)
{
    const nlohmann::json m = merge_known(to_json(base), j, "train");
    try {
        base.initial_lr = m["initial_lr"];
        base.weight_decay = m["weight_decay"];
        base.clip_norm = m["clip_norm"];
        base.warmup_steps = m["warmup_steps"];
        base.batch_size = m["batch_size"];
        base.total_steps = m["total_steps"];
        base.max_steps = m["max_steps"];
        base.max_epochs = m["max_epochs"];
        base.beta1 = m["beta1"];
        base.beta2 = m["beta2"];
        base.adam_eps = m["adam_eps"];
        base.seed = m["seed"];
        base.early_stop_patience = m["early_stop_patience"];
        base.eval_batch_size = m["eval_batch_size"];
        base.checkpoint_every = m["checkpoint_every"];
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    base.validate();
    return base;
}

double lr_schedule(std::size_t step, double initial_lr, std::size_t warmup_steps, std::size_t total_steps)
{
    if (total_steps <= warmup_steps) {
        throw ConfigError("lr_schedule: total_steps must exceed warmup_steps");
    }
    if (step < warmup_steps) {
        return initial_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    if (progress >= 1.0) {
        return 0.0;
    }
    return std::max(0.0, initial_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

double global_grad_norm(const std::vector<NamedParam<float>>& params)
{
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.requires_grad()) {
            continue;
        }
        for (float g : p.tensor.grad()) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    return std::sqrt(sq);
}

double clip_gradients(const std::vector<NamedParam<float>>& params, double clip_norm)
{
    for (const auto& p : params) {
        if (!p.tensor.requires_grad()) {
            continue;
        }
        for (float g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NonFiniteError("non-finite gradient in " + p.name);
            }
        }
    }
    const double norm = global_grad_norm(params);
    if (!(norm > clip_norm)) {
        return 1.0;
    }
    const double scale = clip_norm / norm;
    for (const auto& p : params) {
        if (p.tensor.requires_grad()) {
            for (float& g : p.tensor.grad()) {
                g = static_cast<float>(static_cast<double>(g) * scale);
            }
        }
    }
    return scale;
}

void OptimizerState::init(const std::vector<NamedParam<float>>& params)
{
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(p.tensor.numel(), 0.0f);
        v.emplace_back(p.tensor.numel(), 0.0f);
    }
}

void adamw_step(const std::vector<NamedParam<float>>& params, OptimizerState& state, double lr,
                const AdamWOptions& o)
{
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw InvariantError("optimizer state does not match the parameter list");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<float> t = params[i].tensor;
        if (!t.requires_grad()) {
            continue;
        }
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != t.numel() || v.size() != t.numel()) {
            throw InvariantError("optimizer moments of " + params[i].name + " have the wrong size");
        }
        const auto g = t.grad();
        auto p = t.mutable_values();
        const double decay = params[i].decay ? lr * o.weight_decay : 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * gk;
            const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double update = (mk / c1) / (std::sqrt(vk / c2) + o.eps);
            const double pk = p[k];
            p[k] = static_cast<float>(pk - decay * pk - lr * update);
        }
    }
}

bool EarlyStopper::update(double val_loss)
{
    ++epochs_;
    if (epochs_ > 1 && val_loss > previous_) {
        ++increases_;
    } else {
        increases_ = 0;
    }
    previous_ = val_loss;
    last_was_best_ = val_loss < best_;
    if (last_was_best_) {
        best_ = val_loss;
        best_epoch_ = epochs_;
    }
    return should_stop();
}

namespace {

nlohmann::json finite_or_null(double x)
{
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

double from_finite_or_null(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

} // namespace

nlohmann::json EarlyStopper::to_json() const
{
    return {{"patience", patience_}, {"epochs", epochs_},           {"increases", increases_},
            {"best_epoch", best_epoch_}, {"best", finite_or_null(best_)}, {"previous", finite_or_null(previous_)},
            {"last_was_best", last_was_best_}};
}

EarlyStopper EarlyStopper::from_json(const nlohmann::json& j)
{
    EarlyStopper s(j.at("patience").get<std::size_t>());
    s.epochs_ = j.at("epochs");
    s.increases_ = j.at("increases");
    s.best_epoch_ = j.at("best_epoch");
    s.best_ = from_finite_or_null(j.at("best"));
    s.previous_ = from_finite_or_null(j.at("previous"));
    s.last_was_best_ = j.at("last_was_best");
    return s;
}

} // namespace gtt
