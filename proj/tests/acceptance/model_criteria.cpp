#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "acceptance.hpp"
#include "gtt/grad_check.hpp"
#include "gtt/inference.hpp"
#include "gtt/model.hpp"

namespace gtt::acceptance {

namespace {

template <class T>
using Aux = std::vector<Tensor<T>>;

template <class T>
using OpFn = std::function<Tensor<T>(Tape<T>&, const Tensor<T>&, const Aux<T>&)>;

/// A scalar loss of one differentiated tensor x and fixed auxiliary tensors,
/// written once and instantiated in both precisions.
struct OpCase {
    std::string name;
    Shape x;
    std::vector<Shape> aux;
    OpFn<double> f64;
    OpFn<float> f32;
};

template <class G>
OpCase op_case(std::string name, Shape x, std::vector<Shape> aux, G g)
{
    return {std::move(name), std::move(x), std::move(aux), g, g};
}

template <class X>
using value_t = typename std::decay_t<X>::value_type;

std::vector<OpCase> op_cases()
{
    std::vector<OpCase> c;
    c.push_back(op_case("matmul lhs, broadcast rhs batch", {3, 4}, {{2, 4, 5}, {2, 3, 5}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, matmul(t, x, a[0]), a[1])); }));
    c.push_back(op_case("matmul rhs", {4, 5}, {{2, 3, 4}, {2, 3, 5}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, matmul(t, a[0], x), a[1])); }));
    c.push_back(op_case("matmul batched", {2, 3, 4}, {{2, 4, 5}, {2, 3, 5}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, matmul(t, x, a[0]), a[1])); }));
    c.push_back(op_case("linear input", {2, 3, 4}, {{4, 3}, {3}, {2, 3, 3}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, linear(t, x, a[0], a[1]), a[2]));
    }));
    c.push_back(op_case("linear weight", {4, 3}, {{2, 3, 4}, {3}, {2, 3, 3}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, linear(t, a[0], x, a[1]), a[2]));
    }));
    c.push_back(op_case("linear bias", {3}, {{2, 3, 4}, {4, 3}, {2, 3, 3}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, linear(t, a[0], a[1], x), a[2]));
    }));
    c.push_back(op_case("add", {2, 3}, {{2, 3}, {2, 3}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, add(t, x, a[0]), a[1])); }));
    c.push_back(op_case("add broadcast operand", {3}, {{2, 3}, {2, 3}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, add(t, a[0], x), a[1])); }));
    c.push_back(op_case("sub", {2, 3}, {{2, 3}, {2, 3}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, sub(t, a[0], x), mul(t, x, a[1])));
    }));
    c.push_back(op_case("mul", {2, 3}, {{2, 3}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, mul(t, x, x), a[0])); }));
    c.push_back(op_case("scale", {2, 3}, {{2, 3}}, [](auto& t, const auto& x, const auto& a) {
        using T = value_t<decltype(x)>;
        return sum(t, mul(t, scale(t, x, static_cast<T>(-0.7)), mul(t, x, a[0])));
    }));
    c.push_back(op_case("sum", {3, 4}, {}, [](auto& t, const auto& x, const auto&) { return sum(t, mul(t, x, x)); }));
    c.push_back(op_case("mean", {3, 4}, {{3, 4}},
                        [](auto& t, const auto& x, const auto& a) { return mean(t, mul(t, mul(t, x, x), a[0])); }));
    c.push_back(op_case("softmax last axis", {3, 5}, {{3, 5}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, softmax(t, x), a[0])); }));
    c.push_back(op_case("softmax inner axis", {2, 3, 4}, {{2, 3, 4}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, softmax(t, x, 1), a[0])); }));
    c.push_back(op_case("layer_norm input", {4, 6}, {{6}, {6}, {4, 6}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, layer_norm(t, x, a[0], a[1]), a[2]));
    }));
    c.push_back(op_case("layer_norm gamma", {6}, {{4, 6}, {6}, {4, 6}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, layer_norm(t, a[0], x, a[1]), a[2]));
    }));
    c.push_back(op_case("layer_norm beta", {6}, {{4, 6}, {6}, {4, 6}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, layer_norm(t, a[0], a[1], x), a[2]));
    }));
    c.push_back(op_case("gelu", {10}, {{10}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, gelu(t, x), a[0])); }));
    c.push_back(op_case("reshape", {2, 3, 4}, {{6, 4}},
                        [](auto& t, const auto& x, const auto& a) { return sum(t, mul(t, reshape(t, x, {6, 4}), a[0])); }));
    c.push_back(op_case("transpose", {2, 3, 4}, {{4, 2, 3}}, [](auto& t, const auto& x, const auto& a) {
        return sum(t, mul(t, transpose(t, x, {2, 0, 1}), a[0]));
    }));
    c.push_back(op_case("slice", {3, 4}, {{2, 4}, {3, 2}}, [](auto& t, const auto& x, const auto& a) {
        return add(t, sum(t, mul(t, slice(t, x, 0, 1, 3), a[0])), sum(t, mul(t, slice(t, x, 1, 2, 4), a[1])));
    }));
    c.push_back(op_case("concat", {3, 4}, {{3, 2}, {3, 10}}, [](auto& t, const auto& x, const auto& a) {
        using T = value_t<decltype(x)>;
        const std::vector<Tensor<T>> parts{x, a[0], x};
        return sum(t, mul(t, concat<T>(t, parts, 1), a[1]));
    }));
    return c;
}

/// Float draws, so the 32-bit and 64-bit routes see identical values.
std::vector<float> draw(const Shape& shape, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    std::vector<float> v(shape_numel(shape));
    for (float& x : v) x = static_cast<float>(normal(rng));
    return v;
}

template <class T>
Tensor<T> as(const Shape& shape, const std::vector<float>& v, bool requires_grad = false)
{
    return Tensor<T>(shape, std::vector<T>(v.begin(), v.end()), requires_grad);
}

std::vector<double> gradient_of(const Tensor<float>& x)
{
    return {x.grad().begin(), x.grad().end()};
}

template <class T>
Tensor<T> permute_channels(const Tensor<T>& x, const std::vector<std::size_t>& perm)
{
    const std::size_t rows = x.extent(0) * x.extent(1), c = x.extent(2);
    std::vector<T> v(x.numel());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = x.values()[i * c + perm[j]];
    return Tensor<T>(x.shape(), std::move(v));
}

template <class T>
Tensor<T> random_input(const Shape& shape, std::mt19937_64& rng)
{
    return as<T>(shape, draw(shape, rng));
}

std::vector<double> sine_context(std::size_t rows, std::size_t channels, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> amp(0.2, 5.0), offset(-10.0, 10.0), period(8.0, 120.0);
    std::normal_distribution<double> noise;
    std::vector<double> x(rows * channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double a = amp(rng), o = offset(rng), p = period(rng);
        for (std::size_t t = 0; t < rows; ++t)
            x[t * channels + c] = o + a * (std::sin(2 * std::numbers::pi * double(t) / p) + 0.1 * noise(rng));
    }
    return x;
}

const ModelConfig& micro()
{
    static const ModelConfig c = ModelConfig::preset("micro");
    return c;
}

const ModelParams<float>& micro_params()
{
    static const ModelParams<float> p = noisy_params<float>(micro(), 7, 0.05);
    return p;
}

} // namespace

Outcome parameter_counts(const Context&)
{
    Outcome out;
    const std::pair<const char*, double> expected[] = {{"tiny", 7e6}, {"small", 19e6}, {"large", 57e6}};
    for (const auto& [name, target] : expected) {
        const auto n = param_count(ModelConfig::preset(name));
        const double rel = static_cast<double>(n) / target - 1.0;
        out.expect(std::fabs(rel) <= 0.05, fmt::format("{}: {} parameters is {:+.2f}% off {:.0f}M", name, n,
                                                       100 * rel, target / 1e6));
        out.note(fmt::format("{} {:.2f}M ({:+.1f}%)", name, static_cast<double>(n) / 1e6, 100 * rel));
    }
    // The count is the allocation, not a formula kept apart from it.
    const ModelConfig tiny = ModelConfig::preset("tiny");
    out.expect(init_params<float>(tiny, 1).count() == param_count(tiny), "tiny: allocated size differs from param_count");
    return out;
}

Outcome gradient_correctness(const Context&)
{
    Outcome out;
    std::mt19937_64 rng(2);
    double worst64 = 0.0, worst32 = 0.0;
    std::size_t checks = 0;

    GradCheckOptions o64;
    o64.step = 1e-5;
    o64.tolerance = 1e-5;
    o64.floor = 1e-6;
    GradCheckOptions o32 = o64;
    o32.tolerance = 1e-3;

    for (const OpCase& c : op_cases()) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto xv = draw(c.x, rng);
            std::vector<std::vector<float>> av;
            for (const Shape& s : c.aux) av.push_back(draw(s, rng));
            Aux<double> a64;
            Aux<float> a32;
            for (std::size_t i = 0; i < c.aux.size(); ++i) {
                a64.push_back(as<double>(c.aux[i], av[i]));
                a32.push_back(as<float>(c.aux[i], av[i]));
            }
            const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)> f =
                [&](Tape<double>& t, const Tensor<double>& x) { return c.f64(t, x, a64); };
            const Tensor<double> x64 = as<double>(c.x, xv);
            const GradCheckReport r64 = grad_check<double>(f, x64, o64);
            worst64 = std::max(worst64, r64.max_rel_error);
            out.expect(r64.passed, fmt::format("{} trial {} (64-bit): {}", c.name, trial, r64.summary()));

            // 32-bit: the float tape gradient against central differences of the
            // same function in 64-bit, evaluated at the same float values.
            const Tensor<float> x32 = as<float>(c.x, xv, true);
            Tape<float> tape;
            tape.backward(c.f32(tape, x32, a32));
            const std::function<Tensor<double>(Tape<double>&)> loss = [&](Tape<double>& t) { return c.f64(t, x64, a64); };
            const GradCheckReport r32 = check_against_finite_differences<double>(gradient_of(x32), loss, x64, o32);
            worst32 = std::max(worst32, r32.max_rel_error);
            out.expect(r32.passed, fmt::format("{} trial {} (32-bit): {}", c.name, trial, r32.summary()));
            checks += 2;
        }
    }

    // The full micro loss, every parameter tensor, 5 random points per precision.
    const ModelConfig& cfg = micro();
    const std::size_t C = 3;
    GradCheckOptions model64 = o64;
    model64.floor = 1e-5;
    model64.max_coordinates = 4;
    model64.directions = 1;
    GradCheckOptions model32 = model64;
    model32.tolerance = 1e-3;
    double worst_model64 = 0.0, worst_model32 = 0.0;
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const auto p32 = noisy_params<float>(cfg, 100 + trial, 0.05);
        auto p64 = cast_params<double>(p32);
        p64.set_requires_grad(true);
        std::mt19937_64 r(200 + trial);
        const auto xv = draw({1, cfg.context_len, C}, r);
        const auto yv = draw({1, cfg.patch_size, C}, r);
        const Tensor<double> x64 = as<double>({1, cfg.context_len, C}, xv);
        const Tensor<double> y64 = as<double>({1, cfg.patch_size, C}, yv);
        const std::vector<std::uint8_t> valid{1, trial % 2 == 0, 1};
        const std::function<Tensor<double>(Tape<double>&)> loss64 = [&](Tape<double>& t) {
            return masked_mae_loss(t, forward(t, x64, C, p64, cfg).all, y64, valid);
        };

        auto q32 = p32.clone();
        q32.set_requires_grad(true);
        {
            Tape<float> tape;
            tape.backward(masked_mae_loss(tape,
                                          forward(tape, as<float>({1, cfg.context_len, C}, xv), C, q32, cfg).all,
                                          as<float>({1, cfg.patch_size, C}, yv), valid));
        }
        const auto n64 = p64.named();
        const auto n32 = q32.named();
        for (std::size_t i = 0; i < n64.size(); ++i) {
            model64.seed = model32.seed = trial * 1000 + i;
            const GradCheckReport r64 = grad_check<double>(loss64, n64[i].tensor, model64);
            worst_model64 = std::max(worst_model64, r64.max_rel_error);
            out.expect(r64.passed, fmt::format("micro loss trial {} {} (64-bit): {}", trial, n64[i].name, r64.summary()));
            const GradCheckReport r32 =
                check_against_finite_differences<double>(gradient_of(n32[i].tensor), loss64, n64[i].tensor, model32);
            worst_model32 = std::max(worst_model32, r32.max_rel_error);
            out.expect(r32.passed, fmt::format("micro loss trial {} {} (32-bit): {}", trial, n32[i].name, r32.summary()));
            checks += 2;
        }
    }
    out.note(fmt::format("{} checks; ops worst rel err {:.1e} (64-bit), {:.1e} (32-bit); micro loss {:.1e} / {:.1e}",
                         checks, worst64, worst32, worst_model64, worst_model32));
    return out;
}

Outcome architecture_invariants(const Context&)
{
    Outcome out;
    const ModelConfig& cfg = micro();
    const auto& params = micro_params();

    // Forward: permuting input channels permutes the output channels.
    std::mt19937_64 rng(3);
    double worst_forward = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        const std::size_t C = 5;
        std::vector<std::size_t> perm(C);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Tensor<float> x = random_input<float>({2, cfg.context_len, C}, rng);
        Tape<float> tape(false);
        const auto y = forward(tape, x, C, params, cfg);
        const auto yp = forward(tape, permute_channels(x, perm), C, params, cfg);
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < 2 * cfg.patch_size; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                const double want = y.all.values()[i * C + perm[j]];
                diff = std::max(diff, std::fabs(double(yp.all.values()[i * C + j]) - want));
                scale = std::max(scale, std::fabs(want));
            }
        worst_forward = std::max(worst_forward, diff / scale);
    }
    out.expect(worst_forward <= 1e-5, fmt::format("forward permutation error {:.2e}", worst_forward));

    // End to end through normalization, padding and a two-block rollout.
    {
        const std::size_t rows = 600, C = 5, H = 96;
        const auto x = sine_context(rows, C, rng);
        const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        std::vector<double> xp(x.size());
        for (std::size_t t = 0; t < rows; ++t)
            for (std::size_t j = 0; j < C; ++j) xp[t * C + j] = x[t * C + perm[j]];
        const auto a = forecast(params, cfg, ForecastRequest::from_values(x, rows, C, H));
        const auto b = forecast(params, cfg, ForecastRequest::from_values(xp, rows, C, H));
        double worst = 0.0;
        for (std::size_t t = 0; t < H; ++t)
            for (std::size_t j = 0; j < C; ++j) {
                const double want = a.at(t, perm[j]);
                worst = std::max(worst, std::fabs(b.at(t, j) - want) / std::max(std::fabs(want), a.std[perm[j]]));
            }
        out.expect(worst <= 1e-5, fmt::format("inference permutation error {:.2e}", worst));
        out.note(fmt::format("permutation error forward {:.1e}, inference {:.1e}", worst_forward, worst));
    }

    // One projection set per layer serves both attention stages.
    {
        ModelConfig small;
        small.name = "invariants";
        small.embed_dim = 8;
        small.n_heads = 2;
        small.mlp_dim = 16;
        small.patch_size = 4;
        small.context_len = 16;
        small.max_channels = 4;
        auto p = noisy_params<double>(small, 31, 0.3);
        const std::size_t B = 1, C = 3;
        const Tensor<double> z = random_input<double>({B * C, small.n_patches(), small.embed_dim}, rng);
        Tape<double> tape(false);
        EncoderTrace<double> before;
        encoder_layer(tape, z, p.layers[0], B, C, small.n_heads, &before);
        auto& attn = p.layers[0].attn;
        for (Tensor<double>* w : {&attn.w_q, &attn.w_k, &attn.w_v, &attn.w_o}) {
            const std::vector<double> saved(w->values().begin(), w->values().end());
            w->mutable_values()[5] += 0.5;
            EncoderTrace<double> after;
            encoder_layer(tape, z, p.layers[0], B, C, small.n_heads, &after);
            const auto changed = [](const Tensor<double>& a, const Tensor<double>& b) {
                for (std::size_t i = 0; i < a.numel(); ++i)
                    if (std::fabs(a.values()[i] - b.values()[i]) > 1e-9) return true;
                return false;
            };
            out.expect(changed(before.temporal_attention, after.temporal_attention) &&
                           changed(before.channel_attention, after.channel_attention),
                       "editing one attention projection did not change both stages");
            std::copy(saved.begin(), saved.end(), w->mutable_values().begin());
        }
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const std::string prefix = fmt::format("layers.{}.attn.", l);
            const auto named = params.named();
            const auto n = std::count_if(named.begin(), named.end(),
                                         [&](const auto& np) { return np.name.rfind(prefix, 0) == 0; });
            out.expect(n == 8, fmt::format("layer {} holds {} attention tensors, expected 8", l, n));
        }
    }

    // Supplemented channels (zero inputs, flagged invalid) carry no loss gradient.
    {
        const std::size_t C = 4;
        auto run = [&](float fill, std::vector<float>& grads, double& loss_value) {
            auto p = params.clone();
            p.set_requires_grad(true);
            std::mt19937_64 r(44);
            std::normal_distribution<float> n;
            std::vector<float> v(cfg.context_len * C, 0.0f), y(cfg.patch_size * C);
            for (std::size_t t = 0; t < cfg.context_len; ++t)
                for (std::size_t j = 0; j < 2; ++j) v[t * C + j] = n(r);
            for (std::size_t t = 0; t < cfg.patch_size; ++t)
                for (std::size_t j = 0; j < C; ++j) y[t * C + j] = j < 2 ? n(r) : fill;
            Tape<float> tape;
            const auto out_y = forward(tape, Tensor<float>({1, cfg.context_len, C}, v), C, p, cfg);
            const auto loss = masked_mae_loss(tape, out_y.all, Tensor<float>({1, cfg.patch_size, C}, y),
                                              std::vector<std::uint8_t>{1, 1, 0, 0});
            tape.backward(loss);
            loss_value = loss.item();
            bool zero = true;
            for (std::size_t t = 0; t < cfg.patch_size; ++t)
                for (std::size_t j = 2; j < C; ++j) zero = zero && out_y.all.grad()[t * C + j] == 0.0f;
            grads.clear();
            for (const auto& np : p.named()) grads.insert(grads.end(), np.tensor.grad().begin(), np.tensor.grad().end());
            return zero;
        };
        std::vector<float> g1, g2;
        double l1 = 0.0, l2 = 0.0;
        out.expect(run(0.0f, g1, l1), "supplemented channel outputs received a nonzero gradient");
        run(123.0f, g2, l2);
        out.expect(l1 == l2 && g1 == g2, "targets of supplemented channels changed the loss or its gradient");
    }
    return out;
}

Outcome revin_contracts(const Context&)
{
    Outcome out;
    std::mt19937_64 rng(4);

    // Round trip over wide scales and offsets, including a constant and a bypassed channel.
    double worst_trip = 0.0;
    std::uniform_int_distribution<std::size_t> rows_d(1, 2000), chans_d(1, 8);
    std::uniform_real_distribution<double> log_scale(-3.0, 4.0), offset(-1e5, 1e5);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rows = rows_d(rng), C = chans_d(rng) + 1;
        std::vector<double> x(rows * C);
        std::vector<std::uint8_t> bypass(C, 0);
        bypass[C - 1] = trial % 2;
        for (std::size_t c = 0; c < C; ++c) {
            const double s = std::pow(10.0, log_scale(rng)), o = offset(rng);
            for (std::size_t t = 0; t < rows; ++t) x[t * C + c] = c == 0 && trial % 3 == 0 ? o : o + s * normal(rng);
        }
        const auto norm = revin_normalize(x, rows, C, bypass);
        const auto back = revin_denormalize(norm.values, rows, C, norm.stats);
        for (std::size_t t = 0; t < rows; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                const double denom = std::max({std::fabs(x[t * C + c]), norm.stats.std[c], 1e-300});
                worst_trip = std::max(worst_trip, std::fabs(back[t * C + c] - x[t * C + c]) / denom);
                if (bypass[c]) out.expect(norm.values[t * C + c] == x[t * C + c], "bypassed channel was modified");
            }
    }
    out.expect(worst_trip <= 1e-6, fmt::format("round trip error {:.2e}", worst_trip));

    // forecast(a x + b) = a forecast(x) + b for 20 positive affine maps.
    const ModelConfig& cfg = micro();
    const auto& params = micro_params();
    {
        const auto x = sine_context(700, 3, rng);
        const auto request = ForecastRequest::from_values(x, 700, 3, 100);
        std::uniform_real_distribution<double> a(0.1, 10.0), b(-100.0, 100.0);
        double worst = 0.0;
        for (int i = 0; i < 20; ++i) {
            const auto r = affine_equivariance_check(params, cfg, request, a(rng), b(rng), 1e-4);
            worst = std::max(worst, r.max_rel_error);
            out.expect(r.passed, fmt::format("affine a={:.3f} b={:.3f}: error {:.2e}", r.a, r.b, r.max_rel_error));
        }
        out.note(fmt::format("round trip {:.1e}, affine worst {:.1e}", worst_trip, worst));
    }

    // Short contexts: normalize the real rows, then pad with zeros.
    for (std::size_t rows : {std::size_t{1}, std::size_t{100}, std::size_t{1023}}) {
        const std::size_t C = 2, H = 70;
        const auto x = sine_context(rows, C, rng);
        const auto result = forecast(params, cfg, ForecastRequest::from_values(x, rows, C, H));

        const auto norm = revin_normalize(x, rows, C);
        PackedContext ctx;
        ctx.window.assign(kContextLen * kSampleChannels, 0.0f);
        for (std::size_t t = 0; t < rows; ++t)
            for (std::size_t c = 0; c < C; ++c)
                ctx.window[(kContextLen - rows + t) * kSampleChannels + c] = static_cast<float>(norm.values[t * C + c]);
        ctx.channel_valid[0] = ctx.channel_valid[1] = 1;
        ctx.data_channels = C;
        ctx.real_rows = rows;
        const auto pred = rollout(params, cfg, std::span(&ctx, 1), H).front();
        bool equal = true;
        for (std::size_t t = 0; t < H; ++t)
            for (std::size_t c = 0; c < C; ++c)
                equal = equal && result.at(t, c) == pred[t * kSampleChannels + c] * (norm.stats.std[c] + kNormEpsilon) +
                                                         norm.stats.mean[c];
        out.expect(equal, fmt::format("L={}: forecast differs from the explicitly padded context", rows));
        if (rows == 100) {
            const auto padded_first = zero_pad(x, rows, C);
            const auto wrong = forecast(params, cfg, ForecastRequest::from_values(padded_first, kContextLen, C, H));
            out.expect(wrong.predictions != result.predictions, "L=100: padding before normalization is not detected");
        }
    }
    return out;
}

} // namespace gtt::acceptance
