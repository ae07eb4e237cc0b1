// Acceptance gates. Prints one PASS/FAIL line per criterion; the exit status is
// nonzero when any selected criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "acceptance.hpp"
#include "gtt/kernels.hpp"

namespace fs = std::filesystem;
using namespace gtt::acceptance;

namespace {

struct Criterion {
    int id;
    const char* title;
    double budget_seconds;
    Outcome (*run)(const Context&);
};

const std::vector<Criterion> kCriteria = {
    {1, "parameter counts", 10, parameter_counts},
    {2, "gradient correctness", 120, gradient_correctness},
    {3, "architecture invariants", 60, architecture_invariants},
    {4, "RevIN contracts", 120, revin_contracts},
    {5, "data pipeline", 180, data_pipeline},
    {6, "trainability", 900, trainability},
    {7, "training recipe", 60, training_recipe},
    {8, "evaluation protocol", 60, protocol_conformance},
    {9, "scaling probe", 1800, scaling_probe},
};

std::string join(const std::vector<std::string>& parts)
{
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += "; ";
        out += p;
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    gtt::kernels::tune_allocator();
    gtt::kernels::flush_denormals();

    CLI::App app{"GTT acceptance gates"};
    std::vector<int> selected;
    std::string work = (fs::temp_directory_path() / ("gtt-acceptance-" + std::to_string(::getpid()))).string();
    bool keep = false;
    bool verbose = false;
    app.add_option("-c,--criterion", selected, "criteria to run (default: all)")->check(CLI::Range(1, 9));
    app.add_option("--work-dir", work, "scratch directory");
    app.add_flag("--keep", keep, "keep the scratch directory");
    app.add_flag("-v,--verbose", verbose, "log training progress");
    CLI11_PARSE(app, argc, argv);

    spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
    fs::create_directories(work);

    int failed = 0;
    for (const Criterion& c : kCriteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        const Context ctx{fs::path(work) / fmt::format("criterion-{}", c.id)};
        fs::create_directories(ctx.work_dir);
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run(ctx);
        } catch (const std::exception& e) {
            out.failures.push_back(fmt::format("exception: {}", e.what()));
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.expect(seconds <= c.budget_seconds,
                   fmt::format("took {:.0f} s, budget {:.0f} s", seconds, c.budget_seconds));
        const bool ok = out.passed();
        failed += !ok;
        std::printf("%s criterion %d (%s, %.1f s): %s\n", ok ? "PASS" : "FAIL", c.id, c.title, seconds,
                    ok ? join(out.notes).c_str() : join(out.failures).c_str());
        if (!ok && !out.notes.empty()) std::printf("    notes: %s\n", join(out.notes).c_str());
        std::fflush(stdout);
    }
    if (!keep) fs::remove_all(work);
    return failed == 0 ? 0 : 1;
}
