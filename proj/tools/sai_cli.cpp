// SPDX-License-Identifier: Apache-2.0
// sai: corpus generation, scenario runs, reports and the KL theorem suite.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "sai/corpus.hpp"
#include "sai/harness.hpp"
#include "sai/kltheory.hpp"

using namespace sai;
namespace fs = std::filesystem;

namespace {

harness::ExperimentConfig config_or_default(const std::string& path, const std::string& scenario) {
    return path.empty() ? harness::default_config(scenario) : harness::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Refusal-poisoning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    int jobs = 1;

    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus, optionally with SAI poison");
    double poison_rate = 0.0;
    gen->add_option("--config", config_path, "Experiment config (corpus and target sections are used)");
    gen->add_option("--seed", seed, "Corpus seed");
    gen->add_option("--out", out, "Output file")->required();
    gen->add_option("--poison-rate", poison_rate, "SAI poison rate for the config target")->check(CLI::Range(0.0, 1.0));

    auto* run = app.add_subcommand("run", "Run a scenario and write CSVs, plots and a summary");
    run->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Master seed (overrides the config)");
    run->add_option("--out", out, "Output directory (overrides SAI_OUT and the config)");
    run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    auto* rep = app.add_subcommand("report", "Summarize results.csv of a run directory");
    rep->add_option("--out", out, "Run directory")->required();

    auto* klv = app.add_subcommand("kl-verify", "Randomized checks of the refusal vs remapping KL results");
    int trials = 1000;
    klv->add_option("--seed", seed, "Trial seed");
    klv->add_option("--trials", trials, "Number of random instances")->check(CLI::PositiveNumber);
    klv->add_option("--out", out, "CSV output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*gen) {
            const auto cfg = config_or_default(config_path, "centralized-sweep");
            corpus::Corpus c = corpus::gen_corpus(cfg.corpus, seed.value_or(cfg.seed));
            if (poison_rate > 0.0) c = corpus::build_sai_poison(c, cfg.target, poison_rate);
            std::ostringstream ss;
            corpus::write_corpus(c, ss);
            harness::atomic_write(out, ss.str());
            std::printf("wrote %zu samples to %s\n", c.size(), out.c_str());
        } else if (*run) {
            auto cfg = harness::load_config(config_path);
            if (seed) cfg.seed = *seed;
            const fs::path dir = harness::resolve_out_dir(out, cfg.out_dir);
            const auto s = harness::run(cfg, dir, jobs);
            std::printf("%s: %zu rows in %s\n", cfg.scenario.c_str(), s.rows, s.results.string().c_str());
            std::ifstream txt(dir / "summary.txt");
            std::cout << txt.rdbuf();
        } else if (*rep) {
            std::cout << harness::report(out);
        } else if (*klv) {
            kl::VerifyConfig vc;
            vc.trials = trials;
            vc.seed = seed.value_or(1);
            const auto rows = kl::run_verification(vc);
            bool ok = true;
            for (const auto& r : rows) {
                std::printf("%-40s trials=%-6d max_violation=%-10.3g tol=%-8.3g %s\n", r.check.c_str(), r.trials,
                            r.max_violation, r.tolerance, r.passed ? "pass" : "FAIL");
                ok = ok && r.passed;
            }
            if (!out.empty()) {
                std::ostringstream ss;
                kl::write_verify_csv(rows, ss);
                harness::atomic_write(out, ss.str());
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
