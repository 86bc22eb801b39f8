// Config-driven runner for the echo, layer and convergence studies.

#include "nhsim/errors.hpp"
#include "nhsim/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

using namespace nhsim;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumerical = 3, kBudget = 4 };

struct GlobalOptions {
    std::string config;
    std::optional<std::string> out;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    bool midpoint = false;
    bool verbose = false;
};

ExperimentConfig resolve(const GlobalOptions &opts) {
    ExperimentConfig cfg = opts.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(opts.config);
    if (opts.out) cfg.output = *opts.out;
    if (opts.workers) cfg.workers = *opts.workers;
    if (opts.seed) cfg.optimizer.seed = *opts.seed;
    if (opts.midpoint) cfg.dilation.rule = SamplingRule::Midpoint;
    cfg.validate();
    return cfg;
}

int finish(const ExperimentConfig &cfg, const std::string &name, const RunReport &report, bool verbose, bool budget_is_fatal) {
    write_manifest(cfg, name, report);
    if (verbose) {
        for (const auto &w : report.warnings) std::cerr << "warning: " << w << '\n';
        for (const auto &path : report.outputs) std::cerr << "wrote " << path << '\n';
    }
    for (const auto &f : report.failures) std::cerr << "numerical failure: " << f.dump() << '\n';
    if (report.numerical_failures > 0) return kNumerical;
    if (budget_is_fatal && report.budget_exhausted > 0) return kBudget;
    return kOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Dilated non-Hermitian dynamics and variational gate compilation"};
    app.require_subcommand(1);
    GlobalOptions opts;
    app.add_option("--config", opts.config, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--out", opts.out, "output directory");
    app.add_option("--workers", opts.workers, "concurrent tasks")->check(CLI::PositiveNumber);
    app.add_option("--seed", opts.seed, "optimizer seed");
    app.add_flag("--midpoint", opts.midpoint, "sample the dilated Hamiltonian at slice midpoints");
    app.add_flag("--verbose", opts.verbose, "print warnings and written files");

    auto *le_curve = app.add_subcommand("le-curve", "echo vs time per sweep point");
    auto *avg_le = app.add_subcommand("avg-le", "late-time average echo per sweep point");
    auto *layer_study = app.add_subcommand("layer-study", "minimal layers per qubit count and fitness target");
    auto *convergence = app.add_subcommand("convergence-study", "fitness per iteration at fixed layers");
    auto *compile = app.add_subcommand("compile-gate", "compile one target and write its parameters");
    auto *validate = app.add_subcommand("validate", "check a config and print it resolved");
    // global flags are accepted after the subcommand too
    for (auto *sub : {le_curve, avg_le, layer_study, convergence, compile, validate}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        const ExperimentConfig cfg = resolve(opts);
        RunReport report;
        if (*validate) {
            std::cout << cfg.to_json().dump(2) << '\n';
            return kOk;
        }
        if (*le_curve) {
            run_le_curve(cfg, report);
            return finish(cfg, "le_curve", report, opts.verbose, false);
        }
        if (*avg_le) {
            const auto rows = run_avg_le_sweep(cfg, report);
            for (const auto &row : rows)
                std::cout << "N_s=" << row.n_sites << " g=" << format_number(row.field) << " n=" << row.index
                          << " avg_theory=" << format_number(row.avg_theory) << " avg_sim=" << format_number(row.avg_simulated) << '\n';
            return finish(cfg, "avg_le", report, opts.verbose, false);
        }
        if (*layer_study) {
            const auto rows = run_layer_study(cfg, report);
            for (const auto &row : rows)
                std::cout << "N=" << row.n_qubits << " F=" << format_number(row.f_target) << " mean_L=" << format_number(row.mean_layers)
                          << " std_L=" << format_number(row.std_layers) << " exhausted=" << row.exhausted << '\n';
            return finish(cfg, "layer_study", report, opts.verbose, true);
        }
        if (*convergence) {
            const auto rows = run_convergence_study(cfg, report);
            for (const auto &row : rows)
                std::cout << "N=" << row.n_qubits << " L=" << row.layers << " first_reaching=" << row.first_reaching
                          << " best_F=" << format_number(row.trace.best_fitness) << '\n';
            return finish(cfg, "convergence_study", report, opts.verbose, true);
        }
        if (*compile) {
            const CompileOutcome outcome = compile_gate(cfg, report);
            std::cout << "fitness " << format_number(outcome.gate.fitness_achieved) << '\n'
                      << "iterations " << outcome.gate.iterations_used << '\n'
                      << "duration " << format_number(outcome.duration) << '\n'
                      << "cache " << (outcome.cache_hit ? "hit" : "miss") << '\n'
                      << "written " << outcome.written.string() << '\n';
            return finish(cfg, "compile_gate", report, opts.verbose, true);
        }
    } catch (const Error &e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
        if (e.kind() == ErrorKind::ConfigError) return kConfigError;
        if (is_numerical_failure(e.kind())) return kNumerical;
        if (e.kind() == ErrorKind::BudgetExhausted) return kBudget;
        return kFailure;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
