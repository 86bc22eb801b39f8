// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Pass --slow to also run the six-qubit, 400-layer compile of criterion 8.

#include "oracles.hpp"

#include "nhsim/dilated_circuit.hpp"
#include "nhsim/dilation.hpp"
#include "nhsim/experiment.hpp"
#include "nhsim/model_hamiltonians.hpp"
#include "nhsim/variational.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <sys/wait.h>

using namespace nhsim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

fs::path scratch_dir(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / "nhsim_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double mean_late(const EchoSeries &s) { return average_le(s, 15.0, 5.0); }

// ---------------------------------------------------------------------------

Outcome dilation_correctness() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> herm_norm(0.1, 1.0), anti_norm(0.1, 0.75);
    double worst_error = 0.0, worst_end_ratio = 1e300, worst_mid_ratio = 1e300;

    for (int trial = 0; trial < 20; ++trial) {
        const OperatorMatrix hs =
            oracle::random_hermitian_with_norm(4, herm_norm(rng), rng) + kI * oracle::random_hermitian_with_norm(4, anti_norm(rng), rng);
        const OperatorMatrix rho0 = oracle::random_density(4, rng);
        const OperatorMatrix exact = exact_nonhermitian_evolve(hs, rho0, 1.0);

        auto error = [&](int segments, SamplingRule rule) {
            DilationConfig cfg;
            cfg.total_time = 1.0;
            cfg.segments = segments;
            cfg.rule = rule;
            return trace_distance(run_dilated(rho0, target_unitary(hs, cfg), cfg.eta0).system_state, exact);
        };
        const double e1000 = error(1000, SamplingRule::Endpoint), e2000 = error(2000, SamplingRule::Endpoint);
        const double m1000 = error(1000, SamplingRule::Midpoint), m2000 = error(2000, SamplingRule::Midpoint);
        worst_error = std::max({worst_error, e1000, m1000});
        worst_end_ratio = std::min(worst_end_ratio, e1000 / e2000);
        worst_mid_ratio = std::min(worst_mid_ratio, m1000 / m2000);
    }
    return {worst_error <= 1e-3 && worst_end_ratio >= 1.8 && worst_mid_ratio >= 3.5,
            fmt("max trace distance %.3g, min doubling ratio endpoint %.3f midpoint %.3f", worst_error, worst_end_ratio, worst_mid_ratio)};
}

Outcome hermitian_limit() {
    double worst_gamma = 0.0, worst_theory = 0.0, worst_dilated = 0.0;
    for (int n_sites : {2, 3, 4}) {
        ExperimentConfig cfg;
        cfg.ising = {n_sites, 1.0, 0.5};
        cfg.perturbation = {1, 0.0};
        cfg.time_grid = {0.0, 20.0, 0.5};
        cfg.output = scratch_dir("hermitian_limit").string();
        cfg.simulation.mode = SimulationMode::None;
        RunReport report;
        const LeCurveResult theory = run_le_curve(cfg, report);
        for (double le : theory.series[0].le_theory) worst_theory = std::max(worst_theory, std::abs(le - 1.0));

        const ModelInstance model = build_model(theory.points[0], cfg.beta);
        for (double t : cfg.time_grid.points())
            worst_gamma = std::max(worst_gamma, spectral_norm(dilated_hamiltonian(model.hs, t, cfg.dilation).gamma_block));

        // the dilated circuit itself on a coarse subset of the grid
        for (double t : {0.5, 5.0, 20.0}) {
            const DilationConfig dc = dilation_for(cfg, t);
            const DilatedRunResult run = run_dilated(model.rho0, target_unitary(model.hs, dc), dc.eta0);
            worst_dilated = std::max(worst_dilated, std::abs(loschmidt_echo(model.rho0, run.system_state) - 1.0));
        }
    }
    return {worst_gamma <= 1e-9 && worst_theory <= 1e-8 && worst_dilated <= 1e-8,
            fmt("max |Gamma| %.3g, max |L - 1| theory %.3g dilated %.3g", worst_gamma, worst_theory, worst_dilated)};
}

Outcome phase_bands() {
    ExperimentConfig cfg;
    cfg.ising = {5, 1.0, 0.1};
    cfg.perturbation = {1, 0.1};
    cfg.beta = 10.0;
    cfg.time_grid = {0.0, 20.0, 0.5};
    cfg.sweep.fields = {0.1, 0.5, 1.1, 1.5};
    cfg.simulation.mode = SimulationMode::None;
    cfg.output = scratch_dir("phase_bands_theory").string();
    set_model_warnings(false);
    RunReport report;
    const LeCurveResult theory = run_le_curve(cfg, report);

    bool bands = true;
    std::string detail = "theory means";
    for (std::size_t p = 0; p < theory.points.size(); ++p) {
        const double g = theory.points[p].ising.field, m = mean_late(theory.series[p]);
        const bool ok = g > 1.0 ? (m >= 0.95 && m <= 1.0) : (m >= 0.45 && m <= 0.55);
        bands = bands && ok;
        detail += fmt(" g=%.1f:%.4f%s", g, m, ok ? "" : "(out)");
    }

    // simulated path on three sites through compiled gates
    ExperimentConfig sim = cfg;
    sim.ising.n_sites = 3;
    sim.time_grid = {0.0, 20.0, 1.0};
    sim.dilation.eta0 = 5.0;
    sim.ansatz.layers = 150;
    sim.optimizer.learning_rate = 0.02;
    sim.optimizer.max_iterations = 600;
    sim.optimizer.target_fitness = 0.999;
    sim.simulation.mode = SimulationMode::Vqa;
    sim.output = scratch_dir("phase_bands_sim").string();
    RunReport sim_report;
    const LeCurveResult simulated = run_le_curve(sim, sim_report);
    set_model_warnings(true);

    double worst = 0.0;
    int compared = 0, total = 0;
    for (const auto &s : simulated.series)
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            ++total;
            if (!(s.fitness[k] >= 0.999)) continue;
            ++compared;
            worst = std::max(worst, std::abs(s.le_simulated[k] - s.le_theory[k]));
        }
    const bool tracks = compared > 0 && worst <= 0.05 && sim_report.numerical_failures == 0;
    detail += fmt("; simulated %d/%d points at F >= 0.999, max |L_sim - L_th| %.4f", compared, total, worst);
    return {bands && tracks, detail};
}

Outcome boundary_dependence() {
    ExperimentConfig cfg;
    cfg.ising = {5, 1.0, 0.1};
    cfg.perturbation = {1, 0.1};
    cfg.beta = 1.0;
    cfg.time_grid = {0.0, 20.0, 0.5};
    cfg.sweep.fields = {0.1, 1.1};
    cfg.sweep.perturbation_indices = {1, 2, 3, 4, 5};
    cfg.simulation.mode = SimulationMode::None;
    cfg.output = scratch_dir("boundary").string();
    set_model_warnings(false);
    RunReport report;
    const LeCurveResult r = run_le_curve(cfg, report);
    set_model_warnings(true);

    bool pass = true;
    std::string detail;
    for (std::size_t p = 0; p < r.points.size(); ++p) {
        const double g = r.points[p].ising.field, m = mean_late(r.series[p]);
        const int n = r.points[p].perturbation.index;
        bool ok = true;
        if (g > 1.0) ok = m >= 0.95;
        else if (n >= 3) ok = m >= 0.95 && m <= 1.0;
        else if (n == 1) ok = m < 0.7;
        pass = pass && ok;
        detail += fmt("%sg=%.1f,n=%d:%.4f%s", detail.empty() ? "" : " ", g, n, m, ok ? "" : "(out)");
    }
    return {pass, detail};
}

Outcome average_transition() {
    ExperimentConfig cfg;
    cfg.ising = {2, 1.0, 0.05};
    cfg.perturbation = {1, 0.1};
    cfg.beta = 10.0;
    cfg.time_grid = {0.0, 1000.0, 0.5};
    cfg.average_window = AverageWindow{500.0, 500.0};
    cfg.sweep.fields = {0.05, 0.5, 0.9, 1.1, 1.5};
    cfg.sweep.n_sites = {2, 3, 4};
    cfg.simulation.mode = SimulationMode::None;
    cfg.output = scratch_dir("average").string();
    set_model_warnings(false);
    RunReport report;
    const std::vector<AverageRow> rows = run_avg_le_sweep(cfg, report);
    set_model_warnings(true);

    bool pass = true;
    std::string detail;
    for (int n_sites : {2, 3, 4}) {
        std::vector<AverageRow> chain;
        std::copy_if(rows.begin(), rows.end(), std::back_inserter(chain), [&](const AverageRow &r) { return r.n_sites == n_sites; });
        std::sort(chain.begin(), chain.end(), [](const AverageRow &a, const AverageRow &b) { return a.field < b.field; });
        bool ok = chain.size() == 5;
        for (std::size_t k = 1; ok && k < chain.size(); ++k) ok = chain[k].avg_theory >= chain[k - 1].avg_theory - 0.02;
        if (ok) {
            ok = chain.front().avg_theory >= 0.45 && chain.front().avg_theory <= 0.6 && chain.back().avg_theory >= 0.9 &&
                 chain.back().avg_theory <= 1.0;
        }
        pass = pass && ok;
        detail += fmt("%sNs=%d:", detail.empty() ? "" : " ", n_sites);
        for (const auto &r : chain) detail += fmt(" %.3f", r.avg_theory);
        if (!ok) detail += "(out)";
    }
    return {pass, detail};
}

Outcome gradient_exactness() {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> qubits(1, 4), depth(1, 10);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    const CouplingTable table = CouplingTable::synthetic_default();
    double worst_rel = 0.0, worst_naive = 0.0;

    for (int trial = 0; trial < 20; ++trial) {
        const int n = qubits(rng), layers = depth(rng);
        const Entangler ent = make_entangler(build_entangler_generator(table.restricted(n)), 0.0035);
        AnsatzParameters p(layers, n, 0.0035);
        for (double &x : p.theta) x = angle(rng);
        const OperatorMatrix target = oracle::random_unitary(Eigen::Index{1} << n, rng);

        const std::vector<double> analytic = fitness_and_gradient(p, target, ent).gradient;
        const std::vector<double> fd = oracle::five_point_gradient(p, target, ent.matrix(), 1e-4);
        const std::vector<double> naive = oracle::naive_gradient(p, target, ent.matrix());
        for (std::size_t k = 0; k < analytic.size(); ++k) {
            worst_rel = std::max(worst_rel, std::abs(analytic[k] - fd[k]) / std::abs(fd[k]));
            worst_naive = std::max(worst_naive, std::abs(analytic[k] - naive[k]));
        }
    }
    return {worst_rel <= 1e-6 && worst_naive <= 1e-12,
            fmt("max relative error vs finite differences %.3g, max |backprop - naive| %.3g", worst_rel, worst_naive)};
}

Outcome convergence() {
    ExperimentConfig cfg;
    cfg.ising = {3, 1.0, 0.5};
    cfg.perturbation = {1, 0.1};
    const ModelInstance model = build_model({cfg.ising, cfg.perturbation}, cfg.beta);
    const OperatorMatrix target = target_unitary(model.hs, dilation_for(cfg, 1.0));

    OptimizerConfig opt;
    opt.method = OptimizerMethod::AdaptiveMoment;
    opt.learning_rate = 0.05;
    opt.max_iterations = 120;
    opt.target_fitness = 0.995;
    opt.init = InitMode::Zeros;
    const OptimizationTrace trace = optimize(target, entangler_for(cfg, 4), 120, 0.0035, opt);
    const int first = trace.first_reaching(0.995);
    return {first >= 0 && first <= 120, fmt("best fitness %.6f, first reached 0.995 at iteration %d", trace.best_fitness, first)};
}

Outcome full_scale(bool slow) {
    const double duration = circuit_duration(AnsatzParameters(400, 6, 0.0035));
    std::string detail = fmt("duration %.15g (%s)", duration, duration == 1.4 ? "exact" : "inexact");
    bool pass = duration == 1.4;
    if (!slow) return {pass, detail + " (compile skipped, pass --slow)"};

    ExperimentConfig cfg;
    cfg.ising = {5, 1.0, 0.5};
    cfg.perturbation = {1, 0.1};
    const ModelInstance model = build_model({cfg.ising, cfg.perturbation}, cfg.beta);
    const OperatorMatrix target = target_unitary(model.hs, dilation_for(cfg, 1.0));
    OptimizerConfig opt;
    opt.learning_rate = 0.02;
    opt.max_iterations = 2000;
    opt.target_fitness = 0.9995;
    opt.init = InitMode::Zeros;
    const OptimizationTrace trace = optimize(target, entangler_for(cfg, 6), 400, 0.0035, opt);
    pass = pass && trace.best_fitness >= 0.9995;
    return {pass, detail + fmt(", fitness %.6f after %zu iterations", trace.best_fitness, trace.iterations.size() - 1)};
}

Outcome backprop_scaling() {
    std::mt19937_64 rng(9);
    const Entangler ent = make_entangler(build_entangler_generator(CouplingTable::synthetic_default().restricted(5)), 0.0035);
    const OperatorMatrix target = oracle::random_unitary(32, rng);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);

    auto best_time = [&](int layers) {
        AnsatzParameters p(layers, 5, 0.0035);
        for (double &x : p.theta) x = angle(rng);
        double best = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < 9; ++rep) {
            const auto start = std::chrono::steady_clock::now();
            const FitnessAndGradient fg = fitness_and_gradient(p, target, ent);
            const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
            if (!std::isfinite(fg.fitness)) return std::numeric_limits<double>::quiet_NaN();
            best = std::min(best, took.count());
        }
        return best;
    };
    const double t100 = best_time(100), t200 = best_time(200);
    const double ratio = t200 / t100;
    return {ratio <= 2.5, fmt("t(L=100) %.4g s, t(L=200) %.4g s, ratio %.3f", t100, t200, ratio)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Relative path -> contents of every CSV and JSON file below `root`, with `root` itself masked
/// (manifests record the output directory, which differs between the two runs).
std::vector<std::pair<std::string, std::string>> outputs_of(const fs::path &root) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto &entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), root).generic_string();
        const std::string ext = entry.path().extension().string();
        if (ext != ".csv" && ext != ".json") continue;
        std::string text = slurp(entry.path());
        const std::string dir = root.string();
        for (std::size_t at = text.find(dir); at != std::string::npos; at = text.find(dir, at)) text.replace(at, dir.size(), "<out>");
        files.emplace_back(rel, std::move(text));
    }
    std::sort(files.begin(), files.end());
    return files;
}

Outcome determinism() {
    const fs::path dir = scratch_dir("determinism");
    const std::string base = R"("model": {"n_sites": 2, "coupling": 1.0, "field": 0.5, "perturbation_index": 1, "kappa": 0.1},
  "ansatz": {"layers": 40, "t_s": 0.0035},
  "optimizer": {"method": "adaptive-moment", "learning_rate": 0.05, "max_iterations": 60, "target_fitness": 0.999, "seed": 3, "init": "random-uniform", "init_range": 0.5},)";
    const std::vector<std::pair<std::string, std::string>> runs = {
        {"le-curve", R"("time_grid": {"t_start": 0, "t_end": 1, "t_step": 0.5}, "sweep": {"field": [0.1, 1.5]}, "workers": 2)"},
        {"avg-le", R"("time_grid": {"t_start": 0, "t_end": 20, "t_step": 0.5}, "average_window": {"tau": 10, "T": 10},
  "dilation": {"eta0": 5.0}, "sweep": {"field": [0.1, 1.5]}, "simulation": {"mode": "exact", "stride": 20}, "workers": 2)"},
        {"layer-study", R"("layer_study": {"n_qubits": [2], "f_targets": [0.99], "restarts": 2, "max_layers": 32, "time": 1.0, "init": "random-uniform"}, "workers": 2)"},
        {"convergence-study", R"("convergence_study": {"n_qubits": [2, 3], "layers": [40], "time": 1.0, "report_level": 0.99}, "workers": 2)"},
        {"compile-gate", R"("compile": {"time": 1.0})"},
    };

    bool pass = true;
    std::string detail;
    for (const auto &[sub, extra] : runs) {
        const fs::path config = dir / (sub + ".json");
        std::ofstream(config) << "{\n  " << base << "\n  " << extra << "\n}\n";
        std::vector<std::vector<std::pair<std::string, std::string>>> produced;
        int exit_code = 0;
        for (int run = 0; run < 2; ++run) {
            const fs::path out = dir / (sub + "_run" + std::to_string(run));
            const std::string cmd = std::string("\"") + NHSIM_CLI_PATH + "\" --config \"" + config.string() + "\" --out \"" + out.string() +
                                    "\" " + sub + " > \"" + (out.string() + ".log") + "\" 2>&1";
            const int rc = std::system(cmd.c_str());
            // budget exhaustion is an ordinary outcome for these tiny runs
            if (rc != 0 && !(WIFEXITED(rc) && WEXITSTATUS(rc) == 4)) exit_code = rc;
            produced.push_back(fs::exists(out) ? outputs_of(out) : decltype(produced)::value_type{});
        }
        const bool same = !produced[0].empty() && produced[0] == produced[1];
        pass = pass && same && exit_code == 0;
        detail += fmt("%s%s:%zu files%s", detail.empty() ? "" : " ", sub.c_str(), produced[0].size(), same ? "" : "(differ)");
        if (exit_code != 0) detail += fmt("(exit %d)", WIFEXITED(exit_code) ? WEXITSTATUS(exit_code) : -1);
    }
    return {pass, detail};
}

} // namespace

int main(int argc, char **argv) {
    bool slow = false;
    for (int i = 1; i < argc; ++i) slow = slow || std::string_view(argv[i]) == "--slow";
    if (const char *env = std::getenv("NHSIM_ACCEPTANCE_SLOW")) slow = slow || std::string_view(env) == "1";

    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, dilation_correctness}, {2, hermitian_limit}, {3, phase_bands},       {4, boundary_dependence}, {5, average_transition},
        {6, gradient_exactness},   {7, convergence},     {8, [slow] { return full_scale(slow); }}, {9, backprop_scaling},
        {10, determinism},
    };

    int failed = 0;
    for (const auto &[id, run] : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception &e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
        std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), took.count());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
