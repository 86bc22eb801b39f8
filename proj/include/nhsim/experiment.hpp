#pragma once

#include "nhsim/dilated_circuit.hpp"
#include "nhsim/dilation.hpp"
#include "nhsim/model_hamiltonians.hpp"
#include "nhsim/variational.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nhsim {

struct TimeGrid {
    double t_start = 0.0;
    double t_end = 20.0;
    double t_step = 0.5;

    /// t_start + k t_step for every k with the point not past t_end (1e-9 slack).
    [[nodiscard]] std::vector<double> points() const;
};

struct AverageWindow {
    double tau = 500.0;
    double length = 500.0; // T
};

enum class SimulationMode {
    Vqa,   // compile each target with the variational ansatz, then run the dilated circuit
    Exact, // run the dilated circuit with the exact target unitary
    None,  // theory path only
};

struct SimulationConfig {
    SimulationMode mode = SimulationMode::Vqa;
    int stride = 1; // simulate every stride-th grid point
    bool warm_start = false;
};

struct AnsatzConfig {
    int layers = 150;
    double t_s = 0.0035;
    std::optional<std::string> coupling_table; // path; built-in synthetic table when absent
};

struct SweepSpec {
    std::vector<double> fields;
    std::vector<int> n_sites;
    std::vector<int> perturbation_indices;
};

struct LayerStudyConfig {
    std::vector<int> n_qubits{2, 3, 4};
    std::vector<double> f_targets{0.99, 0.999, 0.9999};
    int restarts = 5;
    int max_layers = 256;
    double time = 1.0;
    InitMode init = InitMode::RandomUniform;
};

struct ConvergenceStudyConfig {
    std::vector<int> n_qubits{2, 3, 4};
    std::vector<int> layers{120, 120, 120}; // one entry per n_qubits entry, or a single shared entry
    double time = 1.0;
    double report_level = 0.995;
};

struct CompileTargetConfig {
    double time = 1.0;
    std::optional<std::string> matrix_file; // raw target instead of the model
};

struct ExperimentConfig {
    IsingSpec ising{5, 1.0, 0.1};
    PerturbationSpec perturbation{1, 0.1};
    double beta = 10.0;
    DilationConfig dilation;
    double segments_per_unit_time = 200.0;
    AnsatzConfig ansatz;
    OptimizerConfig optimizer;
    TimeGrid time_grid;
    std::optional<AverageWindow> average_window;
    SweepSpec sweep;
    SimulationConfig simulation;
    LayerStudyConfig layer_study;
    ConvergenceStudyConfig convergence;
    CompileTargetConfig compile;
    std::string output = "out";
    std::optional<std::string> cache_dir; // defaults to <output>/cache
    int workers = 1;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static ExperimentConfig from_json(const nlohmann::json &doc);
    static ExperimentConfig load(const std::filesystem::path &path);

    [[nodiscard]] CouplingTable coupling_table() const;
    [[nodiscard]] std::filesystem::path cache_path() const;
};

/// One point of the sweep (cartesian product of the sweep lists, defaults from the base model).
struct SweepPoint {
    IsingSpec ising;
    PerturbationSpec perturbation;

    [[nodiscard]] std::string label() const;
};

std::vector<SweepPoint> sweep_points(const ExperimentConfig &cfg);

/// H0, Hs and the thermal initial state for one sweep point.
struct ModelInstance {
    OperatorMatrix h0;
    OperatorMatrix hs;
    OperatorMatrix rho0;
};

ModelInstance build_model(const SweepPoint &point, double beta);

/// Dilation settings for evolving to time t with the configured slice density.
DilationConfig dilation_for(const ExperimentConfig &cfg, double t);

/// Entangler for an n-qubit register taken from the configured table.
Entangler entangler_for(const ExperimentConfig &cfg, int n_qubits);

/// Non-fatal per-task outcomes collected while running.
struct RunReport {
    std::vector<std::string> warnings;
    std::vector<nlohmann::json> failures; // numerical breakdowns
    int numerical_failures = 0;
    int budget_exhausted = 0;
    std::vector<std::string> outputs;
    std::vector<std::string> cache_keys;
};

/// Content-addressed store of compiled gates; safe for concurrent use.
class GateCache {
  public:
    explicit GateCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    [[nodiscard]] std::optional<CompiledGate> find(const std::string &key) const;
    void store(const std::string &key, const CompiledGate &gate) const;

    [[nodiscard]] int hits() const noexcept { return hits_; }
    [[nodiscard]] int misses() const noexcept { return misses_; }

    /// Cached gate for `key`, or the result of `compile` stored under it.
    CompiledGate get_or_compile(const std::string &key, const std::function<CompiledGate()> &compile) const;

  private:
    std::filesystem::path dir_;
    mutable std::atomic<int> hits_{0};
    mutable std::atomic<int> misses_{0};
};

/// Hex digest over the canonical JSON of everything that determines a compiled gate.
std::string compile_cache_key(const ExperimentConfig &cfg, const SweepPoint &point, double t, int layers, const std::string &extra = {});

/// Runs fn(i) for i in [0, n) on at most `workers` threads. fn must not throw.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn);

/// Shortest round-trip text for a double; empty for NaN.
std::string format_number(double value);

void write_echo_csv(const std::filesystem::path &path, const EchoSeries &series);

struct LeCurveResult {
    std::vector<SweepPoint> points;
    std::vector<EchoSeries> series;
};

LeCurveResult run_le_curve(const ExperimentConfig &cfg, RunReport &report);

struct AverageRow {
    int n_sites = 0;
    double field = 0.0;
    int index = 1;
    double avg_theory = 0.0;
    double avg_simulated = 0.0; // NaN when the simulated path is off or failed
};

std::vector<AverageRow> run_avg_le_sweep(const ExperimentConfig &cfg, RunReport &report);

struct LayerStudyRow {
    int n_qubits = 0;
    double f_target = 0.0;
    double mean_layers = 0.0;
    double std_layers = 0.0;
    int exhausted = 0;
    std::vector<int> per_restart; // -1 when the budget ran out
};

std::vector<LayerStudyRow> run_layer_study(const ExperimentConfig &cfg, RunReport &report);

struct ConvergenceRow {
    int n_qubits = 0;
    int layers = 0;
    OptimizationTrace trace;
    int first_reaching = -1;
};

std::vector<ConvergenceRow> run_convergence_study(const ExperimentConfig &cfg, RunReport &report);

struct CompileOutcome {
    CompiledGate gate;
    double duration = 0.0;
    bool cache_hit = false;
    std::filesystem::path written;
};

CompileOutcome compile_gate(const ExperimentConfig &cfg, RunReport &report);

/// Dense matrix file: {"dim": d, "real": [[...]], "imag": [[...]]}.
OperatorMatrix load_matrix(const std::filesystem::path &path);
void save_matrix(const std::filesystem::path &path, const OperatorMatrix &m);

/// Writes <output>/<name>_manifest.json with the resolved config and the report.
void write_manifest(const ExperimentConfig &cfg, const std::string &name, const RunReport &report);

} // namespace nhsim
