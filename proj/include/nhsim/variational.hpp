#pragma once

#include "nhsim/operator_core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nhsim {

enum class RotationAxis { X, Y };

/// R(angle) = exp(-i angle sigma / 2).
Gate2 rotation_gate(RotationAxis axis, double angle);

/// Angles of the layered ansatz. Layer, qubit, slot are 0-based here; slot 0 and 2 are x, slot 1 is y.
struct AnsatzParameters {
    int layers = 0;
    int n_qubits = 0;
    double t_s = 0.0;
    std::vector<double> theta; // layer-major, then qubit, then slot

    AnsatzParameters() = default;
    AnsatzParameters(int layers, int n_qubits, double t_s);

    [[nodiscard]] std::size_t index(int layer, int qubit, int slot) const noexcept {
        return (static_cast<std::size_t>(layer) * n_qubits + qubit) * 3 + slot;
    }
    [[nodiscard]] double &at(int layer, int qubit, int slot) { return theta[index(layer, qubit, slot)]; }
    [[nodiscard]] double at(int layer, int qubit, int slot) const { return theta[index(layer, qubit, slot)]; }
    [[nodiscard]] std::size_t size() const noexcept { return theta.size(); }

    void validate() const;
};

/// R_x(slot 2) R_y(slot 1) R_x(slot 0) for one qubit in one layer.
Gate2 qubit_block(const AnsatzParameters &params, int layer, int qubit);

/// Fixed diagonal entangler exp(-i H_int t_s), stored as its diagonal.
class Entangler {
  public:
    Entangler() = default;
    explicit Entangler(Eigen::VectorXcd phases);

    [[nodiscard]] const Eigen::VectorXcd &phases() const noexcept { return phases_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return phases_.size(); }
    [[nodiscard]] OperatorMatrix matrix() const { return phases_.asDiagonal(); }

    static Entangler identity(int n_qubits);

  private:
    Eigen::VectorXcd phases_;
};

/// exp(-i generator t_s), evaluated elementwise on the diagonal; rejects non-diagonal or non-real generators.
Entangler make_entangler(const OperatorMatrix &generator, double t_s);

/// Dense form of make_entangler.
OperatorMatrix entangler(const OperatorMatrix &generator, double t_s);

/// U_L ... U_1 with U_l = U_ent (R^1 (x) ... (x) R^N).
OperatorMatrix ansatz_unitary(const AnsatzParameters &params, const Entangler &ent);

/// |Tr(target^dag U)|^2 / dim^2.
double fitness(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent);

struct FitnessAndGradient {
    double fitness = 0.0;
    std::vector<double> gradient; // same layout as AnsatzParameters::theta
};

/// Analytic gradient with cached prefix (forward) and suffix (backward) products: one dense product per layer.
FitnessAndGradient fitness_and_gradient(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent);

std::vector<double> gradient(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent);

/// Layer count times entangler duration; single-qubit rotations count as instantaneous.
double circuit_duration(const AnsatzParameters &params);

enum class OptimizerMethod { PlainGradient, AdaptiveMoment };
enum class InitMode { Zeros, RandomUniform };

struct OptimizerConfig {
    OptimizerMethod method = OptimizerMethod::AdaptiveMoment;
    double learning_rate = 0.05;
    int max_iterations = 500;
    double target_fitness = 0.999;
    std::uint64_t seed = 0;
    InitMode init = InitMode::Zeros;
    double init_range = 3.141592653589793; // a in U(-a, a)

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    double fitness = 0.0;
    double gradient_max = 0.0;
    double wall_seconds = 0.0;
};

struct OptimizationTrace {
    std::vector<IterationRecord> iterations;
    AnsatzParameters final_theta; // best parameters seen
    double best_fitness = 0.0;
    bool converged = false;

    /// First iteration whose fitness reached `level`, or -1.
    [[nodiscard]] int first_reaching(double level) const;
};

/// Initial angles for `cfg.init` (deterministic in cfg.seed).
AnsatzParameters initial_parameters(int layers, int n_qubits, double t_s, const OptimizerConfig &cfg);

/// Gradient ascent on the fitness from `start`; stops once fitness >= target_fitness or after max_iterations updates.
OptimizationTrace optimize_from(AnsatzParameters start, const OperatorMatrix &target, const Entangler &ent, const OptimizerConfig &cfg);

OptimizationTrace optimize(const OperatorMatrix &target, const Entangler &ent, int layers, double t_s, const OptimizerConfig &cfg);

/// Persisted compiled gate.
struct CompiledGate {
    AnsatzParameters params;
    std::string target_hash;
    double fitness_achieved = 0.0;
    int iterations_used = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static CompiledGate from_json(const nlohmann::json &doc);
    void save(const std::filesystem::path &path) const;
    static CompiledGate load(const std::filesystem::path &path);
};

/// Stable hex digest of a matrix's entries (FNV-1a over the IEEE bytes).
std::string matrix_hash(const OperatorMatrix &m);

} // namespace nhsim
