#include "nhsim/variational.hpp"

#include "nhsim/errors.hpp"
#include "nhsim/hash.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>

namespace nhsim {

namespace {

void require_dims(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent) {
    const Eigen::Index dim = Eigen::Index{1} << params.n_qubits;
    if (ent.dim() != dim)
        throw Error(ErrorKind::DimensionMismatch, "entangler dimension " + std::to_string(ent.dim()) + " but ansatz has " +
                                                      std::to_string(params.n_qubits) + " qubits");
    if (target.rows() != dim || target.cols() != dim)
        throw Error(ErrorKind::DimensionMismatch, "target dimension " + std::to_string(target.rows()) + " but ansatz has " +
                                                      std::to_string(params.n_qubits) + " qubits");
}

// Qubit 0 is the most significant bit of the basis index.
Eigen::Index qubit_stride(int n_qubits, int qubit) { return Eigen::Index{1} << (n_qubits - 1 - qubit); }

// m <- (I (x) g (x) I) m
void apply_gate_left(OperatorMatrix &m, const Gate2 &g, int n_qubits, int qubit) {
    const Eigen::Index stride = qubit_stride(n_qubits, qubit);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i & stride) continue;
        const Eigen::Index j = i | stride;
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const cplx a = m(i, c), b = m(j, c);
            m(i, c) = g(0, 0) * a + g(0, 1) * b;
            m(j, c) = g(1, 0) * a + g(1, 1) * b;
        }
    }
}

// m <- m (I (x) g (x) I)
void apply_gate_right(OperatorMatrix &m, const Gate2 &g, int n_qubits, int qubit) {
    const Eigen::Index stride = qubit_stride(n_qubits, qubit);
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
        if (i & stride) continue;
        const Eigen::Index j = i | stride;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const cplx a = m(r, i), b = m(r, j);
            m(r, i) = a * g(0, 0) + b * g(1, 0);
            m(r, j) = a * g(0, 1) + b * g(1, 1);
        }
    }
}

// m <- U_l m
void apply_layer_left(OperatorMatrix &m, const std::vector<Gate2> &blocks, const Entangler &ent, int n_qubits) {
    for (int q = 0; q < n_qubits; ++q) apply_gate_left(m, blocks[q], n_qubits, q);
    m = ent.phases().asDiagonal() * m;
}

// m <- m U_l
void apply_layer_right(OperatorMatrix &m, const std::vector<Gate2> &blocks, const Entangler &ent, int n_qubits) {
    m = m * ent.phases().asDiagonal();
    for (int q = 0; q < n_qubits; ++q) apply_gate_right(m, blocks[q], n_qubits, q);
}

std::vector<Gate2> layer_blocks(const AnsatzParameters &params, int layer) {
    std::vector<Gate2> blocks(params.n_qubits);
    for (int q = 0; q < params.n_qubits; ++q) blocks[q] = qubit_block(params, layer, q);
    return blocks;
}

// sum over the other qubits of w[(rest, a), (rest, b)]
Gate2 qubit_environment(const OperatorMatrix &w, int n_qubits, int qubit) {
    const Eigen::Index stride = qubit_stride(n_qubits, qubit);
    Gate2 env = Gate2::Zero();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        if (i & stride) continue;
        const Eigen::Index j = i | stride;
        env(0, 0) += w(i, i);
        env(0, 1) += w(i, j);
        env(1, 0) += w(j, i);
        env(1, 1) += w(j, j);
    }
    return env;
}

} // namespace

Gate2 rotation_gate(RotationAxis axis, double angle) {
    const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
    Gate2 r;
    if (axis == RotationAxis::X)
        r << c, -kI * s, -kI * s, c;
    else
        r << c, -s, s, c;
    return r;
}

AnsatzParameters::AnsatzParameters(int layers_, int n_qubits_, double t_s_)
    : layers(layers_), n_qubits(n_qubits_), t_s(t_s_), theta(static_cast<std::size_t>(std::max(layers_, 0)) * std::max(n_qubits_, 0) * 3, 0.0) {
    validate();
}

void AnsatzParameters::validate() const {
    if (layers < 0) throw Error(ErrorKind::DomainError, "layer count must be non-negative");
    if (n_qubits < 1) throw Error(ErrorKind::DomainError, "ansatz needs at least one qubit");
    if (theta.size() != static_cast<std::size_t>(layers) * n_qubits * 3)
        throw Error(ErrorKind::DimensionMismatch, "theta has " + std::to_string(theta.size()) + " entries, expected L*N*3");
}

Gate2 qubit_block(const AnsatzParameters &params, int layer, int qubit) {
    return rotation_gate(RotationAxis::X, params.at(layer, qubit, 2)) * rotation_gate(RotationAxis::Y, params.at(layer, qubit, 1)) *
           rotation_gate(RotationAxis::X, params.at(layer, qubit, 0));
}

Entangler::Entangler(Eigen::VectorXcd phases) : phases_(std::move(phases)) {
    if (!is_power_of_two(phases_.size())) throw Error(ErrorKind::DimensionMismatch, "entangler dimension must be a power of two");
}

Entangler Entangler::identity(int n_qubits) { return Entangler(Eigen::VectorXcd::Ones(Eigen::Index{1} << n_qubits)); }

Entangler make_entangler(const OperatorMatrix &generator, double t_s) {
    if (generator.rows() != generator.cols()) throw Error(ErrorKind::DimensionMismatch, "entangler generator is not square");
    OperatorMatrix off = generator;
    off.diagonal().setZero();
    if (max_abs(off) > 0.0) throw Error(ErrorKind::DomainError, "entangler generator must be diagonal");
    if (generator.diagonal().imag().cwiseAbs().maxCoeff() > 1e-12)
        throw Error(ErrorKind::DomainError, "entangler generator must be real");
    Eigen::VectorXcd phases(generator.rows());
    for (Eigen::Index k = 0; k < phases.size(); ++k) phases(k) = std::exp(-kI * generator(k, k).real() * t_s);
    return Entangler(std::move(phases));
}

OperatorMatrix entangler(const OperatorMatrix &generator, double t_s) { return make_entangler(generator, t_s).matrix(); }

OperatorMatrix ansatz_unitary(const AnsatzParameters &params, const Entangler &ent) {
    params.validate();
    const Eigen::Index dim = Eigen::Index{1} << params.n_qubits;
    if (ent.dim() != dim) throw Error(ErrorKind::DimensionMismatch, "entangler does not match the ansatz register");
    OperatorMatrix u = identity(dim);
    for (int l = 0; l < params.layers; ++l) apply_layer_left(u, layer_blocks(params, l), ent, params.n_qubits);
    return u;
}

double fitness(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent) {
    require_dims(params, target, ent);
    const OperatorMatrix u = ansatz_unitary(params, ent);
    const double dim = static_cast<double>(u.rows());
    const cplx overlap = target.conjugate().cwiseProduct(u).sum();
    return std::min(1.0, std::norm(overlap) / (dim * dim));
}

FitnessAndGradient fitness_and_gradient(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent) {
    params.validate();
    require_dims(params, target, ent);
    const int n = params.n_qubits;
    const int layers = params.layers;
    const Eigen::Index dim = Eigen::Index{1} << n;
    const double norm = 1.0 / (static_cast<double>(dim) * static_cast<double>(dim));

    std::vector<std::vector<Gate2>> blocks(layers);
    for (int l = 0; l < layers; ++l) blocks[l] = layer_blocks(params, l);

    // Forward sweep: prefix[l] = U_{l-1} ... U_0.
    std::vector<OperatorMatrix> prefix(layers + 1);
    prefix[0] = identity(dim);
    for (int l = 0; l < layers; ++l) {
        prefix[l + 1] = prefix[l];
        apply_layer_left(prefix[l + 1], blocks[l], ent, n);
    }
    const cplx overlap = target.conjugate().cwiseProduct(prefix[layers]).sum();

    FitnessAndGradient out;
    out.fitness = std::min(1.0, std::norm(overlap) * norm);
    out.gradient.assign(params.size(), 0.0);

    // Backward sweep: suffix = target^dag U_{L-1} ... U_{l+1}; extended by one layer per step.
    OperatorMatrix suffix = target.adjoint();
    const Gate2 half_x = -0.5 * kI * pauli(PauliAxis::X);
    const Gate2 half_y = -0.5 * kI * pauli(PauliAxis::Y);
    for (int l = layers - 1; l >= 0; --l) {
        apply_layer_right(suffix, blocks[l], ent, n); // target^dag A_l U_l
        const OperatorMatrix w = prefix[l] * suffix;
        for (int q = 0; q < n; ++q) {
            const Gate2 env = qubit_environment(w, n, q);
            const Gate2 first = rotation_gate(RotationAxis::X, params.at(l, q, 0));
            const Gate2 &block = blocks[l][q];
            // R^dag dR/dtheta_k for the three slots
            const Gate2 k0 = half_x;
            const Gate2 k1 = first.adjoint() * half_y * first;
            const Gate2 k2 = block.adjoint() * half_x * block;
            const Gate2 *kernels[3] = {&k0, &k1, &k2};
            for (int slot = 0; slot < 3; ++slot) {
                const cplx d_overlap = (env * *kernels[slot]).trace();
                out.gradient[params.index(l, q, slot)] = 2.0 * std::real(std::conj(overlap) * d_overlap) * norm;
            }
        }
    }
    return out;
}

std::vector<double> gradient(const AnsatzParameters &params, const OperatorMatrix &target, const Entangler &ent) {
    return fitness_and_gradient(params, target, ent).gradient;
}

double circuit_duration(const AnsatzParameters &params) {
    // t_s is a short decimal; rounding the binary product to 15 significant digits returns the decimal
    // product (400 * 0.0035 gives 1.4, not 1.4000000000000001).
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", params.layers * params.t_s);
    return std::strtod(buf, nullptr);
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
    if (max_iterations < 0) throw Error(ErrorKind::ConfigError, "max_iterations must be non-negative");
    if (!(target_fitness > 0.0 && target_fitness <= 1.0)) throw Error(ErrorKind::ConfigError, "target_fitness must lie in (0, 1]");
    if (init == InitMode::RandomUniform && !(init_range > 0.0)) throw Error(ErrorKind::ConfigError, "init_range must be positive");
}

int OptimizationTrace::first_reaching(double level) const {
    for (const auto &rec : iterations)
        if (rec.fitness >= level) return rec.iteration;
    return -1;
}

AnsatzParameters initial_parameters(int layers, int n_qubits, double t_s, const OptimizerConfig &cfg) {
    AnsatzParameters params(layers, n_qubits, t_s);
    if (cfg.init == InitMode::RandomUniform) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> dist(-cfg.init_range, cfg.init_range);
        for (double &angle : params.theta) angle = dist(rng);
    }
    return params;
}

OptimizationTrace optimize_from(AnsatzParameters params, const OperatorMatrix &target, const Entangler &ent, const OptimizerConfig &cfg) {
    cfg.validate();
    params.validate();
    require_dims(params, target, ent);

    constexpr double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::vector<double> first_moment(params.size(), 0.0), second_moment(params.size(), 0.0);
    double beta1_power = 1.0, beta2_power = 1.0;

    OptimizationTrace trace;
    trace.final_theta = params;
    trace.best_fitness = -1.0;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 kick_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    for (int it = 0;; ++it) {
        const FitnessAndGradient eval = fitness_and_gradient(params, target, ent);
        double grad_max = 0.0;
        for (double g : eval.gradient) grad_max = std::max(grad_max, std::abs(g));
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        trace.iterations.push_back({it, eval.fitness, grad_max, elapsed});
        if (eval.fitness > trace.best_fitness) {
            trace.best_fitness = eval.fitness;
            trace.final_theta = params;
        }
        if (eval.fitness >= cfg.target_fitness) {
            trace.converged = true;
            break;
        }
        if (it >= cfg.max_iterations) break;

        // An exactly stationary start (zero angles against a diagonal target) never moves; nudge off it.
        if (grad_max < 1e-12) {
            std::uniform_real_distribution<double> kick(-1e-2, 1e-2);
            for (double &angle : params.theta) angle += kick(kick_rng);
            continue;
        }

        if (cfg.method == OptimizerMethod::PlainGradient) {
            for (std::size_t k = 0; k < params.size(); ++k) params.theta[k] += cfg.learning_rate * eval.gradient[k];
        } else {
            beta1_power *= beta1;
            beta2_power *= beta2;
            for (std::size_t k = 0; k < params.size(); ++k) {
                const double g = eval.gradient[k];
                first_moment[k] = beta1 * first_moment[k] + (1.0 - beta1) * g;
                second_moment[k] = beta2 * second_moment[k] + (1.0 - beta2) * g * g;
                const double m_hat = first_moment[k] / (1.0 - beta1_power);
                const double v_hat = second_moment[k] / (1.0 - beta2_power);
                params.theta[k] += cfg.learning_rate * m_hat / (std::sqrt(v_hat) + epsilon);
            }
        }
    }
    return trace;
}

OptimizationTrace optimize(const OperatorMatrix &target, const Entangler &ent, int layers, double t_s, const OptimizerConfig &cfg) {
    return optimize_from(initial_parameters(layers, qubit_count(target.rows()), t_s, cfg), target, ent, cfg);
}

nlohmann::json CompiledGate::to_json() const {
    return {{"L", params.layers},
            {"N", params.n_qubits},
            {"t_s", params.t_s},
            {"theta", params.theta},
            {"target_hash", target_hash},
            {"fitness_achieved", fitness_achieved},
            {"iterations_used", iterations_used}};
}

CompiledGate CompiledGate::from_json(const nlohmann::json &doc) {
    try {
        CompiledGate gate;
        gate.params.layers = doc.at("L").get<int>();
        gate.params.n_qubits = doc.at("N").get<int>();
        gate.params.t_s = doc.at("t_s").get<double>();
        gate.params.theta = doc.at("theta").get<std::vector<double>>();
        gate.params.validate();
        gate.target_hash = doc.at("target_hash").get<std::string>();
        gate.fitness_achieved = doc.at("fitness_achieved").get<double>();
        gate.iterations_used = doc.at("iterations_used").get<int>();
        return gate;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::ConfigError, std::string("compiled gate: ") + e.what());
    }
}

void CompiledGate::save(const std::filesystem::path &path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << to_json().dump(1) << '\n';
}

CompiledGate CompiledGate::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    return from_json(doc);
}

std::string matrix_hash(const OperatorMatrix &m) {
    const Eigen::Index dims[2] = {m.rows(), m.cols()};
    std::uint64_t state = fnv1a64(std::string_view(reinterpret_cast<const char *>(dims), sizeof dims));
    state = fnv1a64(std::string_view(reinterpret_cast<const char *>(m.data()), sizeof(cplx) * m.size()), state);
    return hex_digest(state);
}

} // namespace nhsim
