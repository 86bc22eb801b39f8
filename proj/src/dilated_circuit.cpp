#include "nhsim/dilated_circuit.hpp"

#include "nhsim/errors.hpp"
#include "nhsim/variational.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nhsim {

namespace {

void require_state(const OperatorMatrix &rho, const char *where) {
    if (rho.rows() != rho.cols() || rho.rows() == 0)
        throw Error(ErrorKind::BadState, std::string(where) + ": state must be a non-empty square matrix");
    const double trace_error = std::abs(rho.trace() - cplx{1.0, 0.0});
    if (trace_error > 1e-8) {
        std::ostringstream os;
        os << where << ": trace deviates from 1 by " << trace_error;
        throw Error(ErrorKind::BadState, os.str());
    }
}

OperatorMatrix ancilla_operator(const Gate2 &g, Eigen::Index system_dim) { return kron(identity(system_dim), g); }

OperatorMatrix normalized(const OperatorMatrix &rho) {
    const double tr = rho.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr)) throw Error(ErrorKind::Overflow, "state normalization failed");
    return hermitian_part(rho / tr);
}

} // namespace

OperatorMatrix prepare_joint_initial(const OperatorMatrix &rho0, double eta0) {
    require_state(rho0, "prepare_joint_initial");
    const double alpha = 2.0 * std::atan(eta0);
    const Gate2 prep = rotation_gate(RotationAxis::X, std::numbers::pi / 2) * rotation_gate(RotationAxis::Y, alpha);
    OperatorMatrix ground = OperatorMatrix::Zero(2, 2);
    ground(0, 0) = 1.0;
    const OperatorMatrix p = ancilla_operator(prep, rho0.rows());
    return hermitian_part(p * kron(rho0, ground) * p.adjoint());
}

DilatedRunResult run_dilated(const OperatorMatrix &rho0, const OperatorMatrix &evolution, double eta0, bool keep_joint) {
    if (evolution.rows() != 2 * rho0.rows() || evolution.cols() != evolution.rows())
        throw Error(ErrorKind::DimensionMismatch, "evolution must act on system (x) ancilla");
    OperatorMatrix joint = prepare_joint_initial(rho0, eta0);
    joint = evolution * joint * evolution.adjoint();
    const OperatorMatrix unprep = ancilla_operator(rotation_gate(RotationAxis::X, -std::numbers::pi / 2), rho0.rows());
    joint = unprep * joint * unprep.adjoint();

    // ancilla is the last factor: its |0> block sits on even indices
    const Eigen::Index dim = rho0.rows();
    OperatorMatrix block(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j < dim; ++j) block(i, j) = joint(2 * i, 2 * j);

    DilatedRunResult result;
    result.success_probability = block.trace().real();
    if (!(result.success_probability >= 1e-12))
        throw Error(ErrorKind::VanishingBlock, "ancilla-0 block trace is vanishing");
    result.system_state = hermitian_part(block / result.success_probability);
    if (keep_joint) result.joint_state = std::move(joint);
    return result;
}

OperatorMatrix exact_nonhermitian_evolve(const OperatorMatrix &hs, const OperatorMatrix &rho0, double t) {
    require_state(rho0, "exact_nonhermitian_evolve");
    if (hs.rows() != rho0.rows()) throw Error(ErrorKind::DimensionMismatch, "Hamiltonian and state dimensions differ");
    const OperatorMatrix propagator = expm_general(-kI * t * hs);
    return normalized(propagator * rho0 * propagator.adjoint());
}

std::vector<OperatorMatrix> exact_nonhermitian_trajectory(const OperatorMatrix &hs, const OperatorMatrix &rho0, double t_start,
                                                          double t_step, std::size_t count) {
    require_state(rho0, "exact_nonhermitian_trajectory");
    std::vector<OperatorMatrix> states;
    if (count == 0) return states;
    states.reserve(count);
    states.push_back(exact_nonhermitian_evolve(hs, rho0, t_start));
    const OperatorMatrix step = expm_general(-kI * t_step * hs);
    // Normalizing after every step keeps long runs finite; the map is projective, so this is exact.
    for (std::size_t k = 1; k < count; ++k) states.push_back(normalized(step * states.back() * step.adjoint()));
    return states;
}

double loschmidt_echo(const OperatorMatrix &rho0, const OperatorMatrix &rho_t) {
    if (rho0.rows() != rho_t.rows()) throw Error(ErrorKind::DimensionMismatch, "echo states differ in dimension");
    // Tr sqrt(sqrt(rho0) rho_t sqrt(rho0)) is the nuclear norm of sqrt(rho0) sqrt(rho_t). Singular values keep
    // tiny populations accurate where square roots of eigenvalues of the product would not.
    const OperatorMatrix product = sqrtm_psd(rho0) * sqrtm_psd(rho_t);
    const double trace_root = Eigen::JacobiSVD<OperatorMatrix>(product).singularValues().sum();
    return std::clamp(trace_root * trace_root, 0.0, 1.0);
}

namespace {

double interpolate(std::span<const double> times, std::span<const double> values, double t) {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    if (hi < times.size() && times[hi] == t) return values[hi];
    const std::size_t lo = hi - 1;
    const double w = (t - times[lo]) / (times[hi] - times[lo]);
    return (1.0 - w) * values[lo] + w * values[hi];
}

} // namespace

double average_le(std::span<const double> times, std::span<const double> values, double tau, double window) {
    if (times.size() != values.size()) throw Error(ErrorKind::DimensionMismatch, "times and values differ in length");
    if (!(window > 0.0)) throw Error(ErrorKind::DomainError, "averaging window must be positive");
    const double end = tau + window;
    constexpr double slack = 1e-9;
    if (times.size() < 2 || times.front() > tau + slack || times.back() < end - slack) {
        std::ostringstream os;
        os << "series does not cover [" << tau << ", " << end << "]";
        throw Error(ErrorKind::RangeNotCovered, os.str());
    }
    const double lo_t = std::max(tau, times.front());
    const double hi_t = std::min(end, times.back());

    std::vector<double> ts{lo_t};
    std::vector<double> vs{interpolate(times, values, lo_t)};
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] > lo_t && times[k] < hi_t) {
            ts.push_back(times[k]);
            vs.push_back(values[k]);
        }
    }
    ts.push_back(hi_t);
    vs.push_back(interpolate(times, values, hi_t));

    double integral = 0.0;
    for (std::size_t k = 1; k < ts.size(); ++k) integral += 0.5 * (vs[k] + vs[k - 1]) * (ts[k] - ts[k - 1]);
    return integral / window;
}

double average_le(const EchoSeries &series, double tau, double window, bool simulated) {
    return average_le(series.times, simulated ? series.le_simulated : series.le_theory, tau, window);
}

} // namespace nhsim
