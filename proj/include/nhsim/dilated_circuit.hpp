#pragma once

#include "nhsim/operator_core.hpp"

#include <optional>
#include <span>
#include <vector>

namespace nhsim {

struct DilatedRunResult {
    OperatorMatrix system_state;        // renormalized ancilla-0 block
    double success_probability = 0.0;   // block trace before renormalization
    std::optional<OperatorMatrix> joint_state;
};

struct EchoSeries {
    std::vector<double> times;
    std::vector<double> le_theory;
    std::vector<double> le_simulated;
    std::vector<double> fitness;
    std::vector<double> success_prob;
};

/// (I (x) R_x(pi/2) R_y(2 atan eta0)) (rho0 (x) |0><0|) (...)^dag, ancilla last.
OperatorMatrix prepare_joint_initial(const OperatorMatrix &rho0, double eta0);

/// Prepare, evolve, rotate the ancilla back with R_x(-pi/2), keep and renormalize the ancilla-0 block.
DilatedRunResult run_dilated(const OperatorMatrix &rho0, const OperatorMatrix &evolution, double eta0, bool keep_joint = false);

/// e^{-iHs t} rho0 e^{iHs^dag t}, normalized.
OperatorMatrix exact_nonhermitian_evolve(const OperatorMatrix &hs, const OperatorMatrix &rho0, double t);

/// Same map for every time of an evenly spaced grid, stepping with one propagator of the grid spacing.
std::vector<OperatorMatrix> exact_nonhermitian_trajectory(const OperatorMatrix &hs, const OperatorMatrix &rho0, double t_start,
                                                          double t_step, std::size_t count);

/// [Tr sqrt(sqrt(rho0) rho_t sqrt(rho0))]^2 clipped to [0, 1].
double loschmidt_echo(const OperatorMatrix &rho0, const OperatorMatrix &rho_t);

/// (1/T) integral of L over [tau, tau + T] by the trapezoid rule; window edges interpolate linearly.
double average_le(std::span<const double> times, std::span<const double> values, double tau, double window);
double average_le(const EchoSeries &series, double tau, double window, bool simulated = false);

} // namespace nhsim
