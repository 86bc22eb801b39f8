#pragma once

#include "nhsim/operator_core.hpp"

namespace nhsim {

enum class SamplingRule {
    Endpoint, // H_sa(m dt), first order
    Midpoint, // H_sa((m - 1/2) dt), second order
};

struct DilationConfig {
    double eta0 = 2.0;
    double positivity_margin = 1e-6;
    int segments = 200;
    double total_time = 1.0;
    SamplingRule rule = SamplingRule::Endpoint;

    void validate() const;

    /// Segment count at `per_unit_time` slices per unit time (at least one).
    [[nodiscard]] static int segments_for(double total_time, double per_unit_time);
};

/// Everything the dilation needs at one instant. The ancilla is the last tensor factor of dilated_h.
struct DilationFrame {
    double time = 0.0;
    OperatorMatrix metric;       // M(t)
    OperatorMatrix eta;          // principal root of M(t) - I
    OperatorMatrix eta_dot;      // d eta / dt
    OperatorMatrix lambda_block; // Lambda(t)
    OperatorMatrix gamma_block;  // Gamma(t)
    OperatorMatrix dilated_h;    // Lambda (x) I + Gamma (x) z
};

/// M(t) = e^{-i Hs^dag t} (1 + eta0^2) e^{i Hs t}; solves i dM/dt = Hs^dag M - M Hs.
OperatorMatrix metric_at(const OperatorMatrix &hs, double t, const DilationConfig &cfg);

/// dM/dt = i (M Hs - Hs^dag M).
OperatorMatrix metric_rate(const OperatorMatrix &hs, const OperatorMatrix &metric);

/// sqrt(M - I); throws PositivityLost when min eig(M - I) < cfg.positivity_margin.
OperatorMatrix eta_at(const OperatorMatrix &metric, const DilationConfig &cfg);

/// Hermitian X with X eta + eta X = metric_dot, solved in the eigenbasis of eta.
OperatorMatrix eta_dot_at(const OperatorMatrix &eta, const OperatorMatrix &metric_dot);

DilationFrame dilated_hamiltonian(const OperatorMatrix &hs, double t, const DilationConfig &cfg);

/// Time-ordered prod_m exp(-i dt H_sa(t_m)) over cfg.segments slices of cfg.total_time, latest factor leftmost.
OperatorMatrix target_unitary(const OperatorMatrix &hs, const DilationConfig &cfg);

} // namespace nhsim
