#include "nhsim/dilation.hpp"

#include "nhsim/errors.hpp"

#include <cmath>
#include <sstream>

namespace nhsim {

void DilationConfig::validate() const {
    if (!(eta0 > 0.0)) throw Error(ErrorKind::ConfigError, "eta0 must be positive");
    if (!(positivity_margin > 0.0)) throw Error(ErrorKind::ConfigError, "positivity_margin must be positive");
    if (segments < 1) throw Error(ErrorKind::ConfigError, "segments must be >= 1");
    if (!(total_time >= 0.0)) throw Error(ErrorKind::ConfigError, "total_time must be non-negative");
}

int DilationConfig::segments_for(double total_time, double per_unit_time) {
    const double raw = std::ceil(total_time * per_unit_time - 1e-9);
    return std::max(1, static_cast<int>(raw));
}

OperatorMatrix metric_at(const OperatorMatrix &hs, double t, const DilationConfig &cfg) {
    const OperatorMatrix forward = expm_general(kI * t * hs); // e^{i Hs t}
    const double m0 = 1.0 + cfg.eta0 * cfg.eta0;
    return hermitian_part(m0 * (forward.adjoint() * forward));
}

OperatorMatrix metric_rate(const OperatorMatrix &hs, const OperatorMatrix &metric) {
    return kI * (metric * hs - hs.adjoint() * metric);
}

OperatorMatrix eta_at(const OperatorMatrix &metric, const DilationConfig &cfg) {
    const OperatorMatrix shifted = metric - identity(metric.rows());
    const HermitianEigen eig = herm_eig(shifted);
    if (eig.values(0) < cfg.positivity_margin) {
        std::ostringstream os;
        os << "min eig(M - I) = " << eig.values(0) << " below margin " << cfg.positivity_margin
           << "; increase eta0 or shorten the time horizon";
        throw Error(ErrorKind::PositivityLost, os.str());
    }
    const Eigen::VectorXd roots = eig.values.cwiseSqrt();
    return hermitian_part(eig.vectors * roots.cast<cplx>().asDiagonal() * eig.vectors.adjoint());
}

OperatorMatrix eta_dot_at(const OperatorMatrix &eta, const OperatorMatrix &metric_dot) {
    const HermitianEigen eig = herm_eig(eta);
    const OperatorMatrix rotated = eig.vectors.adjoint() * metric_dot * eig.vectors;
    OperatorMatrix solved(rotated.rows(), rotated.cols());
    for (Eigen::Index a = 0; a < rotated.rows(); ++a) {
        for (Eigen::Index b = 0; b < rotated.cols(); ++b) {
            const double denom = eig.values(a) + eig.values(b);
            if (denom < 1e-12) throw Error(ErrorKind::SingularEta, "eta has (near) zero eigenvalue pairs");
            solved(a, b) = rotated(a, b) / denom;
        }
    }
    return hermitian_part(eig.vectors * solved * eig.vectors.adjoint());
}

DilationFrame dilated_hamiltonian(const OperatorMatrix &hs, double t, const DilationConfig &cfg) {
    DilationFrame frame;
    frame.time = t;
    frame.metric = metric_at(hs, t, cfg);
    frame.eta = eta_at(frame.metric, cfg);
    frame.eta_dot = eta_dot_at(frame.eta, metric_rate(hs, frame.metric));

    const OperatorMatrix metric_inv = frame.metric.llt().solve(identity(frame.metric.rows()));
    frame.lambda_block = (hs + (kI * frame.eta_dot + frame.eta * hs) * frame.eta) * metric_inv;
    frame.gamma_block = kI * (hs * frame.eta - frame.eta * hs - kI * frame.eta_dot) * metric_inv;

    const OperatorMatrix sigma_z = pauli(PauliAxis::Z);
    OperatorMatrix joint = kron(frame.lambda_block, identity(2)) + kron(frame.gamma_block, sigma_z);
    const double defect = hermiticity_defect(joint);
    if (defect > 1e-6) {
        std::ostringstream os;
        os << "dilated Hamiltonian at t = " << t << " has Hermiticity defect " << defect;
        throw Error(ErrorKind::NotHermitian, os.str());
    }
    frame.dilated_h = hermitian_part(joint);
    return frame;
}

OperatorMatrix target_unitary(const OperatorMatrix &hs, const DilationConfig &cfg) {
    cfg.validate();
    const Eigen::Index dim = 2 * hs.rows();
    OperatorMatrix u = identity(dim);
    if (cfg.total_time == 0.0) return u;
    const double dt = cfg.total_time / cfg.segments;
    const double offset = cfg.rule == SamplingRule::Midpoint ? 0.5 : 0.0;
    for (int m = 1; m <= cfg.segments; ++m) {
        const double tm = (m - offset) * dt;
        const DilationFrame frame = dilated_hamiltonian(hs, tm, cfg);
        u = expm_hermitian(frame.dilated_h, -kI * dt) * u;
    }
    return u;
}

} // namespace nhsim
