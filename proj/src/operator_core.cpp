#include "nhsim/operator_core.hpp"

#include "nhsim/errors.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace nhsim {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::NotHermitian: return "NotHermitian";
    case ErrorKind::NotPSD: return "NotPSD";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::PositivityLost: return "PositivityLost";
    case ErrorKind::SingularEta: return "SingularEta";
    case ErrorKind::BadState: return "BadState";
    case ErrorKind::VanishingBlock: return "VanishingBlock";
    case ErrorKind::RangeNotCovered: return "RangeNotCovered";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BudgetExhausted: return "BudgetExhausted";
    case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

Gate2 pauli(PauliAxis axis) {
    Gate2 m;
    switch (axis) {
    case PauliAxis::I: m << 1, 0, 0, 1; break;
    case PauliAxis::X: m << 0, 1, 1, 0; break;
    case PauliAxis::Y: m << 0, -kI, kI, 0; break;
    case PauliAxis::Z: m << 1, 0, 0, -1; break;
    }
    return m;
}

OperatorMatrix identity(Eigen::Index dim) { return OperatorMatrix::Identity(dim, dim); }

OperatorMatrix kron(const OperatorMatrix &a, const OperatorMatrix &b) {
    OperatorMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

OperatorMatrix pauli_to_matrix(const PauliTerm &term) {
    OperatorMatrix out = OperatorMatrix::Constant(1, 1, term.coefficient);
    for (PauliAxis axis : term.factors) out = kron(out, pauli(axis));
    return out;
}

namespace {

// sigma_a sigma_b = phase * sigma_c
std::pair<cplx, PauliAxis> site_product(PauliAxis a, PauliAxis b) {
    if (a == PauliAxis::I) return {1.0, b};
    if (b == PauliAxis::I) return {1.0, a};
    if (a == b) return {1.0, PauliAxis::I};
    // cyclic x->y->z gives +i, anticyclic gives -i
    const int ia = static_cast<int>(a), ib = static_cast<int>(b);
    const int ic = 6 - ia - ib; // X=1, Y=2, Z=3
    const bool cyclic = (ib - ia + 3) % 3 == 1;
    return {cyclic ? kI : -kI, static_cast<PauliAxis>(ic)};
}

} // namespace

PauliTerm multiply(const PauliTerm &a, const PauliTerm &b) {
    if (a.factors.size() != b.factors.size())
        throw Error(ErrorKind::DimensionMismatch, "Pauli terms act on different register sizes");
    PauliTerm out{a.coefficient * b.coefficient, {}};
    out.factors.reserve(a.factors.size());
    for (std::size_t s = 0; s < a.factors.size(); ++s) {
        auto [phase, axis] = site_product(a.factors[s], b.factors[s]);
        out.coefficient *= phase;
        out.factors.push_back(axis);
    }
    return out;
}

OperatorMatrix embed(const Gate2 &op, int site, int n_sites) {
    if (site < 0 || site >= n_sites)
        throw Error(ErrorKind::IndexOutOfRange, "site " + std::to_string(site));
    const Eigen::Index left = Eigen::Index{1} << site;
    const Eigen::Index right = Eigen::Index{1} << (n_sites - site - 1);
    return kron(kron(identity(left), op), identity(right));
}

bool is_power_of_two(Eigen::Index dim) noexcept { return dim > 0 && (dim & (dim - 1)) == 0; }

int qubit_count(Eigen::Index dim) {
    if (!is_power_of_two(dim))
        throw Error(ErrorKind::DimensionMismatch, "dimension " + std::to_string(dim) + " is not a power of two");
    int q = 0;
    while ((Eigen::Index{1} << q) < dim) ++q;
    return q;
}

double max_abs(const OperatorMatrix &a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

double hermiticity_defect(const OperatorMatrix &a) {
    if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
    return max_abs(a - a.adjoint());
}

double unitarity_defect(const OperatorMatrix &a) {
    if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
    return max_abs(a.adjoint() * a - identity(a.rows()));
}

bool is_hermitian(const OperatorMatrix &a, double tol) { return hermiticity_defect(a) <= tol; }
bool is_unitary(const OperatorMatrix &a, double tol) { return unitarity_defect(a) <= tol; }

double spectral_norm(const OperatorMatrix &a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<OperatorMatrix> svd(a);
    return svd.singularValues()(0);
}

OperatorMatrix hermitian_part(const OperatorMatrix &a) { return 0.5 * (a + a.adjoint()); }

namespace {

// Hermiticity is judged relative to the operator scale so metrics with large entries are not rejected on roundoff.
void require_hermitian(const OperatorMatrix &a, const char *where) {
    if (a.rows() != a.cols())
        throw Error(ErrorKind::DimensionMismatch, std::string(where) + ": matrix is not square");
    const double defect = hermiticity_defect(a);
    if (defect > 1e-10 * std::max(1.0, max_abs(a))) {
        std::ostringstream os;
        os << where << ": max|A - A^dag| = " << defect;
        throw Error(ErrorKind::NotHermitian, os.str());
    }
}

} // namespace

HermitianEigen herm_eig(const OperatorMatrix &a) {
    require_hermitian(a, "herm_eig");
    Eigen::SelfAdjointEigenSolver<OperatorMatrix> solver(hermitian_part(a));
    return {solver.eigenvalues(), solver.eigenvectors()};
}

OperatorMatrix expm_hermitian(const OperatorMatrix &a, cplx scale) {
    const HermitianEigen eig = herm_eig(a);
    Eigen::VectorXcd phases(eig.values.size());
    for (Eigen::Index k = 0; k < phases.size(); ++k) phases(k) = std::exp(scale * eig.values(k));
    return eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
}

OperatorMatrix expm_general(const OperatorMatrix &a) {
    if (a.rows() != a.cols()) throw Error(ErrorKind::DimensionMismatch, "expm_general: matrix is not square");
    if (!a.allFinite()) throw Error(ErrorKind::Overflow, "expm_general: non-finite input");
    if (a.isZero(0.0)) return identity(a.rows());
    const Eigen::Index n = a.rows();
    if (n == 0) return a;

    static constexpr std::array<double, 14> b = {
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
        129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
        1323241920.0,        40840800.0,          960960.0,           16380.0,
        182.0,               1.0};
    constexpr double theta13 = 5.371920351148152;

    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
    if (squarings > 1000) throw Error(ErrorKind::Overflow, "expm_general: norm too large");

    const OperatorMatrix scaled = a / std::ldexp(1.0, squarings);
    const OperatorMatrix eye = identity(n);
    const OperatorMatrix a2 = scaled * scaled;
    const OperatorMatrix a4 = a2 * a2;
    const OperatorMatrix a6 = a4 * a2;

    const OperatorMatrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye;
    const OperatorMatrix u = scaled * u_inner;
    const OperatorMatrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye;

    OperatorMatrix result = (v - u).partialPivLu().solve(v + u);
    for (int s = 0; s < squarings; ++s) {
        result = result * result;
        if (!result.allFinite()) throw Error(ErrorKind::Overflow, "expm_general: overflow while squaring");
    }
    if (!result.allFinite()) throw Error(ErrorKind::Overflow, "expm_general: non-finite result");
    return result;
}

OperatorMatrix sqrtm_psd(const OperatorMatrix &a) {
    const HermitianEigen eig = herm_eig(a);
    if (eig.values.size() > 0 && eig.values(0) < -1e-8) {
        std::ostringstream os;
        os << "sqrtm_psd: min eigenvalue " << eig.values(0);
        throw Error(ErrorKind::NotPSD, os.str());
    }
    Eigen::VectorXd roots = eig.values.cwiseMax(0.0).cwiseSqrt();
    OperatorMatrix s = eig.vectors * roots.cast<cplx>().asDiagonal() * eig.vectors.adjoint();
    return hermitian_part(s);
}

double trace_distance(const OperatorMatrix &a, const OperatorMatrix &b) {
    const HermitianEigen eig = herm_eig(a - b);
    return 0.5 * eig.values.cwiseAbs().sum();
}

} // namespace nhsim
