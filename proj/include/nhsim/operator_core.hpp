#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <vector>

namespace nhsim {

using cplx = std::complex<double>;
using OperatorMatrix = Eigen::MatrixXcd;
using Gate2 = Eigen::Matrix2cd;

inline constexpr cplx kI{0.0, 1.0};

enum class PauliAxis { I, X, Y, Z };

/// coefficient * (factor[0] (x) factor[1] (x) ...); site 0 is the leftmost tensor factor.
struct PauliTerm {
    cplx coefficient{1.0, 0.0};
    std::vector<PauliAxis> factors;
};

Gate2 pauli(PauliAxis axis);

OperatorMatrix pauli_to_matrix(const PauliTerm &term);

/// Symbolic product a*b; sites multiply pairwise and phases accumulate into the coefficient.
PauliTerm multiply(const PauliTerm &a, const PauliTerm &b);

/// Single-site operator `op` on `site` of an `n_sites` register.
OperatorMatrix embed(const Gate2 &op, int site, int n_sites);

OperatorMatrix kron(const OperatorMatrix &a, const OperatorMatrix &b);
OperatorMatrix identity(Eigen::Index dim);

[[nodiscard]] bool is_power_of_two(Eigen::Index dim) noexcept;
[[nodiscard]] int qubit_count(Eigen::Index dim);

/// Largest entry of |A - A^dag|.
[[nodiscard]] double hermiticity_defect(const OperatorMatrix &a);
/// Largest entry of |A^dag A - I|.
[[nodiscard]] double unitarity_defect(const OperatorMatrix &a);
[[nodiscard]] bool is_hermitian(const OperatorMatrix &a, double tol = 1e-10);
[[nodiscard]] bool is_unitary(const OperatorMatrix &a, double tol = 1e-10);

[[nodiscard]] double max_abs(const OperatorMatrix &a);
[[nodiscard]] double spectral_norm(const OperatorMatrix &a);

OperatorMatrix hermitian_part(const OperatorMatrix &a);

struct HermitianEigen {
    Eigen::VectorXd values; // ascending
    OperatorMatrix vectors; // columns
};

/// Throws NotHermitian when max|A - A^dag| > 1e-10.
HermitianEigen herm_eig(const OperatorMatrix &a);

/// V diag(exp(scale * lambda)) V^dag for Hermitian A.
OperatorMatrix expm_hermitian(const OperatorMatrix &a, cplx scale);

/// e^A for a general square matrix (scaling and squaring, [13/13] Pade).
OperatorMatrix expm_general(const OperatorMatrix &a);

/// Principal PSD root. Eigenvalues in [-1e-8, 0) are clamped to zero, below that NotPSD.
OperatorMatrix sqrtm_psd(const OperatorMatrix &a);

/// (1/2) sum |eig(a - b)| for Hermitian a, b.
[[nodiscard]] double trace_distance(const OperatorMatrix &a, const OperatorMatrix &b);

} // namespace nhsim
