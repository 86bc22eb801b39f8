#pragma once

#include "nhsim/operator_core.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <utility>

namespace nhsim {

/// Open-boundary transverse-field Ising chain.
struct IsingSpec {
    int n_sites = 1;
    double coupling = 1.0; // J
    double field = 0.0;    // g >= 0

    void validate() const;
};

/// Non-Hermitian perturbation kappa * D_n, with n 1-based.
struct PerturbationSpec {
    int index = 1;
    double strength = 0.0;
};

/// Pairwise zz couplings of the hardware entangler. Stored 0-based with i < j.
class CouplingTable {
  public:
    CouplingTable() = default;
    explicit CouplingTable(int n_qubits);

    /// Declares J for the pair (i, j), 0-based. Order of i, j is irrelevant.
    void set(int i, int j, double value);
    [[nodiscard]] double get(int i, int j) const;

    [[nodiscard]] int n_qubits() const noexcept { return n_qubits_; }
    [[nodiscard]] const std::map<std::pair<int, int>, double> &entries() const noexcept { return entries_; }

    /// The first `n` qubits and the couplings among them.
    [[nodiscard]] CouplingTable restricted(int n) const;

    /// File layout: {"n_qubits": N, "couplings": [[i, j, J], ...]} with 1-based i, j.
    [[nodiscard]] nlohmann::json to_json() const;
    static CouplingTable from_json(const nlohmann::json &doc);
    static CouplingTable load(const std::filesystem::path &path);

    /// Seven-qubit synthetic table shipped as data/couplings_default.json.
    /// The values are illustrative and are not measured molecular couplings.
    static CouplingTable synthetic_default();

    friend bool operator==(const CouplingTable &, const CouplingTable &) = default;

  private:
    int n_qubits_ = 0;
    std::map<std::pair<int, int>, double> entries_;
};

/// H0 = -J sum_{n<N} x_n x_{n+1} + g sum_n z_n.
OperatorMatrix build_ising(const IsingSpec &spec);

/// D_n = prod_{l<n}(-z_l) x_n - i prod_{l<N-n+1}(-z_l) y_{N-n+1}, sites 1-based.
OperatorMatrix build_Dn(int n_sites, int n);

/// D = (1/2) sqrt(1 - g^2) sum_n g^{n-1} D_n; requires 0 <= g < 1.
OperatorMatrix build_D(int n_sites, double g);

/// H0 + kappa D_n. Warns on stderr when |kappa| >= g.
OperatorMatrix build_Hs(const IsingSpec &ising, const PerturbationSpec &pert);

/// H_int = sum_{i<j} pi J_ij z_i z_j / 2 (diagonal).
OperatorMatrix build_entangler_generator(const CouplingTable &table);

/// exp(-beta H0) / Tr, evaluated in the eigenbasis with the ground energy shifted out.
OperatorMatrix thermal_state(const OperatorMatrix &h0, double beta);

/// Silences the kappa >= g warning (tests and sweeps that exercise it on purpose).
void set_model_warnings(bool enabled) noexcept;

} // namespace nhsim
