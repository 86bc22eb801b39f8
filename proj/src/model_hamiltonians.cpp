#include "nhsim/model_hamiltonians.hpp"

#include "nhsim/errors.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

namespace nhsim {

namespace {

std::atomic<bool> g_warnings{true};

PauliTerm string_term(int n_sites) { return PauliTerm{1.0, std::vector<PauliAxis>(n_sites, PauliAxis::I)}; }

// prod_{l<site}(-z_l) * axis_site, 1-based site.
OperatorMatrix jordan_wigner_string(int n_sites, int site, PauliAxis axis) {
    PauliTerm term = string_term(n_sites);
    for (int l = 1; l < site; ++l) {
        term.factors[l - 1] = PauliAxis::Z;
        term.coefficient *= -1.0;
    }
    term.factors[site - 1] = axis;
    return pauli_to_matrix(term);
}

} // namespace

void set_model_warnings(bool enabled) noexcept { g_warnings = enabled; }

void IsingSpec::validate() const {
    if (n_sites < 1) throw Error(ErrorKind::DomainError, "Ising chain needs n_sites >= 1");
    if (!(field >= 0.0)) throw Error(ErrorKind::DomainError, "Ising field must be non-negative");
    if (!std::isfinite(coupling) || !std::isfinite(field)) throw Error(ErrorKind::DomainError, "Ising parameters must be finite");
}

CouplingTable::CouplingTable(int n_qubits) : n_qubits_(n_qubits) {
    if (n_qubits < 1) throw Error(ErrorKind::DomainError, "coupling table needs at least one qubit");
}

void CouplingTable::set(int i, int j, double value) {
    if (i == j) throw Error(ErrorKind::DomainError, "self-coupling on qubit " + std::to_string(i + 1));
    if (i < 0 || j < 0 || i >= n_qubits_ || j >= n_qubits_)
        throw Error(ErrorKind::IndexOutOfRange, "coupling pair outside the register");
    entries_[{std::min(i, j), std::max(i, j)}] = value;
}

double CouplingTable::get(int i, int j) const {
    auto it = entries_.find({std::min(i, j), std::max(i, j)});
    return it == entries_.end() ? 0.0 : it->second;
}

CouplingTable CouplingTable::restricted(int n) const {
    if (n < 1 || n > n_qubits_)
        throw Error(ErrorKind::IndexOutOfRange, "cannot restrict a " + std::to_string(n_qubits_) + "-qubit table to " + std::to_string(n));
    CouplingTable out(n);
    for (const auto &[pair, value] : entries_)
        if (pair.second < n) out.entries_[pair] = value;
    return out;
}

nlohmann::json CouplingTable::to_json() const {
    nlohmann::json couplings = nlohmann::json::array();
    for (const auto &[pair, value] : entries_) couplings.push_back({pair.first + 1, pair.second + 1, value});
    return {{"n_qubits", n_qubits_}, {"couplings", couplings}};
}

CouplingTable CouplingTable::from_json(const nlohmann::json &doc) {
    try {
        CouplingTable table(doc.at("n_qubits").get<int>());
        for (const auto &row : doc.at("couplings")) {
            if (!row.is_array() || row.size() != 3)
                throw Error(ErrorKind::ConfigError, "coupling rows must be [i, j, value]");
            table.set(row[0].get<int>() - 1, row[1].get<int>() - 1, row[2].get<double>());
        }
        return table;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::ConfigError, std::string("coupling table: ") + e.what());
    } catch (const Error &e) {
        if (e.kind() == ErrorKind::ConfigError) throw;
        throw Error(ErrorKind::ConfigError, e.what());
    }
}

CouplingTable CouplingTable::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open coupling table " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    return from_json(doc);
}

CouplingTable CouplingTable::synthetic_default() {
    // Must match data/couplings_default.json.
    static constexpr struct {
        int i, j;
        double value;
    } rows[] = {
        {1, 2, 72.0}, {2, 3, 41.0}, {3, 4, 69.0}, {4, 5, 38.0}, {5, 6, 55.0}, {6, 7, 47.0},
        {1, 3, 1.5},  {2, 4, 1.2},  {3, 5, 6.5},  {4, 6, 2.4},  {5, 7, 3.1},
        {1, 4, 7.0},  {2, 5, 0.8},  {3, 6, 1.1},  {4, 7, 0.6},
        {1, 5, 0.3},  {2, 6, 0.5},  {3, 7, 0.4},
        {1, 6, 0.2},  {2, 7, 0.3},
        {1, 7, 0.1},
    };
    CouplingTable table(7);
    for (const auto &row : rows) table.set(row.i - 1, row.j - 1, row.value);
    return table;
}

OperatorMatrix build_ising(const IsingSpec &spec) {
    spec.validate();
    const int n = spec.n_sites;
    const Eigen::Index dim = Eigen::Index{1} << n;
    OperatorMatrix h = OperatorMatrix::Zero(dim, dim);
    for (int site = 0; site + 1 < n; ++site) {
        PauliTerm xx = string_term(n);
        xx.coefficient = -spec.coupling;
        xx.factors[site] = PauliAxis::X;
        xx.factors[site + 1] = PauliAxis::X;
        h += pauli_to_matrix(xx);
    }
    for (int site = 0; site < n; ++site) {
        PauliTerm z = string_term(n);
        z.coefficient = spec.field;
        z.factors[site] = PauliAxis::Z;
        h += pauli_to_matrix(z);
    }
    return h;
}

OperatorMatrix build_Dn(int n_sites, int n) {
    if (n_sites < 1) throw Error(ErrorKind::DomainError, "n_sites must be >= 1");
    if (n < 1 || n > n_sites)
        throw Error(ErrorKind::IndexOutOfRange, "D_n index " + std::to_string(n) + " outside 1.." + std::to_string(n_sites));
    return jordan_wigner_string(n_sites, n, PauliAxis::X) - kI * jordan_wigner_string(n_sites, n_sites - n + 1, PauliAxis::Y);
}

OperatorMatrix build_D(int n_sites, double g) {
    if (!(g >= 0.0 && g < 1.0))
        throw Error(ErrorKind::DomainError, "build_D needs 0 <= g < 1 (prefactor sqrt(1 - g^2) is not real otherwise)");
    const double prefactor = 0.5 * std::sqrt(1.0 - g * g);
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    OperatorMatrix d = OperatorMatrix::Zero(dim, dim);
    double weight = 1.0; // g^{n-1}
    for (int n = 1; n <= n_sites; ++n) {
        if (weight != 0.0) d += (prefactor * weight) * build_Dn(n_sites, n);
        weight *= g;
    }
    return d;
}

OperatorMatrix build_Hs(const IsingSpec &ising, const PerturbationSpec &pert) {
    OperatorMatrix h = build_ising(ising);
    if (pert.strength == 0.0) return h;
    if (g_warnings && std::abs(pert.strength) >= ising.field)
        std::cerr << "warning: |kappa| = " << std::abs(pert.strength) << " is not small compared with g = " << ising.field << '\n';
    h += pert.strength * build_Dn(ising.n_sites, pert.index);
    return h;
}

OperatorMatrix build_entangler_generator(const CouplingTable &table) {
    const int n = table.n_qubits();
    const Eigen::Index dim = Eigen::Index{1} << n;
    OperatorMatrix h = OperatorMatrix::Zero(dim, dim);
    for (Eigen::Index state = 0; state < dim; ++state) {
        double energy = 0.0;
        for (const auto &[pair, value] : table.entries()) {
            // qubit 0 is the most significant bit
            const int zi = ((state >> (n - 1 - pair.first)) & 1) ? -1 : 1;
            const int zj = ((state >> (n - 1 - pair.second)) & 1) ? -1 : 1;
            energy += std::numbers::pi * value * zi * zj / 2.0;
        }
        h(state, state) = energy;
    }
    return h;
}

OperatorMatrix thermal_state(const OperatorMatrix &h0, double beta) {
    if (!(beta >= 0.0)) throw Error(ErrorKind::DomainError, "beta must be non-negative");
    const HermitianEigen eig = herm_eig(h0);
    const double ground = eig.values.size() ? eig.values(0) : 0.0;
    Eigen::VectorXd weights = (-beta * (eig.values.array() - ground)).exp();
    weights /= weights.sum();
    return hermitian_part(eig.vectors * weights.cast<cplx>().asDiagonal() * eig.vectors.adjoint());
}

} // namespace nhsim
