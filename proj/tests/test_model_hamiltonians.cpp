#include "oracles.hpp"

#include "nhsim/errors.hpp"
#include "nhsim/model_hamiltonians.hpp"

#include <doctest.h>

#include <filesystem>
#include <numbers>

using namespace nhsim;

namespace {

bool throws_kind(ErrorKind kind, auto &&fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.kind() == kind;
    }
    return false;
}

struct QuietModels {
    QuietModels() { set_model_warnings(false); }
    ~QuietModels() { set_model_warnings(true); }
};

} // namespace

TEST_CASE("build_ising") {
    CHECK(max_abs(build_ising({1, 1.0, 1.0}) - oracle::sz()) == 0.0);
    CHECK(max_abs(build_ising({2, 1.0, 0.0}) + oracle::kron_all({oracle::sx(), oracle::sx()})) == 0.0);

    const OperatorMatrix h = build_ising({5, 1.0, 0.5});
    CHECK(is_hermitian(h));
    CHECK(std::abs(h.trace()) < 1e-12);
    const OperatorMatrix ref = oracle::ising(5, 1.0, 0.5);
    CHECK(max_abs(h - ref) < 1e-14);
    Eigen::SelfAdjointEigenSolver<OperatorMatrix> es(ref);
    CHECK(herm_eig(h).values(0) == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-12));

    CHECK(throws_kind(ErrorKind::DomainError, [] { (void)build_ising({0, 1.0, 0.0}); }));
    CHECK(throws_kind(ErrorKind::DomainError, [] { (void)build_ising({2, 1.0, -0.5}); }));
}

TEST_CASE("build_Dn") {
    const OperatorMatrix d1 = build_Dn(2, 1);
    const OperatorMatrix expected = oracle::kron_all({oracle::sx(), oracle::id2()}) + kI * oracle::kron_all({oracle::sz(), oracle::sy()});
    CHECK(max_abs(d1 - expected) < 1e-15);

    OperatorMatrix lowering = OperatorMatrix::Zero(2, 2);
    lowering(1, 0) = 2.0;
    CHECK(max_abs(build_Dn(1, 1) - lowering) < 1e-15);

    for (int n_sites = 1; n_sites <= 4; ++n_sites)
        for (int n = 1; n <= n_sites; ++n) {
            const OperatorMatrix d = build_Dn(n_sites, n);
            CHECK(std::abs(d.trace()) < 1e-14);
            CHECK(hermiticity_defect(d) > 0.0);
            CHECK(max_abs(d - oracle::jw_dn(n_sites, n)) < 1e-15);
        }

    CHECK(throws_kind(ErrorKind::IndexOutOfRange, [] { (void)build_Dn(3, 0); }));
    CHECK(throws_kind(ErrorKind::IndexOutOfRange, [] { (void)build_Dn(3, 4); }));
}

TEST_CASE("build_D") {
    CHECK(max_abs(build_D(2, 0.0) - 0.5 * build_Dn(2, 1)) < 1e-15);
    const OperatorMatrix expected =
        (std::sqrt(0.75) / 2.0) * (oracle::jw_dn(3, 1) + 0.5 * oracle::jw_dn(3, 2) + 0.25 * oracle::jw_dn(3, 3));
    CHECK(max_abs(build_D(3, 0.5) - expected) < 1e-14);
    CHECK(throws_kind(ErrorKind::DomainError, [] { (void)build_D(3, 1.0); }));
    CHECK(throws_kind(ErrorKind::DomainError, [] { (void)build_D(3, 1.5); }));
}

TEST_CASE("build_Hs") {
    QuietModels quiet;
    CHECK(max_abs(build_Hs({4, 1.0, 0.3}, {2, 0.0}) - build_ising({4, 1.0, 0.3})) == 0.0);

    const OperatorMatrix hs = build_Hs({5, 1.0, 0.1}, {1, 0.1});
    const OperatorMatrix anti = (hs - hs.adjoint()) / 2.0;
    const OperatorMatrix d1 = build_Dn(5, 1);
    CHECK(max_abs(anti - 0.1 * (d1 - d1.adjoint()) / 2.0) < 1e-15);

    const OperatorMatrix hs2 = build_Hs({2, 1.0, 1.0}, {1, 0.1});
    const OperatorMatrix expected = oracle::ising(2, 1.0, 1.0) + 0.1 * (oracle::kron_all({oracle::sx(), oracle::id2()}) +
                                                                         kI * oracle::kron_all({oracle::sz(), oracle::sy()}));
    CHECK(max_abs(hs2 - expected) < 1e-15);
}

TEST_CASE("coupling table") {
    CouplingTable t(3);
    t.set(2, 0, 0.5);
    CHECK(t.get(0, 2) == 0.5);
    CHECK(t.get(0, 1) == 0.0);
    CHECK(throws_kind(ErrorKind::DomainError, [&] { t.set(1, 1, 1.0); }));
    CHECK(throws_kind(ErrorKind::IndexOutOfRange, [&] { t.set(0, 3, 1.0); }));

    const CouplingTable round = CouplingTable::from_json(t.to_json());
    CHECK(round == t);

    const CouplingTable shipped = CouplingTable::load(std::filesystem::path(NHSIM_DATA_DIR) / "couplings_default.json");
    CHECK(shipped == CouplingTable::synthetic_default());
    CHECK(shipped.n_qubits() == 7);
    CHECK(shipped.entries().size() == 21);
    const CouplingTable four = shipped.restricted(4);
    CHECK(four.n_qubits() == 4);
    CHECK(four.entries().size() == 6);
    CHECK(four.get(0, 1) == shipped.get(0, 1));
}

TEST_CASE("build_entangler_generator") {
    CHECK(max_abs(build_entangler_generator(CouplingTable(3))) == 0.0);

    CouplingTable two(2);
    two.set(0, 1, 1.0);
    OperatorMatrix expected = OperatorMatrix::Zero(4, 4);
    const double h = std::numbers::pi / 2;
    expected.diagonal() << h, -h, -h, h;
    CHECK(max_abs(build_entangler_generator(two) - expected) < 1e-15);

    CouplingTable three(3);
    three.set(0, 1, 2.0);
    three.set(1, 2, 1.0);
    three.set(0, 2, 0.5);
    const OperatorMatrix gen = build_entangler_generator(three);
    for (int bits = 0; bits < 8; ++bits) {
        // qubit 0 is the most significant bit
        const int s0 = (bits & 4) ? -1 : 1, s1 = (bits & 2) ? -1 : 1, s2 = (bits & 1) ? -1 : 1;
        const double value = h * (2.0 * s0 * s1 + 1.0 * s1 * s2 + 0.5 * s0 * s2);
        CHECK(gen(bits, bits).real() == doctest::Approx(value));
    }
    OperatorMatrix off = gen;
    off.diagonal().setZero();
    CHECK(max_abs(off) == 0.0);
}

TEST_CASE("thermal_state") {
    const OperatorMatrix h2 = build_ising({2, 1.0, 0.4});
    CHECK(max_abs(thermal_state(h2, 0.0) - identity(4) / 4.0) < 1e-15);

    // gap 1.24 at g = 1, so the excited weight at beta = 50 is ~1e-27
    const OperatorMatrix gapped = build_ising({2, 1.0, 1.0});
    const HermitianEigen e = herm_eig(gapped);
    const OperatorMatrix ground = e.vectors.col(0) * e.vectors.col(0).adjoint();
    CHECK(max_abs(thermal_state(gapped, 50.0) - ground) < 1e-8);

    const OperatorMatrix h5 = build_ising({5, 1.0, 0.1});
    const OperatorMatrix rho = thermal_state(h5, 10.0);
    CHECK(std::abs(rho.trace() - 1.0) < 1e-12);
    CHECK(max_abs(rho * h5 - h5 * rho) < 1e-10);

    // no overflow at large beta times energy
    const OperatorMatrix big = 1000.0 * h5;
    CHECK(thermal_state(big, 10.0).allFinite());
    CHECK(throws_kind(ErrorKind::DomainError, [&] { (void)thermal_state(h5, -1.0); }));
}
