#include <doctest.h>

#include "kst/states.hpp"

#include <cmath>

using namespace kst;

namespace {

int numerical_rank(const CMatrix& m, double tol = 1e-10) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m, Eigen::EigenvaluesOnly);
    int r = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) r += es.eigenvalues()[i] > tol;
    return r;
}

double min_eigenvalue(const CMatrix& m) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

void check_density_invariants(const DensityMatrix& rho) {
    CHECK(hermiticity_defect(rho.matrix()) <= 1e-12);
    CHECK(std::abs(rho.matrix().trace() - cplx(1.0, 0.0)) <= 1e-12);
    CHECK(min_eigenvalue(rho.matrix()) >= -1e-10);
}

double choose(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return std::round(r);
}

}  // namespace

TEST_CASE("ghz amplitudes") {
    const auto g1 = ghz_state(1);
    CHECK(g1.amplitudes()[0].real() == doctest::Approx(M_SQRT1_2).epsilon(1e-15));
    CHECK(g1.amplitudes()[1].real() == doctest::Approx(M_SQRT1_2).epsilon(1e-15));

    const auto g3 = ghz_state(3);
    for (Eigen::Index i = 0; i < 8; ++i) {
        const double expected = (i == 0 || i == 7) ? M_SQRT1_2 : 0.0;
        CHECK(std::abs(g3.amplitudes()[i] - expected) == 0.0);
    }
    CHECK(fidelity(DensityMatrix::from_pure(g3), g3) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(ghz_state(0), Error);
}

TEST_CASE("pseudo_pure endpoints and spectrum") {
    const auto psi = haar_random_state(3, 11);
    const CMatrix proj = psi.amplitudes() * psi.amplitudes().adjoint();
    CHECK(max_abs(pseudo_pure(psi, 0.0).matrix() - proj) <= 1e-15);
    CHECK(max_abs(pseudo_pure(psi, 1.0).matrix() - CMatrix::Identity(8, 8) / 8.0) == 0.0);

    const double p = 0.3;
    const auto rho = pseudo_pure(psi, p);
    check_density_invariants(rho);
    const Spectrum s = spectrum(rho);
    CHECK(s.eigenvalues[0] == doctest::Approx((1 - p) + p / 8).epsilon(1e-12));
    for (int k = 1; k < 8; ++k) CHECK(s.eigenvalues[k] == doctest::Approx(p / 8).epsilon(1e-12));

    try {
        pseudo_pure(psi, 1.5);
        FAIL("expected domain error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::domain);
    }
}

TEST_CASE("bound_entangled normalization, symmetry and support") {
    CHECK(bound_entangled_lambda(4, 1) == doctest::Approx(0.2).epsilon(1e-15));
    const auto rho = bound_entangled(4, 1);
    const CMatrix flip = pauli_string_matrix(parse_pauli_string("XXXX"));
    CHECK(max_abs(rho.matrix() * flip - flip * rho.matrix()) <= 1e-12);

    for (int n = 2; n <= 7; ++n) {
        for (int k = 1; k <= n / 2; ++k) {
            CAPTURE(n);
            CAPTURE(k);
            const auto r = bound_entangled(n, k);
            check_density_invariants(r);
            double below = 0;
            for (int i = 0; i < k; ++i) below += choose(n, i);
            const double at = (2 * k == n) ? choose(n, k) : 2 * choose(n, k);
            CHECK(numerical_rank(r.matrix()) == static_cast<int>(below + at));
        }
    }
    CHECK_THROWS_AS(bound_entangled(4, 3), Error);
    CHECK_THROWS_AS(bound_entangled(4, 0), Error);
}

TEST_CASE("collective spin") {
    const auto h1 = collective_spin_z(1);
    CHECK(max_abs(h1.matrix() - CMatrix(Eigen::Vector2cd(0.5, -0.5).asDiagonal())) == 0.0);
    const auto h2 = collective_spin_z(2);
    Eigen::Vector4cd d2(1, 0, 0, -1);
    CHECK(max_abs(h2.matrix() - CMatrix(d2.asDiagonal())) == 0.0);
    const auto h5 = collective_spin_z(5);
    const RVector diag = h5.matrix().diagonal().real();
    CHECK(diag.maxCoeff() == 2.5);
    CHECK(diag.minCoeff() == -2.5);
    CHECK(h5.pauli_terms().size() == 5);
}

TEST_CASE("random density matrices") {
    const auto pure = random_density_matrix(3, 1, 5);
    CHECK((pure.matrix() * pure.matrix()).trace().real() == doctest::Approx(1.0).epsilon(1e-10));
    const auto full = random_density_matrix(3, 0, 5);
    check_density_invariants(full);
    CHECK(min_eigenvalue(full.matrix()) > 0.0);
    const auto again = random_density_matrix(3, 0, 5);
    CHECK((full.matrix().array() == again.matrix().array()).all());
    const auto other = random_density_matrix(3, 0, 6);
    CHECK(max_abs(full.matrix() - other.matrix()) > 1e-3);
    CHECK_THROWS_AS(random_density_matrix(2, 5, 1), Error);
}

TEST_CASE("fidelity") {
    const auto psi = haar_random_state(2, 3);
    CHECK(fidelity(DensityMatrix::from_pure(psi), psi) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fidelity(maximally_mixed(3), ghz_state(3)) == doctest::Approx(0.125).epsilon(1e-14));
    const double p = 0.4;
    CHECK(fidelity(pseudo_pure(psi, p), psi) == doctest::Approx((1 - p) + p / 4).epsilon(1e-12));
    CHECK_THROWS_AS(fidelity(maximally_mixed(2), ghz_state(3)), Error);
}

TEST_CASE("spectrum snapping and reconstruction") {
    const auto mixed = spectrum(maximally_mixed(3));
    for (int k = 0; k < 8; ++k) CHECK(mixed.eigenvalues[k] == doctest::Approx(0.125).epsilon(1e-14));

    const auto pure = spectrum(DensityMatrix::from_pure(haar_random_state(3, 2)));
    CHECK(pure.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 1; k < 8; ++k) CHECK(pure.eigenvalues[k] == 0.0);

    const auto s = spectrum(pseudo_pure(ghz_state(2), 0.25));
    CHECK(s.eigenvalues[0] == doctest::Approx(0.8125).epsilon(1e-13));
    for (int k = 1; k < 4; ++k) CHECK(s.eigenvalues[k] == doctest::Approx(0.0625).epsilon(1e-13));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto rho = random_density_matrix(4, 0, seed);
        const auto sp = spectrum(rho);
        CHECK(std::abs(sp.eigenvalues.sum() - 1.0) <= 1e-10);
        CHECK(max_abs(reconstruct(sp) - rho.matrix()) <= 1e-10);
        for (Eigen::Index k = 1; k < sp.eigenvalues.size(); ++k)
            CHECK(sp.eigenvalues[k] <= sp.eigenvalues[k - 1]);
    }
}

TEST_CASE("validation of user matrices") {
    CMatrix bad = CMatrix::Identity(2, 2) / 2.0;
    bad(0, 1) = 0.1;
    CHECK_THROWS_AS(DensityMatrix(1, bad), Error);
    CMatrix neg = CMatrix::Zero(2, 2);
    neg(0, 0) = 1.5;
    neg(1, 1) = -0.5;
    try {
        DensityMatrix(1, neg);
        FAIL("expected validation error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::validation);
    }
    CHECK_THROWS_AS(DensityMatrix(2, CMatrix::Identity(2, 2) / 2.0), Error);
}

TEST_CASE("pauli expansion round trip") {
    const auto h = random_observable(3, 9);
    CHECK(max_abs(pauli_sum_matrix(3, h.pauli_terms()) - h.matrix()) <= 1e-13);
    const auto ops = random_pauli_string(4, 1);
    CHECK(pauli_index(ops) != 0);
    const CMatrix p = pauli_string_matrix(ops);
    CHECK(max_abs(p * p - CMatrix::Identity(16, 16)) <= 1e-15);
    CHECK(format_pauli_string(parse_pauli_string("XYZI")) == "XYZI");
}

TEST_CASE("pauli coefficient vector to dense matrix") {
    for (int n = 1; n <= 4; ++n) {
        const CMatrix m = random_observable(n, 40 + n).matrix() + cplx(0.0, 1.0) * random_observable(n, 60 + n).matrix();
        const auto t = pauli_traces(m, n);
        std::vector<cplx> c(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) c[i] = t[i] / static_cast<double>(hilbert_dim(n));
        CHECK(max_abs(pauli_vector_to_matrix(c, n) - m) <= 1e-13);
    }
    std::vector<double> single(16, 0.0);
    single[pauli_index(parse_pauli_string("YZ"))] = 1.0;
    CHECK(max_abs(pauli_vector_to_matrix(single, 2) - pauli_string_matrix(parse_pauli_string("YZ"))) == 0.0);
}
