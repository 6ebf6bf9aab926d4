#include <doctest.h>

#include "kst/qfi.hpp"

#include <cmath>

using namespace kst;

namespace {

HermitianOperator op(CMatrix m) { return {std::move(m), OperatorBasis::computational}; }

DensityMatrix plus_state() {
    CVector a(2);
    a << M_SQRT1_2, M_SQRT1_2;
    return DensityMatrix::from_pure(PureState(1, a));
}

Observable half_z() { return Observable(1, pauli_basis()[3] / 2.0); }

CMatrix random_hermitian(int n, std::uint64_t seed) { return random_observable(n, seed).matrix(); }

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Rank of the list of Krylov generators R^k(C), each normalized, by SVD.
int generator_svd_rank(const DensityMatrix& rho, const Observable& h, int count, double tol) {
    HermitianOperator g = commutator_C(rho, h);
    const Eigen::Index d2 = static_cast<Eigen::Index>(rho.dim() * rho.dim());
    CMatrix cols(d2, count);
    for (int k = 0; k < count; ++k) {
        cols.col(k) = Eigen::Map<const CVector>(g.data.data(), d2) / g.data.norm();
        g = apply_R(rho, g);
    }
    Eigen::BDCSVD<CMatrix> svd(cols);
    const RVector& s = svd.singularValues();
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) r += s[i] > tol * s[0];
    return r;
}

}  // namespace

TEST_CASE("commutator") {
    const auto c = commutator_C(plus_state(), half_z());
    CHECK(max_abs(c.data - pauli_basis()[2] / 2.0) <= 1e-15);
    CHECK(hermiticity_defect(c.data) <= 1e-14);

    const auto rho = random_density_matrix(3, 0, 1);
    CHECK(hermiticity_defect(commutator_C(rho, random_observable(3, 2)).data) <= 1e-14);

    CMatrix diag_rho = CMatrix::Zero(2, 2);
    diag_rho(0, 0) = 0.7;
    diag_rho(1, 1) = 0.3;
    try {
        commutator_C(DensityMatrix(1, diag_rho), half_z());
        FAIL("expected degenerate commutator");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_commutator);
    }
}

TEST_CASE("apply_R") {
    const auto rho = random_density_matrix(3, 0, 4);
    CHECK(max_abs(apply_R(rho, op(CMatrix::Identity(8, 8))).data - rho.matrix()) <= 1e-15);
    const CMatrix x = random_hermitian(1, 3);
    CHECK(max_abs(apply_R(maximally_mixed(1), op(x)).data - x / 2.0) <= 1e-15);

    // Dense product against the eigenbasis formula.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = random_density_matrix(3, 2 + static_cast<int>(seed), seed);
        const CMatrix xr = random_hermitian(3, 100 + seed);
        const Spectrum s = spectrum(r);
        CMatrix xe = s.eigenvectors.adjoint() * xr * s.eigenvectors;
        for (int k = 0; k < 8; ++k)
            for (int l = 0; l < 8; ++l) xe(k, l) *= (s.eigenvalues[k] + s.eigenvalues[l]) / 2.0;
        const CMatrix spectral = s.eigenvectors * xe * s.eigenvectors.adjoint();
        CHECK(max_abs(apply_R(r, op(xr)).data - spectral) <= 1e-12);
    }
}

TEST_CASE("apply_R_inverse") {
    const CMatrix x = random_hermitian(1, 8);
    CHECK(max_abs(apply_R_inverse(maximally_mixed(1), op(x)).data - 2.0 * x) <= 1e-14);

    // Inverse identity on the support subspace, including rank-deficient states.
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int rank = 1 + static_cast<int>(seed % 8);
        const auto r = random_density_matrix(3, rank, seed);
        const Spectrum s = spectrum(r);
        const auto xs = project_to_support(s, op(random_hermitian(3, 200 + seed)));
        const auto back = apply_R_inverse(r, apply_R(r, xs));
        CHECK(max_abs(back.data - xs.data) <= 1e-10);
        CHECK(max_abs(apply_R(r, apply_R_inverse(r, xs)).data - xs.data) <= 1e-10);
    }

    const auto pure = DensityMatrix::from_pure(haar_random_state(2, 5));
    const auto h = random_observable(2, 6);
    const auto c = commutator_C(pure, h);
    CHECK(max_abs(apply_R_inverse(pure, c).data - 2.0 * c.data) <= 1e-12);
}

TEST_CASE("sld_L and weighted inner product") {
    const auto pure = DensityMatrix::from_pure(haar_random_state(3, 7));
    const auto h = random_observable(3, 8);
    const auto l = sld_L(pure, h);
    CHECK(max_abs(l.data - 2.0 * commutator_C(pure, h).data) <= 1e-12);
    CHECK(rel(weighted_inner(pure, l, l), qfi_exact(pure, h)) <= 1e-12);
    CHECK_THROWS_AS(sld_L(maximally_mixed(2), collective_spin_z(2)), Error);

    const auto rho = random_density_matrix(3, 0, 9);
    CHECK(weighted_inner(rho, op(CMatrix::Identity(8, 8)), op(CMatrix::Identity(8, 8))) ==
          doctest::Approx(1.0).epsilon(1e-14));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CMatrix x = random_hermitian(3, 300 + seed);
        const CMatrix y = random_hermitian(3, 400 + seed);
        const double direct = weighted_inner(rho, op(x), op(y));
        const double via_r = (apply_R(rho, op(x)).data * y).trace().real();
        CHECK(std::abs(direct - via_r) <= 1e-12);
        CHECK(std::abs(direct - weighted_inner(rho, op(y), op(x))) <= 1e-14);
        CHECK(weighted_inner(rho, op(x), op(x)) > 0.0);
    }
    // Definiteness on the support: an operator living on the null block has zero norm.
    const auto low = random_density_matrix(2, 2, 3);
    const Spectrum s = spectrum(low);
    CMatrix null_block = s.eigenvectors.col(3) * s.eigenvectors.col(3).adjoint();
    CHECK(std::abs(weighted_inner(low, op(null_block), op(null_block))) <= 1e-12);
    CHECK(max_abs(project_to_support(s, op(null_block)).data) <= 1e-12);
}

TEST_CASE("qfi_exact") {
    for (int n = 1; n <= 6; ++n) {
        const auto ghz = DensityMatrix::from_pure(ghz_state(n));
        CHECK(qfi_exact(ghz, collective_spin_z(n)) == doctest::Approx(n * n).epsilon(1e-12));
        CHECK(qfi_exact(maximally_mixed(n), collective_spin_z(n)) == 0.0);
    }
    const auto psi = haar_random_state(3, 10);
    const auto h = random_observable(3, 11);
    const CVector& a = psi.amplitudes();
    const double m1 = (a.adjoint() * h.matrix() * a)(0, 0).real();
    const double m2 = (a.adjoint() * h.matrix() * h.matrix() * a)(0, 0).real();
    CHECK(rel(qfi_exact(DensityMatrix::from_pure(psi), h), 4 * (m2 - m1 * m1)) <= 1e-12);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto rho = random_density_matrix(3, 1 + static_cast<int>(seed % 8), seed);
        const auto hh = random_observable(3, 500 + seed);
        const auto l = sld_L(rho, hh);
        CHECK(rel(weighted_inner(rho, l, l), qfi_exact(rho, hh)) <= 1e-9);
    }
}

TEST_CASE("moments") {
    const auto m = moments_exact(plus_state(), half_z(), 3);
    CHECK(m.values[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.values[1] == doctest::Approx(0.25).epsilon(1e-15));

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const int n = 1 + static_cast<int>(seed % 4);
        const int rank = static_cast<int>(seed % 3 == 0 ? 1 : 0);
        const auto rho = random_density_matrix(n, rank, seed);
        const auto h = random_observable(n, 1000 + seed);
        const auto spec = moments_exact(rho, h, 7);
        const auto iter = moments_iterated(rho, h, 7);
        const CMatrix& r = rho.matrix();
        const CMatrix& hm = h.matrix();
        const double t0 = 2.0 * (r * r * hm * hm - r * hm * r * hm).trace().real();
        const double t1 = (r * r * r * hm * hm - r * r * hm * r * hm).trace().real();
        CHECK(rel(spec.values[0], t0) <= 1e-9);
        CHECK(rel(spec.values[1], t1) <= 1e-9);
        for (int k = 0; k < 7; ++k) CHECK(rel(iter.values[k], spec.values[k]) <= 1e-9);
    }
    CHECK_THROWS_AS(moments_exact(maximally_mixed(2), collective_spin_z(2), 2), Error);
}

TEST_CASE("n_star for the two structured families") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const int n = 2 + static_cast<int>(seed % 3);
        const double p = 0.95 * static_cast<double>(seed) / 29.0;
        const auto rho = pseudo_pure(haar_random_state(n, seed), p);
        const auto h = random_observable(n, 700 + seed);
        CHECK(n_star(rho, h) == 1);
        CHECK(proportionality_check(rho, h));
        const auto pr = proportionality(rho, h);
        CHECK(std::abs(pr.coefficient - cplx((1 - p) + p / std::pow(2.0, n - 1), 0.0)) <= 1e-10);
    }
    for (int n = 2; n <= 6; ++n) {
        for (int k = 1; k <= n / 2; ++k) {
            const auto rho = bound_entangled(n, k);
            const auto h = collective_spin_z(n);
            CHECK(n_star(rho, h) == 1);
            const auto pr = proportionality(rho, h);
            CHECK(pr.residual <= 1e-10);
            CHECK(std::abs(pr.coefficient - cplx(bound_entangled_lambda(n, k), 0.0)) <= 1e-12);
        }
    }
}

TEST_CASE("n_star on generic states against independent ranks") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto rho = random_density_matrix(2, 0, 40 + seed);
        const auto h = random_observable(2, 50 + seed);
        const int ns = n_star(rho, h);
        CHECK(ns == 6);
        CHECK(generator_svd_rank(rho, h, 10, 1e-11) == ns);
        CHECK(krylov_projection(rho, h, 12).achieved_order == ns);
        CHECK_FALSE(proportionality_check(rho, h));
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto rho = random_density_matrix(3, 0, 60 + seed);
        const auto h = random_observable(3, 70 + seed);
        const int ns = n_star(rho, h);
        CHECK(ns == 28);
        CHECK(krylov_projection(rho, h, 40).achieved_order == ns);
    }
    // Rank-deficient state: pairs inside the kernel carry no weight.
    const auto low = random_density_matrix(2, 2, 5);
    const auto h = random_observable(2, 6);
    CHECK(n_star(low, h) == krylov_projection(low, h, 12).achieved_order);
}

TEST_CASE("exact Krylov bounds") {
    CHECK(krylov_bound_exact(plus_state(), half_z(), 1) == doctest::Approx(1.0).epsilon(1e-15));

    const auto rho = random_density_matrix(2, 0, 3);
    const auto h = random_observable(2, 4);
    const auto t = moments_exact(rho, h, 2);
    CHECK(rel(krylov_bound_exact(rho, h, 1), t.values[0] * t.values[0] / t.values[1]) <= 1e-12);

    try {
        krylov_bound_exact(rho, h, 7);
        FAIL("expected subspace termination");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::subspace_terminated);
    }
    try {
        krylov_bound_exact(pseudo_pure(ghz_state(3), 0.2), collective_spin_z(3), 2);
        FAIL("expected subspace termination");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::subspace_terminated);
    }
}

TEST_CASE("hierarchy properties on random full-rank states") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int n = 2 + static_cast<int>(seed % 2);
        const auto rho = random_density_matrix(n, 0, 900 + seed);
        const auto h = random_observable(n, 950 + seed);
        const SpectralContext ctx(rho, h);
        const double fq = qfi_exact(ctx);
        const auto hier = krylov_hierarchy(ctx);
        CAPTURE(seed);
        REQUIRE(static_cast<int>(hier.bounds.size()) == hier.n_star);
        // Tail increments fall below double resolution of B itself, so strict
        // growth is read off the extended-precision increments.
        for (std::size_t i = 1; i < hier.bounds.size(); ++i) {
            CHECK(hier.bounds[i] >= hier.bounds[i - 1]);
            CHECK(hier.increments[i] > 0.0);
        }
        CHECK(rel(hier.bounds.back(), fq) <= 1e-9);
        for (double lp : hier.pivot_log10) CHECK(std::isfinite(lp));
        for (double b : hier.bounds) CHECK(b <= fq + 1e-8);

        // Weighted-projection route, Pythagorean identity and orthogonality.
        for (int order : {1, 2, 3, 5}) {
            const auto proj = krylov_projection(rho, h, order);
            const double b = hier.bounds[static_cast<std::size_t>(order - 1)];
            CHECK(rel(proj.bound, b) <= 1e-9);
            CHECK(std::abs(fq - (b + proj.residual_norm_sq)) <= 1e-9 * fq);
            CHECK(proj.orthogonality_residual <= 1e-9);
        }
        // Double-precision Hankel stays positive definite at low orders.
        const auto m = moments_exact(ctx, 6);
        for (int order = 1; order <= 3; ++order) CHECK(build_hankel(m, order).min_eigenvalue > 0.0);
    }
}

TEST_CASE("increments exceed 1e-9 F_Q on two-qubit instances") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto rho = random_density_matrix(2, 0, 1300 + seed);
        const auto h = random_observable(2, 1400 + seed);
        const SpectralContext ctx(rho, h);
        const double fq = qfi_exact(ctx);
        const auto hier = krylov_hierarchy(ctx);
        for (std::size_t i = 1; i < hier.increments.size(); ++i) CHECK(hier.increments[i] > 1e-9 * fq);
    }
}

TEST_CASE("n_star one iff commutators proportional") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const int n = 2 + static_cast<int>(seed % 2);
        const bool structured = seed % 2 == 0;
        const auto rho = structured ? pseudo_pure(haar_random_state(n, seed), 0.5)
                                    : random_density_matrix(n, 0, seed);
        const auto h = random_observable(n, 2000 + seed);
        CHECK((n_star(rho, h) == 1) == proportionality_check(rho, h));
    }
}

TEST_CASE("Hankel helpers") {
    MomentSequence t{{1.0, 2.0, 3.0, 4.0, 5.0}, Provenance::exact};
    const auto hs = build_hankel(t, 2);
    CHECK(hs.A(0, 0) == 2.0);
    CHECK(hs.A(0, 1) == 3.0);
    CHECK(hs.A(1, 0) == 3.0);
    CHECK(hs.A(1, 1) == 4.0);
    CHECK(hs.b[1] == 2.0);
    CHECK_THROWS_AS(build_hankel(t, 3), Error);

    const auto rho = pseudo_pure(ghz_state(3), 0.3);
    const auto m = moments_exact(rho, collective_spin_z(3), 8);
    CHECK(hankel_rank(m) == 1);
}
