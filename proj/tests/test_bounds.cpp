#include <doctest.h>

#include "kst/bounds.hpp"

#include <cmath>

using namespace kst;

namespace {

DensityMatrix random_instance_state(int n, std::uint64_t seed) {
    const int d = 1 << n;
    const int rank = static_cast<int>(seed % static_cast<std::uint64_t>(d)) + 1;
    return random_density_matrix(n, rank, seed);
}

}  // namespace

TEST_CASE("legendre bound values") {
    CHECK(legendre_bound(1.0, 5).value == doctest::Approx(25.0));
    CHECK(legendre_bound(0.5, 5).value == 0.0);
    CHECK(legendre_bound(0.3, 5).value == 0.0);
    CHECK(legendre_bound(0.75, 4).value == doctest::Approx(4.0));
    CHECK(bound_label(legendre_bound(0.9, 3)) == "Leg");
    CHECK_THROWS_AS(legendre_bound(-0.01, 3), Error);
    CHECK_THROWS_AS(legendre_bound(1.01, 3), Error);
    CHECK_THROWS_AS(legendre_bound(std::nan(""), 3), Error);
}

TEST_CASE("sub-QFI bound") {
    const Observable jz = collective_spin_z(3);
    CHECK(sub_qfi_bound(maximally_mixed(3), jz).value == doctest::Approx(0.0).epsilon(1e-14));

    // Pure state: 4 Var(H) = F_Q.
    for (std::uint64_t s = 0; s < 5; ++s) {
        const DensityMatrix rho = DensityMatrix::from_pure(haar_random_state(3, s));
        const Observable h = random_observable(3, 100 + s);
        const CMatrix& hm = h.matrix();
        const CMatrix& r = rho.matrix();
        const double m1 = (r * hm).trace().real();
        const double m2 = (r * hm * hm).trace().real();
        const double b = sub_qfi_bound(rho, h).value;
        CHECK(b == doctest::Approx(4.0 * (m2 - m1 * m1)).epsilon(1e-10));
        CHECK(b == doctest::Approx(qfi_exact(rho, h)).epsilon(1e-9));
        CHECK(sub_qfi_bound(SpectralContext(rho, h)).value == doctest::Approx(b).epsilon(1e-9));
    }
}

TEST_CASE("taylor bound special values") {
    const DensityMatrix rho = random_density_matrix(2, 0, 7);
    const Observable h = random_observable(2, 8);
    const MomentSequence t = moments_exact(rho, h, 1);
    CHECK(taylor_bound(rho, h, 0).value == doctest::Approx(2.0 * t.values[0]).epsilon(1e-12));
    CHECK(bound_label(taylor_bound(rho, h, 3)) == "Tay3");

    const DensityMatrix pure = DensityMatrix::from_pure(haar_random_state(3, 9));
    const Observable h3 = random_observable(3, 10);
    const double fq = qfi_exact(pure, h3);
    for (int n : {0, 1, 4})
        CHECK(taylor_bound(pure, h3, n).value == doctest::Approx(fq).epsilon(1e-9));
    CHECK_THROWS_AS(taylor_bound(rho, h, -1), Error);
}

TEST_CASE("taylor routes agree") {
    for (int n = 1; n <= 3; ++n)
        for (std::uint64_t s = 0; s < 3; ++s) {
            const DensityMatrix rho = random_instance_state(n, 31 * s + n);
            const Observable h = random_observable(n, 57 * s + n);
            for (int order = 0; order <= 5; ++order) {
                const double a = taylor_bound(rho, h, order, TaylorRoute::spectral).value;
                const double b = taylor_bound(rho, h, order, TaylorRoute::doubled).value;
                CHECK(std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)));
            }
        }
    CHECK_THROWS_AS(taylor_bound(maximally_mixed(7), collective_spin_z(7), 1, TaylorRoute::doubled), Error);
}

TEST_CASE("taylor monotone and geometric convergence") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const int n = 2 + static_cast<int>(s % 2);
        const DensityMatrix rho = random_density_matrix(n, 0, 200 + s);
        const Observable h = random_observable(n, 300 + s);
        const SpectralContext ctx(rho, h);
        const double fq = qfi_exact(ctx);
        double prev = taylor_bound(ctx, 0).value;
        for (int order = 1; order <= 50; ++order) {
            const double cur = taylor_bound(ctx, order).value;
            CHECK(cur >= prev - 1e-10);
            prev = cur;
        }
        // Error decays like q_max^n with q_max = max over coupled pairs of 1 - p_a - p_b.
        const auto& p = ctx.p();
        const auto& hh = ctx.h_eigen();
        double qmax = 0.0;
        for (Eigen::Index a = 0; a < p.size(); ++a)
            for (Eigen::Index b = a + 1; b < p.size(); ++b)
                if ((p[a] - p[b]) * (p[a] - p[b]) * std::norm(hh(a, b)) > 0.0)
                    qmax = std::max(qmax, 1.0 - p[a] - p[b]);
        const double e0 = fq - taylor_bound(ctx, 0).value;
        for (int order : {5, 20, 40}) CHECK(fq - taylor_bound(ctx, order).value <= e0 * std::pow(qmax, order) + 1e-12 * fq);
        // The slowest pair dominates asymptotically.
        const double e60 = fq - taylor_bound(ctx, 60).value;
        const double e120 = fq - taylor_bound(ctx, 120).value;
        if (e120 > 1e-9 * fq) {
            const double ratio = std::pow(e120 / e60, 1.0 / 60.0);
            CHECK(ratio <= qmax + 1e-6);
            CHECK(ratio >= 0.95 * qmax);
        }
    }
}

TEST_CASE("lower-bound property on random instances") {
    int checked = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        const int n = 1 + static_cast<int>(s % 4);
        const DensityMatrix rho = random_instance_state(n, 1000 + s);
        const Observable h = (s % 3 == 0) ? pauli_string_observable(random_pauli_string(n, s))
                                           : random_observable(n, 5000 + s);
        const SpectralContext ctx(rho, h);
        const double fq = qfi_exact(ctx);
        CHECK(sub_qfi_bound(ctx).value <= fq + 1e-8);
        for (int order : {0, 1, 3, 10}) CHECK(taylor_bound(ctx, order).value <= fq + 1e-8);
        const KrylovHierarchy kh = krylov_hierarchy(ctx, 0);
        for (double b : kh.bounds) CHECK(b <= fq + 1e-8);
        ++checked;
    }
    CHECK(checked == 500);
}

TEST_CASE("relative error") {
    CHECK(relative_error(3.0, 3.0) == 0.0);
    CHECK(relative_error(0.0, 3.0) == 1.0);
    CHECK(relative_error(BoundValue{1.5, BoundFamily::sub_qfi, std::nullopt}, 3.0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(relative_error(1.0, 0.0), Error);
    CHECK_THROWS_AS(relative_error(1.0, -1.0), Error);
}
