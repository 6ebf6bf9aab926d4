#include <doctest.h>

#include "kst/multicopy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace kst;

namespace {

Observable half_z() { return Observable(1, pauli_basis()[3] / 2.0); }

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

CMatrix permutation_matrix(const std::vector<int>& perm, int n) {
    const int t = static_cast<int>(perm.size());
    const Eigen::Index dim = Eigen::Index{1} << (n * t);
    const std::size_t mask = (std::size_t{1} << n) - 1;
    CMatrix p = CMatrix::Zero(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        std::size_t out = 0;
        for (int c = 0; c < t; ++c) {
            const std::size_t digit = (static_cast<std::size_t>(i) >> (n * (t - 1 - c))) & mask;
            out |= digit << (n * (t - 1 - perm[static_cast<std::size_t>(c)]));
        }
        p(static_cast<Eigen::Index>(out), i) = 1.0;
    }
    return p;
}

}  // namespace

TEST_CASE("mu coefficients") {
    const MuTable m0 = mu_coefficients(0);
    REQUIRE(m0.exact.size() == 3);
    CHECK(m0.exact[0] == 1);
    CHECK(m0.exact[1] == -2);
    CHECK(m0.exact[2] == 1);
    const MuTable m2 = mu_coefficients(2);
    CHECK(m2.exact == std::vector<std::int64_t>{1, 0, -2, 0, 1});

    for (int k = 0; k <= 30; ++k) {
        const MuTable m = mu_coefficients(k);
        REQUIRE(static_cast<int>(m.exact.size()) == k + 3);
        CHECK(std::accumulate(m.exact.begin(), m.exact.end(), std::int64_t{0}) == 0);
        for (int l = 0; l <= k + 2; ++l) {
            CHECK(m.exact[static_cast<std::size_t>(l)] == m.exact[static_cast<std::size_t>(k + 2 - l)]);
            CHECK(m.coefficients[static_cast<std::size_t>(l)] ==
                  static_cast<double>(m.exact[static_cast<std::size_t>(l)]));
        }
        // Second difference of the binomial row: mu_l^(k) = C(k+2,l) - 4 C(k,l-1) in integers.
        std::vector<std::int64_t> row(static_cast<std::size_t>(k + 3), 0), row2(static_cast<std::size_t>(k + 3), 0);
        row[0] = 1;
        for (int i = 1; i <= k; ++i)
            for (int j = i; j >= 1; --j) row[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j - 1)];
        row2[0] = 1;
        for (int i = 1; i <= k + 2; ++i)
            for (int j = i; j >= 1; --j) row2[static_cast<std::size_t>(j)] += row2[static_cast<std::size_t>(j - 1)];
        for (int l = 0; l <= k + 2; ++l) {
            const std::int64_t c_lm1 = (l >= 1 && l - 1 <= k) ? row[static_cast<std::size_t>(l - 1)] : 0;
            CHECK(m.exact[static_cast<std::size_t>(l)] == row2[static_cast<std::size_t>(l)] - 4 * c_lm1);
        }
    }
    CHECK_THROWS_AS(mu_coefficients(-1), Error);
}

TEST_CASE("polynomial moments") {
    const DensityMatrix rho = random_density_matrix(2, 0, 11);
    const Observable h = random_observable(2, 12);
    const CMatrix& r = rho.matrix();
    const CMatrix& hm = h.matrix();
    const double t0 = 2.0 * (r * r * hm * hm - r * hm * r * hm).trace().real();
    CHECK(t_k_polynomial(rho, h, 0) == doctest::Approx(t0).epsilon(1e-12));

    for (int n = 1; n <= 3; ++n)
        for (std::uint64_t s = 0; s < 4; ++s) {
            const DensityMatrix rr = random_density_matrix(n, 0, 40 + s + 10 * n);
            const Observable hh = random_observable(n, 80 + s + 10 * n);
            const auto poly = t_k_polynomial_all(rr, hh, 8);
            const MomentSequence ex = moments_exact(rr, hh, 8);
            for (int k = 0; k < 8; ++k) CHECK(rel(poly[static_cast<std::size_t>(k)], ex.values[static_cast<std::size_t>(k)]) <= 1e-9);
            CHECK(t_k_polynomial(rr, hh, 5) == doctest::Approx(poly[5]).epsilon(1e-13));
        }

    // Commuting pair: every moment vanishes.
    const DensityMatrix diag = pseudo_pure(basis_state(3, 5), 0.7);
    const Observable jz = collective_spin_z(3);
    for (double v : t_k_polynomial_all(diag, jz, 6)) CHECK(std::abs(v) <= 1e-14);
}

TEST_CASE("multi-copy operator trace identity") {
    const Observable h = half_z();
    for (std::uint64_t s = 0; s < 20; ++s) {
        const DensityMatrix rho = random_density_matrix(1, 0, 500 + s);
        const MultiCopyOperator o = build_O(h, 0);
        CHECK(o.copies == 2);
        CHECK(hermiticity_defect(o.data) <= 1e-10);
        CHECK(std::abs(multicopy_trace(o, rho) - t_k_polynomial(rho, h, 0)) <= 1e-10);
        const MultiCopyOperator o3 = build_O(h, 1);
        CHECK(std::abs(multicopy_trace(o3, rho) - t_k_polynomial(rho, h, 1)) <= 1e-10);
    }

    for (int k = 0; k <= 4; ++k)
        for (int n = 1; n * (k + 2) <= 10; ++n) {
            const DensityMatrix rho = random_density_matrix(n, 0, 900 + 7 * k + n);
            const Observable hh = random_observable(n, 950 + 7 * k + n);
            const MultiCopyOperator o = build_O(hh, k);
            const double a = multicopy_trace(o, rho);
            const double p = t_k_polynomial(rho, hh, k);
            const double e = moments_exact(rho, hh, k + 1).values.back();
            CHECK(rel(a, p) <= 1e-9);
            CHECK(rel(p, e) <= 1e-9);
            if (k + 2 <= 5 && n * (k + 2) <= 8) {
                const MultiCopyOperator os = symmetrize_O(o);
                CHECK(rel(multicopy_trace(os, rho), p) <= 1e-9);
            }
        }

    const Observable zero(2, CMatrix::Zero(4, 4));
    CHECK(build_O(zero, 1).data.norm() == 0.0);
    CHECK_THROWS_AS(build_O(random_observable(4, 1), 2), Error);
    CHECK_NOTHROW(build_O(random_observable(4, 1), 0));
}

TEST_CASE("symmetrization") {
    const Observable h = random_observable(1, 3);
    const MultiCopyOperator os = symmetrize_O(build_O(h, 1));
    CHECK(hermiticity_defect(os.data) <= 1e-10);
    std::vector<int> perm{0, 1, 2};
    do {
        const CMatrix p = permutation_matrix(perm, 1);
        CHECK((os.data * p - p * os.data).norm() <= 1e-10);
    } while (std::next_permutation(perm.begin(), perm.end()));

    const MultiCopyOperator twice = symmetrize_O(os);
    CHECK((twice.data - os.data).norm() <= 1e-12);

    // Non-Hermitian-part generic multi-copy trace with distinct factors.
    const DensityMatrix a = random_density_matrix(1, 0, 1), b = random_density_matrix(1, 0, 2),
                        c = random_density_matrix(1, 0, 3);
    const MultiCopyOperator o = build_O(h, 1);
    const cplx direct = multicopy_trace(o, {&a.matrix(), &b.matrix(), &c.matrix()});
    cplx avg = 0.0;
    std::vector<const CMatrix*> f{&a.matrix(), &b.matrix(), &c.matrix()};
    std::sort(f.begin(), f.end());
    int cnt = 0;
    do {
        avg += multicopy_trace(o, f);
        ++cnt;
    } while (std::next_permutation(f.begin(), f.end()));
    avg /= static_cast<double>(cnt);
    CHECK(std::abs(multicopy_trace(os, {&a.matrix(), &b.matrix(), &c.matrix()}) - avg) <= 1e-12);
    CHECK(std::isfinite(direct.real()));

    MultiCopyOperator big{7, 1, CMatrix::Zero(128, 128)};
    CHECK_THROWS_AS(symmetrize_O(big), Error);
}

TEST_CASE("reduced operators") {
    const DensityMatrix rho = random_density_matrix(1, 0, 77);
    const Observable h = random_observable(1, 78);
    for (int k = 0; k <= 3; ++k) {
        const MultiCopyOperator os = symmetrize_O(build_O(h, k));
        const double tk = t_k_polynomial(rho, h, k);
        const MultiCopyOperator full = reduced_O_l(os, rho, k + 2);
        CHECK((full.data - os.data).norm() == 0.0);
        for (int l = 1; l <= k + 2; ++l) {
            const MultiCopyOperator ol = reduced_O_l(os, rho, l);
            CHECK(ol.copies == l);
            CHECK(hermiticity_defect(ol.data) <= 1e-10);
            CHECK(std::abs(multicopy_trace(ol, rho) - tk) <= 1e-10);
        }
        CHECK_THROWS_AS(reduced_O_l(os, rho, 0), Error);
        CHECK_THROWS_AS(reduced_O_l(os, rho, k + 3), Error);
    }
}

TEST_CASE("variance bound") {
    const DensityMatrix rho = random_density_matrix(2, 0, 5);
    const Observable h = random_observable(2, 6);
    const MultiCopyOperator os = symmetrize_O(build_O(h, 1));
    double prev = variance_bound(os, rho, 3);
    for (long long L : {4LL, 10LL, 100LL, 1000LL, 100000LL, 10000000LL}) {
        const double v = variance_bound(os, rho, L);
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-3 * variance_bound(os, rho, 3));
    CHECK(variance_bound(rho, h, 1, 10) == doctest::Approx(variance_bound(os, rho, 10)));
    CHECK_THROWS_AS(variance_bound(rho, h, 1, 2), Error);
    const Observable zero(2, CMatrix::Zero(4, 4));
    CHECK(variance_bound(rho, zero, 0, 5) == 0.0);
}

TEST_CASE("planner") {
    CHECK(plan_repetitions(1, 0.01) == 43);
    CHECK(plan_repetitions(1, 0.1) == 24);
    int prev = 0;
    for (double d : {0.5, 0.1, 0.01, 1e-3, 1e-6}) {
        const int r = plan_repetitions(2, d);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK_THROWS_AS(plan_repetitions(1, 0.0), Error);
    CHECK_THROWS_AS(plan_repetitions(1, 1.0), Error);
    CHECK_THROWS_AS(plan_repetitions(0, 0.5), Error);
    const RepetitionPlan clamped = plan_repetitions_detail(1, 2.5);
    CHECK(clamped.clamped);
    CHECK(clamped.repetitions == 1);
    CHECK_FALSE(plan_repetitions_detail(1, 0.5).clamped);

    const DensityMatrix rho = random_density_matrix(1, 0, 9);
    const Observable h = half_z();
    long long last = std::numeric_limits<long long>::max();
    for (double eps : {0.01, 0.05, 0.2, 1.0}) {
        const long long L = plan_subsample_size(rho, h, 1, eps);
        CHECK(L <= last);
        CHECK(L >= 3);
        last = L;
        for (int k = 0; k <= 1; ++k) CHECK(variance_bound(rho, h, k, L) <= eps * eps / 4.0 * (1.0 + 1e-12));
    }
    const long long l2 = plan_subsample_size(rho, h, 2, 0.1);
    for (int k = 0; k <= 3; ++k) CHECK(variance_bound(rho, h, k, l2) <= 0.01 / 4.0 * (1.0 + 1e-12));

    const Observable zero(1, CMatrix::Zero(2, 2));
    CHECK(plan_subsample_size(rho, zero, 1, 0.1) == 3);
    CHECK_THROWS_AS(plan_subsample_size(rho, h, 1, 0.0), Error);
    CHECK_THROWS_AS(plan_subsample_size(random_density_matrix(3, 0, 1), collective_spin_z(3), 2, 0.1), Error);
}
