#include "kst/multicopy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kst {

namespace {

std::int64_t binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::int64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

CMatrix kron_all(const std::vector<const CMatrix*>& f) {
    CMatrix out = *f.front();
    for (std::size_t i = 1; i < f.size(); ++i) out = kron(out, *f[i]);
    return out;
}

CMatrix tensor_power(const CMatrix& m, int t) {
    CMatrix out = m;
    for (int i = 1; i < t; ++i) out = kron(out, m);
    return out;
}

// Index of the basis state whose copies are permuted: copy c of the result
// holds copy perm[c] of the input. Digits are blocks of n bits, copy 0 first.
std::size_t permute_index(std::size_t idx, const std::vector<int>& perm, int n, int t) {
    const std::size_t mask = (std::size_t{1} << n) - 1;
    std::size_t out = 0;
    for (int c = 0; c < t; ++c) {
        const std::size_t digit = (idx >> (n * (t - 1 - perm[static_cast<std::size_t>(c)]))) & mask;
        out |= digit << (n * (t - 1 - c));
    }
    return out;
}

void check_cap(int n, int t) {
    if (n * t > kMaxMultiCopyQubits) {
        throw Error(ErrorCode::resource, "multi-copy operator exceeds " + std::to_string(kMaxMultiCopyQubits) +
                                             " qubits (N = " + std::to_string(n) + ", copies = " +
                                             std::to_string(t) + ")");
    }
}

}  // namespace

MuTable mu_coefficients(int k) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    if (k > 60) throw Error(ErrorCode::domain, "k too large for exact integer coefficients");
    MuTable t;
    t.k = k;
    for (int l = 0; l <= k + 2; ++l) {
        const std::int64_t v = binom(k, l) - 2 * binom(k, l - 1) + binom(k, l - 2);
        t.exact.push_back(v);
        t.coefficients.push_back(static_cast<double>(v));
    }
    return t;
}

std::vector<double> t_k_polynomial_all(const DensityMatrix& rho, const Observable& H, int m) {
    if (m < 1) throw Error(ErrorCode::domain, "moment count must be positive");
    if (rho.dim() != H.dim()) throw Error(ErrorCode::dimension_mismatch, "state and observable dimensions differ");
    const int top = m + 1;  // largest power needed: k + 2 with k = m - 1
    const Eigen::Index d = static_cast<Eigen::Index>(rho.dim());
    std::vector<CMatrix> pw;
    pw.push_back(CMatrix::Identity(d, d));
    for (int i = 1; i <= top; ++i) pw.push_back(pw.back() * rho.matrix());
    const CMatrix& h = H.matrix();
    std::vector<CMatrix> hp;  // H rho^l
    for (int i = 0; i <= top; ++i) hp.push_back(h * pw[static_cast<std::size_t>(i)]);
    // tr(H rho^l H rho^r) for every split used.
    auto tr_pair = [&](int l, int r) {
        return (hp[static_cast<std::size_t>(l)].cwiseProduct(hp[static_cast<std::size_t>(r)].transpose())).sum().real();
    };
    std::vector<double> out;
    for (int k = 0; k < m; ++k) {
        const MuTable mu = mu_coefficients(k);
        double s = 0.0;
        for (int l = 0; l <= k + 2; ++l) {
            if (mu.exact[static_cast<std::size_t>(l)] == 0) continue;
            s += mu.coefficients[static_cast<std::size_t>(l)] * tr_pair(l, k + 2 - l);
        }
        out.push_back(std::ldexp(s, -k));
    }
    return out;
}

double t_k_polynomial(const DensityMatrix& rho, const Observable& H, int k) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    return t_k_polynomial_all(rho, H, k + 1).back();
}

MultiCopyOperator build_O(const Observable& H, int k) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    const int n = H.n_qubits();
    const int t = k + 2;
    check_cap(n, t);
    const Eigen::Index d = static_cast<Eigen::Index>(H.dim());
    const CMatrix id = CMatrix::Identity(d, d);
    const CMatrix h2 = H.matrix() * H.matrix();
    const MuTable mu = mu_coefficients(k);

    // Unpermuted sum A = sum_l mu_l X_l with X_l = H (x) 1^(l-1) (x) H (x) 1^(t-l-1)
    // for 1 <= l <= t-1 and X_0 = X_t = H^2 (x) 1^(t-1); O = Pi A / 2^k.
    const Eigen::Index dim = static_cast<Eigen::Index>(std::size_t{1} << (n * t));
    CMatrix a = CMatrix::Zero(dim, dim);
    std::vector<const CMatrix*> f(static_cast<std::size_t>(t), &id);
    const double boundary = mu.coefficients.front() + mu.coefficients.back();
    if (boundary != 0.0) {
        f[0] = &h2;
        a += boundary * kron_all(f);
    }
    for (int l = 1; l < t; ++l) {
        const double c = mu.coefficients[static_cast<std::size_t>(l)];
        if (c == 0.0) continue;
        std::fill(f.begin(), f.end(), &id);
        f[0] = &H.matrix();
        f[static_cast<std::size_t>(l)] = &H.matrix();
        a += c * kron_all(f);
    }
    // Pi |j_1 .. j_t> = |j_2 .. j_t j_1>, so (Pi A) row (i_1..i_t) is A row (i_t, i_1 .. i_{t-1}).
    std::vector<int> rot(static_cast<std::size_t>(t));
    rot[0] = t - 1;
    for (int c = 1; c < t; ++c) rot[static_cast<std::size_t>(c)] = c - 1;
    CMatrix o(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
        const auto src = static_cast<Eigen::Index>(permute_index(static_cast<std::size_t>(r), rot, n, t));
        o.row(r) = a.row(src);
    }
    o *= std::ldexp(1.0, -k);
    MultiCopyOperator out{t, n, (o + o.adjoint()) * 0.5};
    return out;
}

MultiCopyOperator symmetrize_O(const MultiCopyOperator& O) {
    const int t = O.copies;
    const int n = O.n_qubits_per_copy;
    if (t > kMaxSymmetrizedCopies) {
        throw Error(ErrorCode::resource, "symmetrization enumerates t! permutations; t must be <= 6");
    }
    const Eigen::Index dim = O.data.rows();
    std::vector<int> perm(static_cast<std::size_t>(t));
    std::iota(perm.begin(), perm.end(), 0);
    CMatrix acc = CMatrix::Zero(dim, dim);
    std::vector<Eigen::Index> map(static_cast<std::size_t>(dim));
    int count = 0;
    do {
        for (Eigen::Index i = 0; i < dim; ++i)
            map[static_cast<std::size_t>(i)] =
                static_cast<Eigen::Index>(permute_index(static_cast<std::size_t>(i), perm, n, t));
        for (Eigen::Index c = 0; c < dim; ++c) {
            const Eigen::Index pc = map[static_cast<std::size_t>(c)];
            for (Eigen::Index r = 0; r < dim; ++r) acc(r, c) += O.data(map[static_cast<std::size_t>(r)], pc);
        }
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    acc /= static_cast<double>(count);
    return {t, n, (acc + acc.adjoint()) * 0.5};
}

MultiCopyOperator reduced_O_l(const MultiCopyOperator& O_sym, const DensityMatrix& rho, int l) {
    const int t = O_sym.copies;
    const int n = O_sym.n_qubits_per_copy;
    if (l < 1 || l > t) throw Error(ErrorCode::domain, "l must lie in [1, copies]");
    if (rho.n_qubits() != n) throw Error(ErrorCode::dimension_mismatch, "state size differs from copy size");
    if (l == t) return O_sym;
    const Eigen::Index dl = Eigen::Index{1} << (n * l);
    const Eigen::Index dr = Eigen::Index{1} << (n * (t - l));
    const CMatrix r = tensor_power(rho.matrix(), t - l);
    // O_l(a, a') = sum_{b, b''} O((a, b), (a', b'')) R(b'', b)
    CMatrix out = CMatrix::Zero(dl, dl);
    for (Eigen::Index a = 0; a < dl; ++a)
        for (Eigen::Index ap = 0; ap < dl; ++ap) {
            const auto blk = O_sym.data.block(a * dr, ap * dr, dr, dr);
            out(a, ap) = (blk.cwiseProduct(r.transpose())).sum();
        }
    return {l, n, (out + out.adjoint()) * 0.5};
}

cplx multicopy_trace(const MultiCopyOperator& O, const std::vector<const CMatrix*>& factors) {
    if (static_cast<int>(factors.size()) != O.copies) {
        throw Error(ErrorCode::dimension_mismatch, "one factor per copy is required");
    }
    const CMatrix x = kron_all(factors);
    if (x.rows() != O.data.rows()) throw Error(ErrorCode::dimension_mismatch, "factor sizes differ from copy size");
    return (O.data.cwiseProduct(x.transpose())).sum();
}

double multicopy_trace(const MultiCopyOperator& O, const DensityMatrix& rho) {
    std::vector<const CMatrix*> f(static_cast<std::size_t>(O.copies), &rho.matrix());
    return multicopy_trace(O, f).real();
}

double variance_bound(const MultiCopyOperator& O_sym, const DensityMatrix& rho, long long L) {
    const int t = O_sym.copies;
    const int n = O_sym.n_qubits_per_copy;
    if (L < t) throw Error(ErrorCode::domain, "subsample size must be at least k + 2");
    double total = 0.0;
    for (int l = 1; l <= t; ++l) {
        const CMatrix ol = reduced_O_l(O_sym, rho, l).data;
        const double tr2 = ol.squaredNorm();  // tr(O_l^2) for Hermitian O_l
        const double ft = factorial(t);
        const double num = ft * ft * std::ldexp(1.0, l * n) * tr2;
        const double den = factorial(l) * factorial(t - l) * factorial(t - l) *
                           std::pow(static_cast<double>(L - l + 1), l);
        total += num / den;
    }
    return total;
}

double variance_bound(const DensityMatrix& rho, const Observable& H, int k, long long L) {
    if (L < k + 2) throw Error(ErrorCode::domain, "subsample size must be at least k + 2");
    return variance_bound(symmetrize_O(build_O(H, k)), rho, L);
}

long long plan_subsample_size(const DensityMatrix& rho, const Observable& H, int n, double epsilon) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    if (!(epsilon > 0.0)) throw Error(ErrorCode::domain, "epsilon must be positive");
    const int nq = rho.n_qubits();
    check_cap(nq, 2 * n + 1);
    if (2 * n + 1 > kMaxSymmetrizedCopies) {
        throw Error(ErrorCode::resource, "planner needs symmetrized operators with at most 6 copies");
    }
    double worst = 0.0;
    for (int k = 0; k <= 2 * n - 1; ++k) {
        const int t = k + 2;
        const MultiCopyOperator os = symmetrize_O(build_O(H, k));
        const double ft = factorial(t);
        for (int l = 1; l <= t; ++l) {
            const double tr2 = reduced_O_l(os, rho, l).data.squaredNorm();
            const double inner = 4.0 * t * ft * ft * tr2 /
                                 (factorial(l) * factorial(t - l) * factorial(t - l) * epsilon * epsilon);
            const double v = std::pow(inner, 1.0 / l) * std::ldexp(1.0, nq) + l - 1;
            worst = std::max(worst, v);
        }
    }
    const long long l_plan = static_cast<long long>(std::ceil(worst));
    return std::max<long long>(l_plan, 2 * n + 1);
}

RepetitionPlan plan_repetitions_detail(int n, double delta) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    if (!(delta > 0.0)) throw Error(ErrorCode::domain, "delta must be positive");
    const double raw = std::ceil(8.0 * std::log(2.0 * n / delta));
    RepetitionPlan p;
    if (raw < 1.0) {
        p.repetitions = 1;
        p.clamped = true;
    } else {
        p.repetitions = static_cast<int>(raw);
    }
    return p;
}

int plan_repetitions(int n, double delta) {
    if (!(delta < 1.0)) throw Error(ErrorCode::domain, "delta must lie in (0, 1)");
    return plan_repetitions_detail(n, delta).repetitions;
}

}  // namespace kst
