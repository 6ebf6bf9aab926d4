#include "kst/qfi.hpp"

#include "mp_real.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kst {

namespace {

using detail::MpReal;

void require_match(const DensityMatrix& rho, const Observable& H) {
    if (rho.dim() != H.dim()) throw Error(ErrorCode::dimension_mismatch, "state and observable dimensions differ");
}

void require_match(const DensityMatrix& rho, const HermitianOperator& X) {
    if (X.basis != OperatorBasis::computational) {
        throw Error(ErrorCode::validation, "operator must be given in the computational basis");
    }
    if (static_cast<std::size_t>(X.data.rows()) != rho.dim() ||
        static_cast<std::size_t>(X.data.cols()) != rho.dim()) {
        throw Error(ErrorCode::dimension_mismatch, "operator dimension differs from the state");
    }
}

CMatrix hermitian_part(const CMatrix& m) { return (m + m.adjoint()) * 0.5; }

// Re tr(A B) without forming the product.
double trace_product_re(const CMatrix& a, const CMatrix& b) {
    return (a.cwiseProduct(b.transpose())).sum().real();
}

double commutator_norm_sq(const SpectralContext& ctx) {
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    const Eigen::Index d = p.size();
    double s = 0.0;
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) {
            const double dp = p[a] - p[b];
            s += dp * dp * std::norm(h(a, b));
        }
    return s;
}

void require_nondegenerate(const SpectralContext& ctx) {
    if (std::sqrt(commutator_norm_sq(ctx)) <= kCommutatorTol) {
        throw Error(ErrorCode::degenerate_commutator, "rho and H commute; the Krylov construction is empty");
    }
}

}  // namespace

SpectralContext::SpectralContext(const DensityMatrix& rho, const Observable& H, double zero_tol)
    : spec_(kst::spectrum(rho, zero_tol)) {
    require_match(rho, H);
    h_eig_ = spec_.eigenvectors.adjoint() * H.matrix() * spec_.eigenvectors;
}

SpectralMeasure spectral_measure(const SpectralContext& ctx, double rank_tol) {
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    const Eigen::Index d = p.size();
    std::vector<std::pair<double, double>> atoms;  // (x, w)
    double total = 0.0;
    for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
            const double dp = p[a] - p[b];
            const double w = 2.0 * dp * dp * std::norm(h(a, b));
            if (w == 0.0) continue;
            atoms.emplace_back(0.5 * (p[a] + p[b]), w);
            total += w;
        }
    }
    if (std::sqrt(total) <= kCommutatorTol) {
        throw Error(ErrorCode::degenerate_commutator, "rho and H commute; the Krylov construction is empty");
    }
    const double floor_w = rank_tol * rank_tol * total;
    std::erase_if(atoms, [&](const auto& a) { return a.second <= floor_w; });
    std::sort(atoms.begin(), atoms.end());

    SpectralMeasure m;
    double sw = 0.0, swx = 0.0, last_x = -1.0;
    for (const auto& [x, w] : atoms) {
        if (sw > 0.0 && x - last_x > rank_tol) {
            m.x.push_back(swx / sw);
            m.w.push_back(sw);
            sw = swx = 0.0;
        }
        sw += w;
        swx += w * x;
        last_x = x;
    }
    if (sw > 0.0) {
        m.x.push_back(swx / sw);
        m.w.push_back(sw);
    }
    return m;
}

HermitianOperator commutator_C(const DensityMatrix& rho, const Observable& H) {
    require_match(rho, H);
    const CMatrix& r = rho.matrix();
    const CMatrix& h = H.matrix();
    CMatrix c = cplx(0.0, 1.0) * (r * h - h * r);
    c = hermitian_part(c);
    if (c.norm() <= kCommutatorTol) {
        throw Error(ErrorCode::degenerate_commutator, "rho and H commute; the Krylov construction is empty");
    }
    return {std::move(c), OperatorBasis::computational};
}

HermitianOperator apply_R(const DensityMatrix& rho, const HermitianOperator& X) {
    require_match(rho, X);
    const CMatrix rx = rho.matrix() * X.data;
    return {hermitian_part(rx), OperatorBasis::computational};
}

HermitianOperator project_to_support(const Spectrum& s, const HermitianOperator& X) {
    const CMatrix& v = s.eigenvectors;
    CMatrix xe = v.adjoint() * X.data * v;
    const auto& p = s.eigenvalues;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        for (Eigen::Index l = 0; l < p.size(); ++l)
            if (p[k] + p[l] <= 0.0) xe(k, l) = 0.0;
    return {hermitian_part(v * xe * v.adjoint()), OperatorBasis::computational};
}

HermitianOperator apply_R_inverse(const DensityMatrix& rho, const HermitianOperator& X) {
    require_match(rho, X);
    const Spectrum s = spectrum(rho);
    const CMatrix& v = s.eigenvectors;
    CMatrix xe = v.adjoint() * X.data * v;
    const auto& p = s.eigenvalues;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        for (Eigen::Index l = 0; l < p.size(); ++l) {
            const double sum = p[k] + p[l];
            xe(k, l) = sum > 0.0 ? xe(k, l) * (2.0 / sum) : cplx(0.0, 0.0);
        }
    return {hermitian_part(v * xe * v.adjoint()), OperatorBasis::computational};
}

HermitianOperator sld_L(const DensityMatrix& rho, const Observable& H) {
    return apply_R_inverse(rho, commutator_C(rho, H));
}

double weighted_inner(const DensityMatrix& rho, const HermitianOperator& X, const HermitianOperator& Y) {
    require_match(rho, X);
    require_match(rho, Y);
    // tr[rho (XY + YX)/2] = Re tr(rho X Y) for Hermitian arguments.
    const CMatrix rx = rho.matrix() * X.data;
    return trace_product_re(rx, Y.data);
}

double qfi_exact(const SpectralContext& ctx) {
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    const Eigen::Index d = p.size();
    double f = 0.0;
    for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
            const double sum = p[a] + p[b];
            if (sum <= 0.0) continue;
            const double dp = p[a] - p[b];
            f += dp * dp / sum * std::norm(h(a, b));
        }
    }
    return 4.0 * f;
}

double qfi_exact(const DensityMatrix& rho, const Observable& H) {
    require_match(rho, H);
    return qfi_exact(SpectralContext(rho, H));
}

MomentSequence moments_exact(const SpectralContext& ctx, int m) {
    if (m < 1) throw Error(ErrorCode::domain, "moment count must be positive");
    require_nondegenerate(ctx);
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    const Eigen::Index d = p.size();
    std::vector<double> t(static_cast<std::size_t>(m), 0.0);
    for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
            const double dp = p[a] - p[b];
            double w = 2.0 * dp * dp * std::norm(h(a, b));
            if (w == 0.0) continue;
            const double x = 0.5 * (p[a] + p[b]);
            for (int k = 0; k < m; ++k) {
                t[static_cast<std::size_t>(k)] += w;
                w *= x;
            }
        }
    }
    return {std::move(t), Provenance::exact};
}

MomentSequence moments_exact(const DensityMatrix& rho, const Observable& H, int m) {
    require_match(rho, H);
    return moments_exact(SpectralContext(rho, H), m);
}

MomentSequence moments_iterated(const DensityMatrix& rho, const Observable& H, int m) {
    if (m < 1) throw Error(ErrorCode::domain, "moment count must be positive");
    const HermitianOperator c = commutator_C(rho, H);
    HermitianOperator x = c;
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
        t.push_back(trace_product_re(c.data, x.data));
        if (k + 1 < m) x = apply_R(rho, x);
    }
    return {std::move(t), Provenance::exact};
}

int n_star(const SpectralContext& ctx, double rank_tol) {
    return static_cast<int>(spectral_measure(ctx, rank_tol).x.size());
}

int n_star(const DensityMatrix& rho, const Observable& H, double rank_tol) {
    require_match(rho, H);
    return n_star(SpectralContext(rho, H), rank_tol);
}

KrylovData krylov_data(const DensityMatrix& rho, const Observable& H, int n, double rank_tol) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    KrylovData kd;
    kd.rank_tol = rank_tol;
    kd.n_star = n_star(rho, H, rank_tol);
    HermitianOperator g = commutator_C(rho, H);
    for (int k = 0; k < n; ++k) {
        kd.generators.push_back(g);
        if (k + 1 < n) g = apply_R(rho, g);
    }
    return kd;
}

ProportionalityResult proportionality(const DensityMatrix& rho, const Observable& H) {
    require_match(rho, H);
    const CMatrix& r = rho.matrix();
    const CMatrix& h = H.matrix();
    const CMatrix r2 = r * r;
    const CMatrix c1 = r * h - h * r;
    const CMatrix c2 = r2 * h - h * r2;
    const double n1 = c1.squaredNorm();
    if (std::sqrt(n1) <= kCommutatorTol) {
        throw Error(ErrorCode::degenerate_commutator, "rho and H commute");
    }
    ProportionalityResult res;
    res.coefficient = (c1.conjugate().cwiseProduct(c2)).sum() / n1;
    const double n2 = c2.norm();
    res.residual = n2 > 0.0 ? (c2 - res.coefficient * c1).norm() / n2 : 0.0;
    return res;
}

bool proportionality_check(const DensityMatrix& rho, const Observable& H, double tol) {
    ProportionalityResult r = proportionality(rho, H);
    return r.residual <= tol;
}

KrylovHierarchy krylov_hierarchy(const SpectralMeasure& measure, int n_max) {
    const int atoms = static_cast<int>(measure.x.size());
    if (atoms == 0) throw Error(ErrorCode::degenerate_commutator, "empty spectral measure");
    if (n_max == 0) n_max = atoms;
    if (n_max < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    if (n_max > atoms) {
        throw Error(ErrorCode::subspace_terminated,
                    "Krylov order " + std::to_string(n_max) + " exceeds n* = " + std::to_string(atoms));
    }
    const int n = n_max;
    const auto un = static_cast<std::size_t>(n);

    // Conditioning of Hankel matrices grows geometrically with n, so the
    // precision is raised until the observed digit loss leaves a margin.
    int digits = 30 + 4 * n;
    for (int attempt = 0; attempt < 8; ++attempt) {
        const mpfr_prec_t bits = detail::bits_for_digits(digits);
        std::vector<MpReal> t;
        t.reserve(2 * un);
        for (std::size_t k = 0; k < 2 * un; ++k) t.emplace_back(bits);
        {
            MpReal pw(bits), x(bits);
            for (int j = 0; j < atoms; ++j) {
                mpfr_set_d(pw.get(), measure.w[static_cast<std::size_t>(j)], MPFR_RNDN);
                mpfr_set_d(x.get(), measure.x[static_cast<std::size_t>(j)], MPFR_RNDN);
                for (std::size_t k = 0; k < 2 * un; ++k) {
                    mpfr_add(t[k].get(), t[k].get(), pw.get(), MPFR_RNDN);
                    mpfr_mul(pw.get(), pw.get(), x.get(), MPFR_RNDN);
                }
            }
        }
        // Cholesky of A(k,l) = T_{k+l+1}, lower factor stored row-major.
        std::vector<MpReal> lf;
        lf.reserve(un * un);
        for (std::size_t i = 0; i < un * un; ++i) lf.emplace_back(bits);
        std::vector<MpReal> y;
        y.reserve(un);
        for (std::size_t i = 0; i < un; ++i) y.emplace_back(bits);
        MpReal acc(bits), tmp(bits);
        bool failed = false;
        double worst_loss = 0.0;
        std::vector<double> pivot_log10(un);
        for (std::size_t j = 0; j < un && !failed; ++j) {
            mpfr_set(acc.get(), t[2 * j + 1].get(), MPFR_RNDN);
            for (std::size_t k = 0; k < j; ++k) {
                mpfr_mul(tmp.get(), lf[j * un + k].get(), lf[j * un + k].get(), MPFR_RNDN);
                mpfr_sub(acc.get(), acc.get(), tmp.get(), MPFR_RNDN);
            }
            if (mpfr_sgn(acc.get()) <= 0) {
                failed = true;
                break;
            }
            MpReal lg(bits);
            mpfr_div(tmp.get(), acc.get(), t[1].get(), MPFR_RNDN);
            mpfr_log10(lg.get(), tmp.get(), MPFR_RNDN);
            pivot_log10[j] = lg.to_double();
            mpfr_div(tmp.get(), t[2 * j + 1].get(), acc.get(), MPFR_RNDN);
            mpfr_log10(lg.get(), tmp.get(), MPFR_RNDN);
            worst_loss = std::max(worst_loss, lg.to_double());
            mpfr_sqrt(lf[j * un + j].get(), acc.get(), MPFR_RNDN);
            for (std::size_t i = j + 1; i < un; ++i) {
                mpfr_set(acc.get(), t[i + j + 1].get(), MPFR_RNDN);
                for (std::size_t k = 0; k < j; ++k) {
                    mpfr_mul(tmp.get(), lf[i * un + k].get(), lf[j * un + k].get(), MPFR_RNDN);
                    mpfr_sub(acc.get(), acc.get(), tmp.get(), MPFR_RNDN);
                }
                mpfr_div(lf[i * un + j].get(), acc.get(), lf[j * un + j].get(), MPFR_RNDN);
            }
        }
        if (failed || worst_loss + 25.0 > digits) {
            digits = std::max(2 * digits, static_cast<int>(worst_loss) + 60);
            continue;
        }
        // Forward substitution y = L^{-1} b with b_k = T_k.
        for (std::size_t i = 0; i < un; ++i) {
            mpfr_set(acc.get(), t[i].get(), MPFR_RNDN);
            for (std::size_t k = 0; k < i; ++k) {
                mpfr_mul(tmp.get(), lf[i * un + k].get(), y[k].get(), MPFR_RNDN);
                mpfr_sub(acc.get(), acc.get(), tmp.get(), MPFR_RNDN);
            }
            mpfr_div(y[i].get(), acc.get(), lf[i * un + i].get(), MPFR_RNDN);
        }
        KrylovHierarchy h;
        h.n_star = atoms;
        h.digits = digits;
        h.pivot_log10 = std::move(pivot_log10);
        MpReal partial(bits);
        for (std::size_t i = 0; i < un; ++i) {
            mpfr_sqr(tmp.get(), y[i].get(), MPFR_RNDN);
            h.increments.push_back(tmp.to_double());
            mpfr_add(partial.get(), partial.get(), tmp.get(), MPFR_RNDN);
            h.bounds.push_back(partial.to_double());
        }
        return h;
    }
    throw Error(ErrorCode::ill_conditioned,
                "Hankel factorization did not stabilize up to " + std::to_string(digits) + " digits");
}

KrylovHierarchy krylov_hierarchy(const SpectralContext& ctx, int n_max, double rank_tol) {
    return krylov_hierarchy(spectral_measure(ctx, rank_tol), n_max);
}

double krylov_bound_exact(const SpectralContext& ctx, int n, double rank_tol) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    return krylov_hierarchy(ctx, n, rank_tol).bounds.back();
}

double krylov_bound_exact(const DensityMatrix& rho, const Observable& H, int n, double rank_tol) {
    require_match(rho, H);
    return krylov_bound_exact(SpectralContext(rho, H), n, rank_tol);
}

KrylovProjection krylov_projection(const DensityMatrix& rho, const Observable& H, int n, double rank_tol) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    const HermitianOperator c = commutator_C(rho, H);
    // Every Krylov operator X has eigenbasis entries X_ab = C_ab r_ab with real
    // r, so operators are carried as coefficient vectors over eigen-pairs a < b.
    // Working with dense matrices instead lets rounding seed directions outside
    // the Krylov space, which Gram-Schmidt amplifies step after step.
    const SpectralContext ctx(rho, H);
    const auto& p = ctx.p();
    const CMatrix& v_eig = ctx.spectrum().eigenvectors;
    const Eigen::Index d = p.size();
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    std::vector<cplx> c_ab;
    std::vector<double> x_ab, u_ab;
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b) {
            const cplx cv = cplx(0.0, p[a] - p[b]) * ctx.h_eigen()(a, b);
            const double sum = p[a] + p[b];
            if (std::norm(cv) == 0.0 || sum <= 0.0) continue;
            pairs.emplace_back(a, b);
            c_ab.push_back(cv);
            x_ab.push_back(0.5 * sum);
            u_ab.push_back(sum * std::norm(cv));  // both orderings, weight x |C_ab|^2
        }
    const Eigen::Index m = static_cast<Eigen::Index>(pairs.size());
    const Eigen::Map<const RVector> x(x_ab.data(), m), u(u_ab.data(), m);
    auto inner = [&](const RVector& r, const RVector& s) { return (u.array() * r.array() * s.array()).sum(); };
    auto to_comp = [&](const RVector& r) -> CMatrix {
        CMatrix e = CMatrix::Zero(d, d);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto [a, b] = pairs[static_cast<std::size_t>(i)];
            e(a, b) = c_ab[static_cast<std::size_t>(i)] * r[i];
            e(b, a) = std::conj(e(a, b));
        }
        return hermitian_part(v_eig * e * v_eig.adjoint());
    };

    std::vector<RVector> basis;
    RVector v = RVector::Ones(m);
    for (int k = 0; k < n; ++k) {
        const double scale = std::sqrt(inner(v, v));
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) v -= inner(q, v) * q;
        const double norm = std::sqrt(std::max(inner(v, v), 0.0));
        if (norm <= rank_tol * scale) break;
        basis.push_back(v / norm);
        v = basis.back().cwiseProduct(x);
    }
    const RVector l = x.cwiseInverse();
    RVector ln = RVector::Zero(m);
    for (const auto& q : basis) ln += inner(q, l) * q;

    KrylovProjection out;
    out.achieved_order = static_cast<int>(basis.size());
    out.bound = inner(ln, ln);
    out.residual_norm_sq = inner(l - ln, l - ln);
    out.L = to_comp(l);
    out.L_n = to_comp(ln);
    for (const auto& q : basis) out.basis.push_back(to_comp(q));
    const HermitianOperator resid{out.L - out.L_n, OperatorBasis::computational};
    HermitianOperator g = c;
    for (int k = 0; k < out.achieved_order; ++k) {
        out.orthogonality_residual = std::max(out.orthogonality_residual, std::abs(weighted_inner(rho, g, resid)));
        g = apply_R(rho, g);
    }
    return out;
}

HankelSystem build_hankel(const MomentSequence& t, int n) {
    if (n < 1) throw Error(ErrorCode::domain, "Hankel order must be positive");
    if (t.values.size() < 2 * static_cast<std::size_t>(n)) {
        throw Error(ErrorCode::insufficient_data, "Hankel order n needs 2n moments");
    }
    HankelSystem hs;
    hs.A.resize(n, n);
    hs.b.resize(n);
    for (int k = 0; k < n; ++k) {
        hs.b[k] = t.values[static_cast<std::size_t>(k)];
        for (int l = 0; l < n; ++l) hs.A(k, l) = t.values[static_cast<std::size_t>(k + l + 1)];
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(hs.A, Eigen::EigenvaluesOnly);
    const RVector& ev = es.eigenvalues();
    hs.min_eigenvalue = ev.minCoeff();
    const double amax = ev.cwiseAbs().maxCoeff();
    hs.condition_number =
        hs.min_eigenvalue > 0.0 ? amax / hs.min_eigenvalue : std::numeric_limits<double>::infinity();
    return hs;
}

int hankel_rank(const MomentSequence& t, double rank_tol) {
    const int n_max = static_cast<int>(t.values.size() / 2);
    if (n_max < 1) throw Error(ErrorCode::insufficient_data, "need at least two moments");
    const double t1 = t.values[1];
    int r = 0;
    for (int n = 1; n <= n_max; ++n) {
        if (build_hankel(t, n).min_eigenvalue > rank_tol * t1) r = n;
        else break;
    }
    return r;
}

}  // namespace kst
