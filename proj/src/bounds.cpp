#include "kst/bounds.hpp"

#include <cmath>

namespace kst {

std::string bound_label(const BoundValue& b) {
    switch (b.family) {
        case BoundFamily::legendre: return "Leg";
        case BoundFamily::sub_qfi: return "Sub";
        case BoundFamily::taylor: return "Tay" + std::to_string(b.order.value_or(0));
        case BoundFamily::krylov: return "Kry" + std::to_string(b.order.value_or(0));
    }
    return "?";
}

BoundValue legendre_bound(double f_ghz, int n_qubits) {
    if (!(f_ghz >= 0.0 && f_ghz <= 1.0)) throw Error(ErrorCode::domain, "GHZ fidelity must lie in [0, 1]");
    if (n_qubits < 1) throw Error(ErrorCode::invalid_dimension, "qubit count must be positive");
    const double n = n_qubits;
    const double v = f_ghz > 0.5 ? n * n * (1.0 - 2.0 * f_ghz) * (1.0 - 2.0 * f_ghz) : 0.0;
    return {v, BoundFamily::legendre, std::nullopt};
}

BoundValue sub_qfi_bound(const DensityMatrix& rho, const Observable& H) {
    if (rho.dim() != H.dim()) throw Error(ErrorCode::dimension_mismatch, "state and observable dimensions differ");
    const CMatrix c = rho.matrix() * H.matrix() - H.matrix() * rho.matrix();
    // -2 tr(c c) with c anti-Hermitian equals 2 ||c||_F^2.
    return {2.0 * c.squaredNorm(), BoundFamily::sub_qfi, std::nullopt};
}

BoundValue sub_qfi_bound(const SpectralContext& ctx) {
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    double s = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a)
        for (Eigen::Index b = a + 1; b < p.size(); ++b) {
            const double dp = p[a] - p[b];
            s += dp * dp * std::norm(h(a, b));
        }
    return {4.0 * s, BoundFamily::sub_qfi, std::nullopt};
}

BoundValue taylor_bound(const SpectralContext& ctx, int n) {
    if (n < 0) throw Error(ErrorCode::domain, "Taylor order must be nonnegative");
    const auto& p = ctx.p();
    const auto& h = ctx.h_eigen();
    double s = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a)
        for (Eigen::Index b = a + 1; b < p.size(); ++b) {
            const double dp = p[a] - p[b];
            const double w = dp * dp * std::norm(h(a, b));
            if (w == 0.0) continue;
            const double q = 1.0 - p[a] - p[b];
            double geo = 0.0, pw = 1.0;
            for (int m = 0; m <= n; ++m) {
                geo += pw;
                pw *= q;
            }
            s += w * geo;
        }
    return {4.0 * s, BoundFamily::taylor, n};
}

namespace {

BoundValue taylor_doubled(const DensityMatrix& rho, const Observable& H, int n) {
    if (rho.n_qubits() > kMaxDoubledQubits) {
        throw Error(ErrorCode::resource, "two-copy Taylor route is limited to N <= 6");
    }
    const Eigen::Index d = static_cast<Eigen::Index>(rho.dim());
    const Eigen::Index dd = d * d;
    const CMatrix id = CMatrix::Identity(d, d);
    const CMatrix& r = rho.matrix();
    auto kron = [&](const CMatrix& a, const CMatrix& b) {
        CMatrix out(dd, dd);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) out.block(i * d, j * d, d, d) = a(i, j) * b;
        return out;
    };
    const CMatrix r1 = kron(r, id);
    const CMatrix r2 = kron(id, r);
    const CMatrix diff = r1 - r2;
    const CMatrix dsq = diff * diff;
    const CMatrix g = CMatrix::Identity(dd, dd) - r1 - r2;
    // Swap times H (x) H: (S (H x H))_{(i,j),(k,l)} = H_{jk} H_{il}.
    const CMatrix& hm = H.matrix();
    CMatrix shh(dd, dd);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                for (Eigen::Index l = 0; l < d; ++l) shh(i * d + j, k * d + l) = hm(j, k) * hm(i, l);
    CMatrix term = dsq;
    CMatrix acc = CMatrix::Zero(dd, dd);
    for (int m = 0; m <= n; ++m) {
        acc += term;
        if (m < n) term = term * g;
    }
    const double v = 2.0 * (acc.cwiseProduct(shh.transpose())).sum().real();
    return {v, BoundFamily::taylor, n};
}

}  // namespace

BoundValue taylor_bound(const DensityMatrix& rho, const Observable& H, int n, TaylorRoute route) {
    if (n < 0) throw Error(ErrorCode::domain, "Taylor order must be nonnegative");
    if (rho.dim() != H.dim()) throw Error(ErrorCode::dimension_mismatch, "state and observable dimensions differ");
    if (route == TaylorRoute::doubled) return taylor_doubled(rho, H, n);
    return taylor_bound(SpectralContext(rho, H), n);
}

double relative_error(double b, double f_q) {
    if (!(f_q > 0.0)) throw Error(ErrorCode::domain, "relative error needs F_Q > 0");
    return std::abs(b - f_q) / f_q;
}

double relative_error(const BoundValue& b, double f_q) { return relative_error(b.value, f_q); }

}  // namespace kst
