#pragma once

#include "kst/core.hpp"
#include "kst/states.hpp"

#include <vector>

namespace kst {

enum class OperatorBasis { computational, eigenbasis };

struct HermitianOperator {
    CMatrix data;
    OperatorBasis basis = OperatorBasis::computational;
};

enum class Provenance { exact, estimated };

struct MomentSequence {
    std::vector<double> values;  // T_0 ... T_{m-1}
    Provenance provenance = Provenance::exact;
};

struct HankelSystem {
    RMatrix A;  // A(k, l) = T_{k+l+1}
    RVector b;  // T_0 ... T_{n-1}
    double condition_number = 0.0;
    double min_eigenvalue = 0.0;
    bool clipped = false;
};

struct KrylovData {
    std::vector<HermitianOperator> generators;  // R^k(C), k = 0 .. n-1
    int n_star = 0;
    double rank_tol = 0.0;
};

inline constexpr double kDefaultRankTol = 1e-8;
inline constexpr double kCommutatorTol = 1e-12;

// Eigendecomposition of rho together with H rotated into the eigenbasis.
// Reused by every spectral quantity so that one diagonalization serves a
// whole row of bounds.
class SpectralContext {
public:
    SpectralContext(const DensityMatrix& rho, const Observable& H, double zero_tol = kDefaultZeroTol);

    const Spectrum& spectrum() const noexcept { return spec_; }
    const CMatrix& h_eigen() const noexcept { return h_eig_; }
    const RVector& p() const noexcept { return spec_.eigenvalues; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(h_eig_.rows()); }

private:
    Spectrum spec_;
    CMatrix h_eig_;
};

// Discrete measure sum_j w_j delta(x - x_j) with x = (p_a + p_b)/2 and
// w = (p_a - p_b)^2 |H_ab|^2 summed over ordered eigen-pairs. Every moment,
// bound and the QFI are integrals against it: T_k = sum w x^k, F_Q = 2 sum w / (2x).
// Pair values closer than rank_tol (absolute, x lies in [0, 1]) are merged and
// atoms carrying less than rank_tol^2 of the total weight are dropped.
struct SpectralMeasure {
    std::vector<double> x;
    std::vector<double> w;
};

SpectralMeasure spectral_measure(const SpectralContext& ctx, double rank_tol = kDefaultRankTol);

HermitianOperator commutator_C(const DensityMatrix& rho, const Observable& H);
HermitianOperator apply_R(const DensityMatrix& rho, const HermitianOperator& X);
HermitianOperator apply_R_inverse(const DensityMatrix& rho, const HermitianOperator& X);
HermitianOperator sld_L(const DensityMatrix& rho, const Observable& H);
double weighted_inner(const DensityMatrix& rho, const HermitianOperator& X, const HermitianOperator& Y);

// Zeroes the block of X (given in the computational basis) on which both
// eigenvalues of rho vanish.
HermitianOperator project_to_support(const Spectrum& s, const HermitianOperator& X);

double qfi_exact(const DensityMatrix& rho, const Observable& H);
double qfi_exact(const SpectralContext& ctx);

MomentSequence moments_exact(const DensityMatrix& rho, const Observable& H, int m);
MomentSequence moments_exact(const SpectralContext& ctx, int m);
// Same moments by repeated application of R to C and a trace per order.
MomentSequence moments_iterated(const DensityMatrix& rho, const Observable& H, int m);

int n_star(const DensityMatrix& rho, const Observable& H, double rank_tol = kDefaultRankTol);
int n_star(const SpectralContext& ctx, double rank_tol = kDefaultRankTol);

KrylovData krylov_data(const DensityMatrix& rho, const Observable& H, int n,
                       double rank_tol = kDefaultRankTol);

struct ProportionalityResult {
    bool proportional = false;
    cplx coefficient{0.0, 0.0};  // least-squares c in [rho^2, H] ~ c [rho, H]
    double residual = 0.0;       // ||[rho^2,H] - c[rho,H]||_F / ||[rho^2,H]||_F
};

ProportionalityResult proportionality(const DensityMatrix& rho, const Observable& H);
bool proportionality_check(const DensityMatrix& rho, const Observable& H, double tol = 1e-8);

// Exact hierarchy B_1 .. B_n from one Cholesky factorization of the n x n
// Hankel matrix, carried out in extended precision on the spectral measure.
// B_m is the partial sum of y_i^2 with y = L^{-1} b, so the increments
// B_{m+1} - B_m = y_m^2 are available without cancellation.
struct KrylovHierarchy {
    int n_star = 0;
    std::vector<double> bounds;        // B_1 .. B_n
    std::vector<double> increments;    // B_1, B_2 - B_1, ...
    std::vector<double> pivot_log10;   // log10 of Cholesky pivot / T_1
    int digits = 0;                    // decimal working precision used
};

KrylovHierarchy krylov_hierarchy(const SpectralContext& ctx, int n_max = 0,
                                 double rank_tol = kDefaultRankTol);
KrylovHierarchy krylov_hierarchy(const SpectralMeasure& measure, int n_max);

double krylov_bound_exact(const DensityMatrix& rho, const Observable& H, int n,
                          double rank_tol = kDefaultRankTol);
double krylov_bound_exact(const SpectralContext& ctx, int n, double rank_tol = kDefaultRankTol);

// Orthonormal Krylov basis under <.,.>_rho (re-orthogonalized Gram-Schmidt),
// and the projection L_n of the SLD-like operator onto it.
struct KrylovProjection {
    std::vector<CMatrix> basis;
    CMatrix L;
    CMatrix L_n;
    double bound = 0.0;                 // ||L_n||^2_rho
    double residual_norm_sq = 0.0;      // ||L - L_n||^2_rho
    double orthogonality_residual = 0.0;  // max_k |<G_k, L - L_n>_rho|
    int achieved_order = 0;             // basis size; < n when the subspace terminated
};

KrylovProjection krylov_projection(const DensityMatrix& rho, const Observable& H, int n,
                                   double rank_tol = kDefaultRankTol);

HankelSystem build_hankel(const MomentSequence& t, int n);
// Largest n (with 2n <= number of moments) whose double-precision Hankel
// matrix has min eigenvalue > rank_tol * T_1.
int hankel_rank(const MomentSequence& t, double rank_tol = kDefaultRankTol);

}  // namespace kst
