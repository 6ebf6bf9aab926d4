#pragma once

#include "kst/qfi.hpp"

#include <cstdint>
#include <vector>

namespace kst {

struct MuTable {
    int k = 0;
    std::vector<std::int64_t> exact;  // integer second differences
    std::vector<double> coefficients; // mu_0 .. mu_{k+2}
};

MuTable mu_coefficients(int k);

// (1/2^k) sum_l mu_l tr(H rho^l H rho^{k+2-l}) from cached powers of rho.
double t_k_polynomial(const DensityMatrix& rho, const Observable& H, int k);
// T_0 .. T_{m-1} sharing one power ladder.
std::vector<double> t_k_polynomial_all(const DensityMatrix& rho, const Observable& H, int m);

// Operator on t copies of an N-qubit register; copy 0 is the most
// significant block of the row/column index.
struct MultiCopyOperator {
    int copies = 0;
    int n_qubits_per_copy = 0;
    CMatrix data;
};

inline constexpr int kMaxMultiCopyQubits = 12;
inline constexpr int kMaxSymmetrizedCopies = 6;

// Hermitian part of O^(k+2); trace against any product of Hermitian
// single-copy operators is unchanged by taking the Hermitian part.
MultiCopyOperator build_O(const Observable& H, int k);
MultiCopyOperator symmetrize_O(const MultiCopyOperator& O);
MultiCopyOperator reduced_O_l(const MultiCopyOperator& O_sym, const DensityMatrix& rho, int l);

// tr(O X_1 (x) ... (x) X_t) for single-copy operators X_j.
cplx multicopy_trace(const MultiCopyOperator& O, const std::vector<const CMatrix*>& factors);
double multicopy_trace(const MultiCopyOperator& O, const DensityMatrix& rho);

// Variance bound for a single subsample estimate of T_k with L snapshots.
double variance_bound(const DensityMatrix& rho, const Observable& H, int k, long long L);
// Same, reusing the symmetrized operator.
double variance_bound(const MultiCopyOperator& O_sym, const DensityMatrix& rho, long long L);

long long plan_subsample_size(const DensityMatrix& rho, const Observable& H, int n, double epsilon);

struct RepetitionPlan {
    int repetitions = 1;
    bool clamped = false;
};

RepetitionPlan plan_repetitions_detail(int n, double delta);
int plan_repetitions(int n, double delta);

}  // namespace kst
