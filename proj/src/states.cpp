#include "kst/states.hpp"

#include "kst/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace kst {

namespace {

constexpr double kHermTol = 1e-12;
constexpr double kTraceTol = 1e-12;
constexpr double kPsdTol = 1e-10;

void require_square(const CMatrix& m, int n_qubits, const char* what) {
    const auto d = static_cast<Eigen::Index>(hilbert_dim(n_qubits));
    if (m.rows() != d || m.cols() != d) {
        throw Error(ErrorCode::dimension_mismatch,
                    std::string(what) + " must be " + std::to_string(d) + "x" + std::to_string(d));
    }
}

CMatrix hermitian_part(const CMatrix& m) { return (m + m.adjoint()) * 0.5; }

cplx complex_normal(Rng& rng) {
    const double re = rng.normal();
    const double im = rng.normal();
    return {re * M_SQRT1_2, im * M_SQRT1_2};
}

double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return std::round(r);
}

}  // namespace

PureState::PureState(int n_qubits, CVector amplitudes)
    : n_qubits_(n_qubits), amplitudes_(std::move(amplitudes)) {
    const auto d = static_cast<Eigen::Index>(hilbert_dim(n_qubits));
    if (amplitudes_.size() != d) {
        throw Error(ErrorCode::dimension_mismatch, "amplitude vector length must be 2^N");
    }
    if (std::abs(amplitudes_.squaredNorm() - 1.0) > 1e-12) {
        throw Error(ErrorCode::validation, "pure state must have unit norm");
    }
}

DensityMatrix::DensityMatrix(int n_qubits, CMatrix data, Check check)
    : n_qubits_(n_qubits), data_(std::move(data)) {
    require_square(data_, n_qubits, "density matrix");
    if (hermiticity_defect(data_) > kHermTol) {
        throw Error(ErrorCode::validation, "density matrix is not Hermitian");
    }
    if (std::abs(data_.trace() - cplx(1.0, 0.0)) > kTraceTol) {
        throw Error(ErrorCode::validation, "density matrix must have unit trace");
    }
    if (check == Check::full) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(data_, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -kPsdTol) {
            throw Error(ErrorCode::validation, "density matrix is not positive semidefinite");
        }
    }
}

DensityMatrix DensityMatrix::from_pure(const PureState& psi) {
    CMatrix m = psi.amplitudes() * psi.amplitudes().adjoint();
    return DensityMatrix(psi.n_qubits(), hermitian_part(m), Check::structural);
}

Observable::Observable(int n_qubits, CMatrix data) : n_qubits_(n_qubits), data_(std::move(data)) {
    require_square(data_, n_qubits, "observable");
    if (hermiticity_defect(data_) > kHermTol) {
        throw Error(ErrorCode::validation, "observable is not Hermitian");
    }
    terms_ = pauli_decompose(data_, n_qubits);
}

Observable::Observable(int n_qubits, CMatrix data, std::vector<PauliTerm> terms)
    : n_qubits_(n_qubits), data_(std::move(data)), terms_(std::move(terms)) {}

Observable Observable::from_pauli_terms(int n_qubits, std::vector<PauliTerm> terms) {
    CMatrix m = pauli_sum_matrix(n_qubits, terms);
    terms.erase(std::remove_if(terms.begin(), terms.end(),
                               [](const PauliTerm& t) { return t.coefficient == 0.0; }),
                terms.end());
    return Observable(n_qubits, std::move(m), std::move(terms));
}

Spectrum spectrum(const DensityMatrix& rho, double zero_tol) {
    if (zero_tol < 0.0) throw Error(ErrorCode::domain, "zero_tol must be nonnegative");
    if (hermiticity_defect(rho.matrix()) > kHermTol) {
        throw Error(ErrorCode::validation, "spectrum requires a Hermitian matrix");
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(rho.matrix());
    if (es.info() != Eigen::Success) {
        throw Error(ErrorCode::ill_conditioned, "Hermitian eigensolver did not converge");
    }
    const Eigen::Index d = es.eigenvalues().size();
    Spectrum s;
    s.zero_tol = zero_tol;
    s.eigenvalues = es.eigenvalues().reverse();
    s.eigenvectors = es.eigenvectors().rowwise().reverse();
    for (Eigen::Index k = 0; k < d; ++k) {
        if (s.eigenvalues[k] < zero_tol) s.eigenvalues[k] = 0.0;
    }
    const double total = s.eigenvalues.sum();
    if (total <= 0.0) throw Error(ErrorCode::validation, "state has no eigenvalue above zero_tol");
    s.eigenvalues /= total;
    return s;
}

CMatrix reconstruct(const Spectrum& s) {
    return s.eigenvectors * s.eigenvalues.cast<cplx>().asDiagonal() * s.eigenvectors.adjoint();
}

PureState ghz_state(int n_qubits) {
    const std::size_t d = hilbert_dim(n_qubits);
    CVector a = CVector::Zero(static_cast<Eigen::Index>(d));
    a[0] = M_SQRT1_2;
    a[static_cast<Eigen::Index>(d - 1)] = M_SQRT1_2;
    return PureState(n_qubits, std::move(a));
}

PureState haar_random_state(int n_qubits, std::uint64_t seed) {
    const std::size_t d = hilbert_dim(n_qubits);
    Rng rng(derive_seed(seed, {0x68616172ULL}));
    CVector a(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = complex_normal(rng);
    a.normalize();
    return PureState(n_qubits, std::move(a));
}

PureState basis_state(int n_qubits, std::size_t index) {
    const std::size_t d = hilbert_dim(n_qubits);
    if (index >= d) throw Error(ErrorCode::domain, "basis index out of range");
    CVector a = CVector::Zero(static_cast<Eigen::Index>(d));
    a[static_cast<Eigen::Index>(index)] = 1.0;
    return PureState(n_qubits, std::move(a));
}

DensityMatrix maximally_mixed(int n_qubits) {
    const std::size_t d = hilbert_dim(n_qubits);
    CMatrix m = CMatrix::Identity(d, d) / static_cast<double>(d);
    return DensityMatrix(n_qubits, std::move(m), DensityMatrix::Check::structural);
}

DensityMatrix pseudo_pure(const PureState& psi, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::domain, "mixing parameter p must lie in [0, 1]");
    const std::size_t d = psi.dim();
    CMatrix m = (1.0 - p) * (psi.amplitudes() * psi.amplitudes().adjoint());
    m.diagonal().array() += p / static_cast<double>(d);
    return DensityMatrix(psi.n_qubits(), hermitian_part(m), DensityMatrix::Check::structural);
}

double bound_entangled_lambda(int n_qubits, int k) {
    double s = 0.0;
    for (int i = 0; i <= k; ++i) s += binomial(n_qubits, i);
    return 1.0 / s;
}

DensityMatrix bound_entangled(int n_qubits, int k) {
    if (n_qubits < 2) throw Error(ErrorCode::invalid_dimension, "bound entangled state needs N >= 2");
    const std::size_t d = hilbert_dim(n_qubits);
    if (k < 1 || k > n_qubits / 2) throw Error(ErrorCode::domain, "k must lie in [1, floor(N/2)]");
    const double lambda = bound_entangled_lambda(n_qubits, k);
    CMatrix m = CMatrix::Zero(d, d);
    const std::size_t mask = d - 1;
    // |phi_i^pm><phi_i^pm| has entries 1/2 on (i,i), (ib,ib) and +-1/2 on (i,ib), (ib,i).
    auto add_projector = [&](std::size_t i, double weight, double sign) {
        const std::size_t ib = i ^ mask;
        m(i, i) += 0.5 * weight;
        m(ib, ib) += 0.5 * weight;
        m(i, ib) += 0.5 * sign * weight;
        m(ib, i) += 0.5 * sign * weight;
    };
    for (std::size_t i = 0; i < d; ++i) {
        const int w = std::popcount(i);
        if (w < k) {
            add_projector(i, lambda, 1.0);
        } else if (w == k) {
            add_projector(i, 0.5 * lambda, 1.0);
            add_projector(i, 0.5 * lambda, -1.0);
        }
    }
    return DensityMatrix(n_qubits, hermitian_part(m), DensityMatrix::Check::structural);
}

DensityMatrix random_density_matrix(int n_qubits, int rank, std::uint64_t seed) {
    const std::size_t d = hilbert_dim(n_qubits);
    if (rank == 0) rank = static_cast<int>(d);
    if (rank < 1 || static_cast<std::size_t>(rank) > d) {
        throw Error(ErrorCode::domain, "rank must lie in [1, 2^N]");
    }
    Rng rng(derive_seed(seed, {0x67696e69ULL}));
    CMatrix g(static_cast<Eigen::Index>(d), rank);
    for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = complex_normal(rng);
    CMatrix m = g * g.adjoint();
    m /= m.trace().real();
    return DensityMatrix(n_qubits, hermitian_part(m), DensityMatrix::Check::structural);
}

Observable collective_spin_z(int n_qubits) {
    hilbert_dim(n_qubits);
    std::vector<PauliTerm> terms;
    for (int q = 0; q < n_qubits; ++q) {
        PauliTerm t;
        t.coefficient = 0.5;
        t.ops.assign(n_qubits, 0);
        t.ops[q] = 3;
        terms.push_back(std::move(t));
    }
    return Observable::from_pauli_terms(n_qubits, std::move(terms));
}

Observable pauli_string_observable(const std::vector<std::uint8_t>& ops) {
    PauliTerm t;
    t.coefficient = 1.0;
    t.ops = ops;
    return Observable::from_pauli_terms(static_cast<int>(ops.size()), {t});
}

std::vector<std::uint8_t> random_pauli_string(int n_qubits, std::uint64_t seed) {
    const std::size_t d = hilbert_dim(n_qubits);
    Rng rng(derive_seed(seed, {0x7061756cULL}));
    const std::uint64_t idx = 1 + rng.below64(d * d - 1);
    std::vector<std::uint8_t> ops(n_qubits);
    std::uint64_t rest = idx;
    for (int q = n_qubits - 1; q >= 0; --q) {
        ops[q] = static_cast<std::uint8_t>(rest & 3U);
        rest >>= 2;
    }
    return ops;
}

Observable random_observable(int n_qubits, std::uint64_t seed) {
    const std::size_t d = hilbert_dim(n_qubits);
    Rng rng(derive_seed(seed, {0x67756521ULL}));
    CMatrix a(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = complex_normal(rng);
    CMatrix h = hermitian_part(a);
    h *= std::sqrt(static_cast<double>(d)) / h.norm();
    return Observable(n_qubits, hermitian_part(h));
}

double fidelity(const DensityMatrix& rho, const PureState& psi) {
    if (rho.dim() != psi.dim()) throw Error(ErrorCode::dimension_mismatch, "state dimensions differ");
    return (psi.amplitudes().adjoint() * rho.matrix() * psi.amplitudes())(0, 0).real();
}

}  // namespace kst
