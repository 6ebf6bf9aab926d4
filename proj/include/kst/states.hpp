#pragma once

#include "kst/core.hpp"
#include "kst/pauli.hpp"

#include <cstdint>
#include <vector>

namespace kst {

class PureState {
public:
    PureState(int n_qubits, CVector amplitudes);

    int n_qubits() const noexcept { return n_qubits_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(amplitudes_.size()); }
    const CVector& amplitudes() const noexcept { return amplitudes_; }

private:
    int n_qubits_;
    CVector amplitudes_;
};

class DensityMatrix {
public:
    // full: Hermiticity, unit trace and PSD (eigenvalue) checks.
    // structural: Hermiticity and trace only, for outputs PSD by construction.
    enum class Check { full, structural };

    DensityMatrix(int n_qubits, CMatrix data, Check check = Check::full);

    static DensityMatrix from_pure(const PureState& psi);

    int n_qubits() const noexcept { return n_qubits_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.rows()); }
    const CMatrix& matrix() const noexcept { return data_; }

private:
    int n_qubits_;
    CMatrix data_;
};

// Hermitian generator H. The Pauli expansion is computed once at
// construction and shared by the shadow estimators.
class Observable {
public:
    Observable(int n_qubits, CMatrix data);
    static Observable from_pauli_terms(int n_qubits, std::vector<PauliTerm> terms);

    int n_qubits() const noexcept { return n_qubits_; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.rows()); }
    const CMatrix& matrix() const noexcept { return data_; }
    const std::vector<PauliTerm>& pauli_terms() const noexcept { return terms_; }

private:
    Observable(int n_qubits, CMatrix data, std::vector<PauliTerm> terms);

    int n_qubits_;
    CMatrix data_;
    std::vector<PauliTerm> terms_;
};

struct Spectrum {
    RVector eigenvalues;   // descending
    CMatrix eigenvectors;  // columns
    double zero_tol = 1e-10;
};

inline constexpr double kDefaultZeroTol = 1e-10;

Spectrum spectrum(const DensityMatrix& rho, double zero_tol = kDefaultZeroTol);
CMatrix reconstruct(const Spectrum& s);

PureState ghz_state(int n_qubits);
PureState haar_random_state(int n_qubits, std::uint64_t seed);
PureState basis_state(int n_qubits, std::size_t index);

DensityMatrix maximally_mixed(int n_qubits);
DensityMatrix pseudo_pure(const PureState& psi, double p);
DensityMatrix bound_entangled(int n_qubits, int k);
// 1 / sum_{i<=k} C(N, i), the weight of the symmetric projector in bound_entangled.
double bound_entangled_lambda(int n_qubits, int k);
// rank = 0 selects full rank.
DensityMatrix random_density_matrix(int n_qubits, int rank, std::uint64_t seed);

Observable collective_spin_z(int n_qubits);
Observable pauli_string_observable(const std::vector<std::uint8_t>& ops);
// Uniform over the 4^N - 1 non-identity strings.
std::vector<std::uint8_t> random_pauli_string(int n_qubits, std::uint64_t seed);
// GUE sample normalized to unit operator 2-norm scale (Frobenius norm sqrt(d)).
Observable random_observable(int n_qubits, std::uint64_t seed);

double fidelity(const DensityMatrix& rho, const PureState& psi);

}  // namespace kst
