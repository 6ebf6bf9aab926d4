#pragma once

#include "kst/core.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kst {

// Pauli letters are encoded I=0, X=1, Y=2, Z=3. Multi-qubit strings are
// indexed in base 4 with qubit 0 as the most significant digit, matching the
// Kronecker order used for dense operators.
using Matrix2c = Eigen::Matrix2cd;

const std::array<Matrix2c, 4>& pauli_basis();

struct PauliTerm {
    double coefficient = 0.0;
    std::vector<std::uint8_t> ops;  // one letter per qubit
};

std::vector<std::uint8_t> parse_pauli_string(std::string_view letters);
std::string format_pauli_string(const std::vector<std::uint8_t>& ops);

CMatrix pauli_string_matrix(const std::vector<std::uint8_t>& ops);
CMatrix pauli_sum_matrix(int n_qubits, const std::vector<PauliTerm>& terms);

// Coefficients tr(P M) for all 4^n strings, in base-4 order. O(n 4^n).
std::vector<cplx> pauli_traces(const CMatrix& m, int n_qubits);

// Hermitian expansion M = sum_P c_P P with |c_P| > drop_tol.
std::vector<PauliTerm> pauli_decompose(const CMatrix& m, int n_qubits, double drop_tol = 1e-14);

// Dense sum_P c_P P from base-4 ordered coefficients. O(n 4^n).
CMatrix pauli_vector_to_matrix(const std::vector<cplx>& coefficients, int n_qubits);
CMatrix pauli_vector_to_matrix(const std::vector<double>& coefficients, int n_qubits);

std::size_t pauli_index(const std::vector<std::uint8_t>& ops);

}  // namespace kst
