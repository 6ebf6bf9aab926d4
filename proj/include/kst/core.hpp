#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kst {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

enum class ErrorCode {
    invalid_dimension,
    domain,
    validation,
    dimension_mismatch,
    degenerate_commutator,
    subspace_terminated,
    ill_conditioned,
    resource,
    insufficient_data,
    degenerate_input,
    io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every library failure is reported through this type; code() is stable and
// maps one-to-one onto the error names emitted by the command line tool.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Largest register size for single-copy dense operators.
inline constexpr int kMaxQubits = 14;

// 2^n, throwing invalid_dimension outside [1, kMaxQubits].
std::size_t hilbert_dim(int n_qubits);

double max_abs(const CMatrix& m);
double hermiticity_defect(const CMatrix& m);

}  // namespace kst
