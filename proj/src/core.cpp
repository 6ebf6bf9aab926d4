#include "kst/core.hpp"

namespace kst {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_dimension: return "invalid_dimension";
        case ErrorCode::domain: return "domain";
        case ErrorCode::validation: return "validation";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::degenerate_commutator: return "degenerate_commutator";
        case ErrorCode::subspace_terminated: return "subspace_terminated";
        case ErrorCode::ill_conditioned: return "ill_conditioned";
        case ErrorCode::resource: return "resource";
        case ErrorCode::insufficient_data: return "insufficient_data";
        case ErrorCode::degenerate_input: return "degenerate_input";
        case ErrorCode::io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

std::size_t hilbert_dim(int n_qubits) {
    if (n_qubits < 1 || n_qubits > kMaxQubits) {
        throw Error(ErrorCode::invalid_dimension,
                    "qubit count must lie in [1, " + std::to_string(kMaxQubits) +
                        "], got " + std::to_string(n_qubits));
    }
    return std::size_t{1} << n_qubits;
}

double max_abs(const CMatrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

double hermiticity_defect(const CMatrix& m) {
    return max_abs(m - m.adjoint());
}

}  // namespace kst
