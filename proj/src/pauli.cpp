#include "kst/pauli.hpp"

#include <algorithm>
#include <cmath>

namespace kst {

const std::array<Matrix2c, 4>& pauli_basis() {
    static const std::array<Matrix2c, 4> basis = [] {
        const cplx i(0.0, 1.0);
        std::array<Matrix2c, 4> b;
        b[0] << 1, 0, 0, 1;
        b[1] << 0, 1, 1, 0;
        b[2] << 0, -i, i, 0;
        b[3] << 1, 0, 0, -1;
        return b;
    }();
    return basis;
}

std::vector<std::uint8_t> parse_pauli_string(std::string_view letters) {
    std::vector<std::uint8_t> ops;
    ops.reserve(letters.size());
    for (char c : letters) {
        switch (c) {
            case 'I': case 'i': ops.push_back(0); break;
            case 'X': case 'x': ops.push_back(1); break;
            case 'Y': case 'y': ops.push_back(2); break;
            case 'Z': case 'z': ops.push_back(3); break;
            default:
                throw Error(ErrorCode::validation,
                            std::string("unknown Pauli letter '") + c + "'");
        }
    }
    if (ops.empty()) throw Error(ErrorCode::invalid_dimension, "empty Pauli string");
    return ops;
}

std::string format_pauli_string(const std::vector<std::uint8_t>& ops) {
    static constexpr char letters[] = {'I', 'X', 'Y', 'Z'};
    std::string s;
    for (auto o : ops) s.push_back(letters[o & 3]);
    return s;
}

CMatrix pauli_string_matrix(const std::vector<std::uint8_t>& ops) {
    const std::size_t d = hilbert_dim(static_cast<int>(ops.size()));
    // Pauli strings are monomial: one nonzero per row.
    CMatrix m = CMatrix::Zero(d, d);
    const int n = static_cast<int>(ops.size());
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t row = 0;
        cplx amp(1.0, 0.0);
        for (int q = 0; q < n; ++q) {
            const int bit = static_cast<int>((col >> (n - 1 - q)) & 1U);
            const auto& p = pauli_basis()[ops[q]];
            const int out = (ops[q] == 1 || ops[q] == 2) ? 1 - bit : bit;
            amp *= p(out, bit);
            row |= static_cast<std::size_t>(out) << (n - 1 - q);
        }
        m(row, col) = amp;
    }
    return m;
}

CMatrix pauli_sum_matrix(int n_qubits, const std::vector<PauliTerm>& terms) {
    const std::size_t d = hilbert_dim(n_qubits);
    CMatrix m = CMatrix::Zero(d, d);
    for (const auto& t : terms) {
        if (static_cast<int>(t.ops.size()) != n_qubits) {
            throw Error(ErrorCode::dimension_mismatch, "Pauli term length differs from qubit count");
        }
        m += t.coefficient * pauli_string_matrix(t.ops);
    }
    return m;
}

std::size_t pauli_index(const std::vector<std::uint8_t>& ops) {
    std::size_t idx = 0;
    for (auto o : ops) idx = idx * 4 + o;
    return idx;
}

std::vector<cplx> pauli_traces(const CMatrix& m, int n_qubits) {
    const std::size_t d = hilbert_dim(n_qubits);
    if (static_cast<std::size_t>(m.rows()) != d || static_cast<std::size_t>(m.cols()) != d) {
        throw Error(ErrorCode::dimension_mismatch, "matrix size does not match qubit count");
    }
    // Work array a[row * d + col]. For each qubit the four entries differing in
    // that qubit's row/col bits are replaced by tr(sigma block), storing the
    // letter p as (row bit, col bit) = (p >> 1, p & 1).
    std::vector<cplx> a(d * d);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) a[r * d + c] = m(r, c);
    const cplx i(0.0, 1.0);
    for (int q = 0; q < n_qubits; ++q) {
        const std::size_t bit = std::size_t{1} << (n_qubits - 1 - q);
        for (std::size_t r = 0; r < d; ++r) {
            if (r & bit) continue;
            for (std::size_t c = 0; c < d; ++c) {
                if (c & bit) continue;
                cplx& m00 = a[r * d + c];
                cplx& m01 = a[r * d + (c | bit)];
                cplx& m10 = a[(r | bit) * d + c];
                cplx& m11 = a[(r | bit) * d + (c | bit)];
                const cplx tI = m00 + m11;
                const cplx tX = m01 + m10;
                const cplx tY = i * (m01 - m10);
                const cplx tZ = m00 - m11;
                m00 = tI;
                m01 = tX;
                m10 = tY;
                m11 = tZ;
            }
        }
    }
    std::vector<cplx> out(d * d);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            std::size_t idx = 0;
            for (int q = 0; q < n_qubits; ++q) {
                const int shift = n_qubits - 1 - q;
                const std::size_t p = (((r >> shift) & 1U) << 1) | ((c >> shift) & 1U);
                idx = idx * 4 + p;
            }
            out[idx] = a[r * d + c];
        }
    }
    return out;
}

CMatrix pauli_vector_to_matrix(const std::vector<cplx>& coefficients, int n_qubits) {
    const std::size_t d = hilbert_dim(n_qubits);
    if (coefficients.size() != d * d) throw Error(ErrorCode::dimension_mismatch, "expected 4^n Pauli coefficients");
    // Inverse of the pauli_traces butterfly, starting from the (row bit, col
    // bit) = (p >> 1, p & 1) layout.
    CMatrix a(d, d);
    for (std::size_t idx = 0; idx < coefficients.size(); ++idx) {
        std::size_t r = 0, c = 0;
        for (int q = 0; q < n_qubits; ++q) {
            const int shift = n_qubits - 1 - q;
            const std::size_t p = (idx >> (2 * shift)) & 3U;
            r |= (p >> 1) << shift;
            c |= (p & 1U) << shift;
        }
        a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = coefficients[idx];
    }
    const cplx i(0.0, 1.0);
    for (int q = 0; q < n_qubits; ++q) {
        const std::size_t bit = std::size_t{1} << (n_qubits - 1 - q);
        for (std::size_t r = 0; r < d; ++r) {
            if (r & bit) continue;
            for (std::size_t c = 0; c < d; ++c) {
                if (c & bit) continue;
                const auto r0 = static_cast<Eigen::Index>(r), r1 = static_cast<Eigen::Index>(r | bit);
                const auto c0 = static_cast<Eigen::Index>(c), c1 = static_cast<Eigen::Index>(c | bit);
                const cplx ci = a(r0, c0), cx = a(r0, c1), cy = a(r1, c0), cz = a(r1, c1);
                a(r0, c0) = ci + cz;
                a(r1, c1) = ci - cz;
                a(r0, c1) = cx - i * cy;
                a(r1, c0) = cx + i * cy;
            }
        }
    }
    return a;
}

CMatrix pauli_vector_to_matrix(const std::vector<double>& coefficients, int n_qubits) {
    return pauli_vector_to_matrix(std::vector<cplx>(coefficients.begin(), coefficients.end()), n_qubits);
}

std::vector<PauliTerm> pauli_decompose(const CMatrix& m, int n_qubits, double drop_tol) {
    const auto traces = pauli_traces(m, n_qubits);
    const double inv_d = 1.0 / static_cast<double>(hilbert_dim(n_qubits));
    std::vector<PauliTerm> terms;
    for (std::size_t idx = 0; idx < traces.size(); ++idx) {
        const double c = traces[idx].real() * inv_d;
        if (std::abs(c) <= drop_tol) continue;
        PauliTerm t;
        t.coefficient = c;
        t.ops.resize(n_qubits);
        std::size_t rest = idx;
        for (int q = n_qubits - 1; q >= 0; --q) {
            t.ops[q] = static_cast<std::uint8_t>(rest & 3U);
            rest >>= 2;
        }
        terms.push_back(std::move(t));
    }
    return terms;
}

}  // namespace kst
