#include "kst/estimator.hpp"

#include "kst/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>

namespace kst {

namespace {

using Coeff4 = std::array<double, 4>;

Coeff4 pauli_coeffs(const Matrix2c& m) {
    const auto& p = pauli_basis();
    Coeff4 c{};
    for (std::size_t a = 0; a < 4; ++a) c[a] = 0.5 * (p[a] * m).trace().real();
    return c;
}

double falling_factorial(long long L, int t) {
    double r = 1.0;
    for (int i = 0; i < t; ++i) r *= static_cast<double>(L - i);
    return r;
}

double trace_product(const CMatrix& a, const CMatrix& b) { return a.cwiseProduct(b.transpose()).sum().real(); }

// acc += w * (x)_j v_j in base-4 Pauli order, skipping zero coefficients.
void add_product(std::vector<double>& acc, const Coeff4* v, int n, double w) {
    constexpr int kMax = kMaxQubits;
    std::uint8_t letter[kMax][4];
    double value[kMax][4];
    int count[kMax];
    for (int q = 0; q < n; ++q) {
        count[q] = 0;
        for (std::uint8_t a = 0; a < 4; ++a)
            if (v[q][a] != 0.0) {
                letter[q][count[q]] = a;
                value[q][count[q]++] = v[q][a];
            }
        if (count[q] == 0) return;
    }
    // Odometer over the nonzero letters with running prefix products.
    int pos[kMax] = {};
    double prod[kMax + 1];
    std::size_t idx[kMax + 1];
    prod[0] = w;
    idx[0] = 0;
    int q = 0;
    while (true) {
        for (; q < n; ++q) {
            prod[q + 1] = prod[q] * value[q][pos[q]];
            idx[q + 1] = idx[q] * 4 + letter[q][pos[q]];
        }
        acc[idx[n]] += prod[n];
        q = n - 1;
        while (q >= 0 && ++pos[q] == count[q]) pos[q--] = 0;
        if (q < 0) return;
    }
}

struct TermList {
    std::vector<double> coeff;
    std::vector<std::vector<std::uint8_t>> letters;
};

TermList terms_of(const std::vector<PauliTerm>& terms) {
    TermList t;
    for (const auto& p : terms) {
        t.coeff.push_back(p.coefficient);
        t.letters.push_back(p.ops);
    }
    return t;
}

// Shared per-observable data for the accumulator sums.
struct ObservableData {
    int n;
    CMatrix h;
    CMatrix h2;
    TermList h_terms;
    TermList h2_terms;

    explicit ObservableData(const Observable& H)
        : n(H.n_qubits()), h(H.matrix()), h2(H.matrix() * H.matrix()), h_terms(terms_of(H.pauli_terms())),
          h2_terms(terms_of(pauli_decompose(h2, H.n_qubits()))) {}
};

struct AccumulatorResult {
    double t0 = 0.0;
    double t1 = 0.0;
};

// Everything the accumulator needs from one qubit's factor X.
struct QubitData {
    Coeff4 x;                      // Pauli coefficients of X
    std::array<Coeff4, 4> xsx;     // of X sigma_a X
    std::vector<std::array<cplx, 16>> f2, f3;  // diagonal tuple tables
};

QubitData qubit_data(const Matrix2c& x, const TupleEvaluator& ev2, const TupleEvaluator* ev3) {
    const auto& sig = pauli_basis();
    QubitData q;
    q.x = pauli_coeffs(x);
    const Matrix2c* same[3] = {&x, &x, &x};
    q.f2.resize(3);
    ev2.qubit_tables(same, q.f2.data());
    if (ev3) {
        for (std::size_t a = 0; a < 4; ++a) q.xsx[a] = pauli_coeffs(x * sig[a] * x);
        q.f3.resize(4);
        ev3->qubit_tables(same, q.f3.data());
    }
    return q;
}

// Exact U-statistics for k = 0 and k = 1 from sums over single snapshots:
// the sum over distinct tuples is the full multilinear sum minus the
// coincident-index contributions (inclusion-exclusion over set partitions).
struct MomentSums {
    std::vector<double> s, q2, v, v2;  // Pauli vectors of sum X, sum X^2, sum X H X, sum X H^2 X
    double d2 = 0.0;
    double d3 = 0.0;
};

MomentSums empty_sums(int n, bool need3) {
    const std::size_t d4 = std::size_t{1} << (2 * n);
    MomentSums m;
    m.s.assign(d4, 0.0);
    if (need3) {
        m.q2.assign(d4, 0.0);
        m.v.assign(d4, 0.0);
        m.v2.assign(d4, 0.0);
    }
    return m;
}

// `visit(fn)` calls fn(row, weight) once per distinct snapshot row, where row
// holds one QubitData pointer per qubit and the weights add up to L. With
// `products` false only the diagonal terms d2, d3 are accumulated.
template <class Visit>
void row_sums(Visit&& visit, MomentSums& m, const ObservableData& od, const TupleEvaluator& ev2, const TupleEvaluator* ev3,
              bool products) {
    const int n = od.n;
    const auto un = static_cast<std::size_t>(n);
    const bool need3 = ev3 != nullptr;
    std::vector<Coeff4> sx(un), sq(un), tmp(un);
    std::vector<const std::array<cplx, 16>*> tabs(un);
    visit([&](const QubitData* const* row, double w) {
        for (std::size_t j = 0; j < un; ++j) {
            sx[j] = row[j]->x;
            tabs[j] = row[j]->f2.data();
        }
        if (products) add_product(m.s, sx.data(), n, w);
        m.d2 += w * ev2.contract(tabs.data()).real();
        if (!need3) return;
        for (std::size_t j = 0; j < un; ++j) tabs[j] = row[j]->f3.data();
        m.d3 += w * ev3->contract(tabs.data()).real();
        if (!products) return;
        for (std::size_t j = 0; j < un; ++j) sq[j] = row[j]->xsx[0];
        add_product(m.q2, sq.data(), n, w);
        auto add_terms = [&](std::vector<double>& acc, const TermList& tl) {
            for (std::size_t r = 0; r < tl.coeff.size(); ++r) {
                for (std::size_t j = 0; j < un; ++j) tmp[j] = row[j]->xsx[tl.letters[r][j]];
                add_product(acc, tmp.data(), n, w * tl.coeff[r]);
            }
        };
        add_terms(m.v, od.h_terms);
        add_terms(m.v2, od.h2_terms);
    });
}

AccumulatorResult finish_sums(const MomentSums& m, std::size_t L, const ObservableData& od) {
    const int n = od.n;
    AccumulatorResult out;
    const CMatrix S = pauli_vector_to_matrix(m.s, n);
    const CMatrix& H = od.h;
    const CMatrix& H2 = od.h2;
    const CMatrix HS = H * S;
    const CMatrix SS = S * S;
    const double f2 = 2.0 * trace_product(H2, SS) - 2.0 * trace_product(HS, HS);
    out.t0 = (f2 - m.d2) / falling_factorial(static_cast<long long>(L), 2);
    if (m.q2.empty()) return out;

    const CMatrix Q2 = pauli_vector_to_matrix(m.q2, n);
    const CMatrix V = pauli_vector_to_matrix(m.v, n);
    const CMatrix V2 = pauli_vector_to_matrix(m.v2, n);
    const CMatrix H2S = H2 * S;
    const CMatrix SH = HS.adjoint();
    const CMatrix HSS = H * SS;
    const CMatrix HQ2 = H * Q2;
    const double f3 = trace_product(H2S, SS) - trace_product(HS, HSS);
    const double tr_vsh = trace_product(V, SH);
    const double tr_vhs = trace_product(V, HS);
    const double f12 = 0.5 * (2.0 * trace_product(Q2, H2S.adjoint()) - tr_vsh - trace_product(HQ2, HS));
    const double f13 = trace_product(V2, S) - 0.5 * (tr_vhs + tr_vsh);
    const double f23 = 0.5 * (2.0 * trace_product(H2S, Q2) - trace_product(HS, HQ2) - tr_vhs);
    out.t1 = (f3 - f12 - f13 - f23 + 2.0 * m.d3) / falling_factorial(static_cast<long long>(L), 3);
    return out;
}

template <class Visit>
AccumulatorResult accumulate_t0_t1(Visit&& visit, std::size_t L, const ObservableData& od, const TupleEvaluator& ev2,
                                   const TupleEvaluator* ev3) {
    MomentSums m = empty_sums(od.n, ev3 != nullptr);
    row_sums(visit, m, od, ev2, ev3, true);
    return finish_sums(m, L, od);
}

auto visit_factors(const SnapshotFactors& f, const TupleEvaluator& ev2, const TupleEvaluator* ev3) {
    return [&f, &ev2, ev3](auto&& fn) {
        const auto n = static_cast<std::size_t>(f.n_qubits());
        std::vector<QubitData> data(n);
        std::vector<const QubitData*> row(n);
        for (std::size_t j = 0; j < n; ++j) row[j] = &data[j];
        for (std::size_t m = 0; m < f.size(); ++m) {
            for (std::size_t j = 0; j < n; ++j) data[j] = qubit_data(f.row(m)[j], ev2, ev3);
            fn(row.data(), 1.0);
        }
    };
}

// A Clifford snapshot factor is (I + 3 s sigma_a) / 2 with s = +-1, so each
// qubit carries one of six letters 2 a + (s < 0); rows are grouped by word.
const std::array<Matrix2c, 6>& clifford_letters() {
    static const auto letters = [] {
        std::array<Matrix2c, 6> out;
        const auto& p = pauli_basis();
        for (std::size_t c = 0; c < 6; ++c) out[c] = 0.5 * (p[0] + (c % 2 ? -3.0 : 3.0) * p[c / 2 + 1]);
        return out;
    }();
    return letters;
}

const std::array<std::array<std::uint8_t, 2>, kCliffordCount>& clifford_letter_of() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 2>, kCliffordCount> out{};
        for (std::uint32_t id = 0; id < kCliffordCount; ++id) {
            const auto axis = measurement_axis(Ensemble::clifford, id);
            for (int b = 0; b < 2; ++b)
                for (std::uint8_t a = 0; a < 3; ++a) {
                    if (axis[a] == 0.0) continue;
                    const double s = axis[a] * (b ? -1.0 : 1.0);
                    out[id][static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(2 * a + (s < 0.0 ? 1 : 0));
                }
        }
        return out;
    }();
    return table;
}

struct WordHistogram {
    std::vector<std::uint64_t> words;
    std::vector<double> counts;
};

WordHistogram clifford_histogram(const ShadowBatch& batch, std::size_t begin, std::size_t count) {
    const int n = batch.n_qubits();
    const auto& letter = clifford_letter_of();
    std::vector<std::uint64_t> keys(count);
    for (std::size_t m = 0; m < count; ++m) {
        std::uint64_t key = 0;
        for (int j = n; j-- > 0;) key = key * 6 + letter[batch.id(begin + m, j)][static_cast<std::size_t>(batch.bit(begin + m, j))];
        keys[m] = key;
    }
    std::sort(keys.begin(), keys.end());
    WordHistogram h;
    for (std::size_t m = 0; m < count;) {
        std::size_t e = m;
        while (e < count && keys[e] == keys[m]) ++e;
        h.words.push_back(keys[m]);
        h.counts.push_back(static_cast<double>(e - m));
        m = e;
    }
    return h;
}

std::array<QubitData, 6> letter_data(const TupleEvaluator& ev2, const TupleEvaluator* ev3) {
    std::array<QubitData, 6> letters;
    for (std::size_t c = 0; c < 6; ++c) letters[c] = qubit_data(clifford_letters()[c], ev2, ev3);
    return letters;
}

auto visit_histogram(const WordHistogram& h, int n, const std::array<QubitData, 6>& letters) {
    return [&h, n, &letters](auto&& fn) {
        std::vector<const QubitData*> row(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < h.words.size(); ++i) {
            std::uint64_t key = h.words[i];
            for (std::size_t j = 0; j < row.size(); ++j, key /= 6) row[j] = &letters[key % 6];
            fn(row.data(), h.counts[i]);
        }
    };
}

std::size_t pow6(int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= 6;
    return r;
}

// Product sums over Clifford rows can be computed from the dense 6^n word
// count tensor by applying one 6 -> 4 letter map per qubit, at a cost that
// does not grow with L. Worth it once the distinct words outnumber roughly
// 6^n / 2^n.
bool prefer_letter_tensor(std::size_t words, int n) {
    double tensor = 0.0;
    for (int j = 0; j < n; ++j) tensor += 24.0 * std::pow(4.0, j) * static_cast<double>(pow6(n - 1 - j));
    return tensor < static_cast<double>(words) * std::ldexp(8.0, n);
}

// Dense count tensor, qubit 0 most significant to match Pauli vector order.
std::vector<double> letter_counts(const WordHistogram& h, int n) {
    std::vector<double> t(pow6(n), 0.0);
    for (std::size_t i = 0; i < h.words.size(); ++i) {
        std::uint64_t key = h.words[i];
        std::size_t idx = 0;
        for (int j = 0; j < n; ++j, key /= 6) idx += static_cast<std::size_t>(key % 6) * pow6(n - 1 - j);
        t[idx] += h.counts[i];
    }
    return t;
}

using LetterMap = std::array<Coeff4, 6>;

void add_letter_product(std::vector<double>& acc, const std::vector<double>& counts, const LetterMap* const* u, int n,
                        double w) {
    thread_local std::vector<double> cur, next;
    cur = counts;
    std::size_t A = 1;
    for (int j = 0; j < n; ++j) {
        const std::size_t B = pow6(n - 1 - j);
        next.assign(A * 4 * B, 0.0);
        const LetterMap& map = *u[j];
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t c = 0; c < 6; ++c) {
                const double* src = &cur[(a * 6 + c) * B];
                for (std::size_t p = 0; p < 4; ++p) {
                    const double coef = map[c][p];
                    if (coef == 0.0) continue;
                    double* dst = &next[(a * 4 + p) * B];
                    for (std::size_t b = 0; b < B; ++b) dst[b] += coef * src[b];
                }
            }
        A *= 4;
        cur.swap(next);
    }
    for (std::size_t i = 0; i < cur.size(); ++i) acc[i] += w * cur[i];
}

void tensor_sums(const std::vector<double>& counts, MomentSums& m, const ObservableData& od,
                 const std::array<QubitData, 6>& letters) {
    const int n = od.n;
    const auto un = static_cast<std::size_t>(n);
    LetterMap x{};
    std::array<LetterMap, 4> xsx{};
    for (std::size_t c = 0; c < 6; ++c) {
        x[c] = letters[c].x;
        for (std::size_t a = 0; a < 4; ++a) xsx[a][c] = letters[c].xsx[a];
    }
    std::vector<const LetterMap*> u(un, &x);
    add_letter_product(m.s, counts, u.data(), n, 1.0);
    if (m.q2.empty()) return;
    std::fill(u.begin(), u.end(), &xsx[0]);
    add_letter_product(m.q2, counts, u.data(), n, 1.0);
    auto add_terms = [&](std::vector<double>& acc, const TermList& tl) {
        for (std::size_t r = 0; r < tl.coeff.size(); ++r) {
            for (std::size_t j = 0; j < un; ++j) u[j] = &xsx[tl.letters[r][j]];
            add_letter_product(acc, counts, u.data(), n, tl.coeff[r]);
        }
    };
    add_terms(m.v, od.h_terms);
    add_terms(m.v2, od.h2_terms);
}

AccumulatorResult clifford_t0_t1(const WordHistogram& h, std::size_t L, const ObservableData& od, const TupleEvaluator& ev2,
                                 const TupleEvaluator* ev3) {
    const auto letters = letter_data(ev2, ev3);
    MomentSums m = empty_sums(od.n, ev3 != nullptr);
    const bool tensor = prefer_letter_tensor(h.words.size(), od.n);
    if (!tensor) {
        row_sums(visit_histogram(h, od.n, letters), m, od, ev2, ev3, true);
        return finish_sums(m, L, od);
    }
    const std::vector<double> counts = letter_counts(h, od.n);
    tensor_sums(counts, m, od, letters);
    // The diagonal terms go through the code tensor unless the observable
    // uses so many letter pairs per qubit that the tensor outgrows the words.
    const double limit = 4.0 * static_cast<double>(counts.size());
    const bool diag_tensor = ev2.code_space_size() <= limit && (!ev3 || ev3->code_space_size() <= limit);
    if (!diag_tensor) {
        row_sums(visit_histogram(h, od.n, letters), m, od, ev2, ev3, false);
        return finish_sums(m, L, od);
    }
    std::array<const std::array<cplx, 16>*, 6> tabs2{}, tabs3{};
    for (std::size_t c = 0; c < 6; ++c) {
        tabs2[c] = letters[c].f2.data();
        if (ev3) tabs3[c] = letters[c].f3.data();
    }
    m.d2 = ev2.diagonal_letter_sum(counts, tabs2).real();
    if (ev3) m.d3 = ev3->diagonal_letter_sum(counts, tabs3).real();
    return finish_sums(m, L, od);
}

UStatResult per_tuple_ustat(const SnapshotFactors& f, const TupleEvaluator& ev, long long budget, Rng& rng) {
    const int t = ev.copies();
    const long long L = static_cast<long long>(f.size());
    const double total = falling_factorial(L, t);
    UStatResult res;
    std::vector<const Matrix2c*> rows(static_cast<std::size_t>(t));
    if (total <= static_cast<double>(budget)) {
        std::vector<char> used(static_cast<std::size_t>(L), 0);
        double sum = 0.0;
        long long count = 0;
        std::function<void(int)> rec = [&](int pos) {
            if (pos == t) {
                sum += ev(rows.data()).real();
                ++count;
                return;
            }
            for (long long m = 0; m < L; ++m) {
                if (used[static_cast<std::size_t>(m)]) continue;
                used[static_cast<std::size_t>(m)] = 1;
                rows[static_cast<std::size_t>(pos)] = f.row(static_cast<std::size_t>(m));
                rec(pos + 1);
                used[static_cast<std::size_t>(m)] = 0;
            }
        };
        rec(0);
        res.value = sum / static_cast<double>(count);
        res.tuples = count;
        return res;
    }
    std::vector<std::uint64_t> idx(static_cast<std::size_t>(t));
    double sum = 0.0;
    for (long long draw = 0; draw < budget; ++draw) {
        for (int p = 0; p < t; ++p) {
            bool clash;
            do {
                idx[static_cast<std::size_t>(p)] = rng.below64(static_cast<std::uint64_t>(L));
                clash = std::find(idx.begin(), idx.begin() + p, idx[static_cast<std::size_t>(p)]) != idx.begin() + p;
            } while (clash);
            rows[static_cast<std::size_t>(p)] = f.row(idx[static_cast<std::size_t>(p)]);
        }
        sum += ev(rows.data()).real();
    }
    res.value = sum / static_cast<double>(budget);
    res.tuples = budget;
    res.subsampled = true;
    return res;
}

void check_subsample(std::size_t L, int k) {
    if (static_cast<long long>(L) < k + 2) {
        throw Error(ErrorCode::insufficient_data, "U-statistic for T_" + std::to_string(k) + " needs at least " +
                                                      std::to_string(k + 2) + " snapshots, got " + std::to_string(L));
    }
}

}  // namespace

SnapshotFactors::SnapshotFactors(const ShadowBatch& batch, std::size_t begin, std::size_t count)
    : n_(batch.n_qubits()), count_(count) {
    if (begin + count > batch.size()) throw Error(ErrorCode::insufficient_data, "subsample exceeds batch");
    factors_.resize(count * static_cast<std::size_t>(n_));
    if (batch.ensemble() == Ensemble::clifford) {
        std::array<std::array<Matrix2c, 2>, kCliffordCount> table;
        for (std::uint32_t id = 0; id < kCliffordCount; ++id)
            for (int b = 0; b < 2; ++b) table[id][static_cast<std::size_t>(b)] = snapshot_factor(Ensemble::clifford, id, b);
        for (std::size_t m = 0; m < count; ++m)
            for (int j = 0; j < n_; ++j)
                factors_[m * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] =
                    table[batch.id(begin + m, j)][static_cast<std::size_t>(batch.bit(begin + m, j))];
    } else {
        for (std::size_t m = 0; m < count; ++m)
            for (int j = 0; j < n_; ++j)
                factors_[m * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] =
                    snapshot_factor(Ensemble::haar, batch.id(begin + m, j), batch.bit(begin + m, j));
    }
}

SnapshotFactors::SnapshotFactors(const std::vector<Snapshot>& snaps, Ensemble ensemble)
    : n_(snaps.empty() ? 0 : static_cast<int>(snaps.front().unitary_ids.size())), count_(snaps.size()) {
    for (const auto& s : snaps) {
        if (static_cast<int>(s.unitary_ids.size()) != n_ || s.outcomes.size() != s.unitary_ids.size()) {
            throw Error(ErrorCode::dimension_mismatch, "snapshots differ in qubit count");
        }
        for (int j = 0; j < n_; ++j)
            factors_.push_back(snapshot_factor(ensemble, s.unitary_ids[static_cast<std::size_t>(j)],
                                               s.outcomes[static_cast<std::size_t>(j)]));
    }
}

TupleEvaluator::TupleEvaluator(const Observable& H, int k) : n_(H.n_qubits()), k_(k), t_(k + 2) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    mu_ = mu_coefficients(k).coefficients;
    const auto& terms = H.pauli_terms();
    const auto n = static_cast<std::size_t>(n_);
    for (const auto& r : terms)
        for (const auto& q : terms) {
            Pair p;
            p.coeff = r.coefficient * q.coefficient;
            if (p.coeff == 0.0) continue;
            p.first = sites_.size();
            for (std::size_t j = 0; j < n; ++j) {
                const auto code = static_cast<std::uint8_t>(r.ops[j] * 4 + q.ops[j]);
                if (code == 0) continue;
                sites_.push_back({static_cast<std::uint8_t>(j), code});
                needed_ |= static_cast<std::uint16_t>(1u << code);
            }
            p.last = sites_.size();
            pairs_.push_back(p);
        }
    qubit_codes_.assign(n, {0});
    for (const Site& st : sites_) {
        auto& codes = qubit_codes_[st.qubit];
        if (std::find(codes.begin(), codes.end(), st.code) == codes.end()) codes.push_back(st.code);
    }
}

double TupleEvaluator::code_space_size() const {
    double size = 1.0;
    for (const auto& codes : qubit_codes_) size *= static_cast<double>(codes.size());
    return size;
}

cplx TupleEvaluator::diagonal_letter_sum(const std::vector<double>& counts,
                                         const std::array<const std::array<cplx, 16>*, 6>& letter_tabs) const {
    const auto n = static_cast<std::size_t>(n_);
    const auto t = static_cast<std::size_t>(t_);
    std::vector<std::size_t> stride(n);
    std::size_t size = 1;
    for (std::size_t j = n; j-- > 0;) {
        stride[j] = size;
        size *= qubit_codes_[j].size();
    }
    // Flat index of each pair in the code tensor; qubits without a site sit at code 0.
    std::vector<std::size_t> pair_index;
    for (const Pair& p : pairs_) {
        std::size_t idx = 0;
        for (std::size_t i = p.first; i < p.last; ++i) {
            const auto& codes = qubit_codes_[sites_[i].qubit];
            const auto slot = static_cast<std::size_t>(std::find(codes.begin(), codes.end(), sites_[i].code) - codes.begin());
            idx += slot * stride[sites_[i].qubit];
        }
        pair_index.push_back(idx);
    }
    // Real and imaginary parts kept in separate arrays so the inner loops vectorize.
    std::vector<double> re, im, next_re, next_im;
    cplx total = 0.0;
    for (std::size_t l = 0; l <= t; ++l) {
        if (mu_[l] == 0.0) continue;
        re = counts;
        im.assign(counts.size(), 0.0);
        bool real_input = true;
        std::size_t A = 1;
        std::size_t B = counts.size();
        for (std::size_t j = 0; j < n; ++j) {
            const auto& codes = qubit_codes_[j];
            const std::size_t K = codes.size();
            B /= 6;
            next_re.assign(A * K * B, 0.0);
            next_im.assign(A * K * B, 0.0);
            for (std::size_t a = 0; a < A; ++a)
                for (std::size_t c = 0; c < 6; ++c) {
                    const double* sr = &re[(a * 6 + c) * B];
                    const double* si = &im[(a * 6 + c) * B];
                    for (std::size_t q = 0; q < K; ++q) {
                        const cplx coef = letter_tabs[c][l][codes[q]];
                        const double cr = coef.real(), ci = coef.imag();
                        double* dr = &next_re[(a * K + q) * B];
                        double* di = &next_im[(a * K + q) * B];
                        if (real_input) {
                            for (std::size_t b = 0; b < B; ++b) {
                                dr[b] += cr * sr[b];
                                di[b] += ci * sr[b];
                            }
                        } else {
                            for (std::size_t b = 0; b < B; ++b) {
                                dr[b] += cr * sr[b] - ci * si[b];
                                di[b] += cr * si[b] + ci * sr[b];
                            }
                        }
                    }
                }
            A *= K;
            re.swap(next_re);
            im.swap(next_im);
            real_input = false;
        }
        cplx s = 0.0;
        for (std::size_t i = 0; i < pairs_.size(); ++i) s += pairs_[i].coeff * cplx(re[pair_index[i]], im[pair_index[i]]);
        total += mu_[l] * s;
    }
    return std::ldexp(1.0, -k_) * total;
}

void TupleEvaluator::qubit_tables(const Matrix2c* const* factors, std::array<cplx, 16>* out) const {
    const auto& sig = pauli_basis();
    const auto t = static_cast<std::size_t>(t_);
    thread_local std::vector<Matrix2c> prefix, suffix;
    prefix.resize(t + 1);
    suffix.resize(t + 1);
    prefix[0] = Matrix2c::Identity();
    suffix[t] = Matrix2c::Identity();
    for (std::size_t l = 0; l < t; ++l) prefix[l + 1] = prefix[l] * *factors[l];
    for (std::size_t l = t; l-- > 0;) suffix[l] = *factors[l] * suffix[l + 1];
    // The identity entry tr(P_l S_l) is the trace of the full product for every l.
    const cplx full = prefix[t].trace();
    for (std::size_t l = 0; l <= t; ++l) {
        out[l][0] = full;
        if (mu_[l] == 0.0) continue;
        for (unsigned code = 1; code < 16; ++code) {
            if (!(needed_ >> code & 1u)) continue;
            const Matrix2c sa = sig[code / 4] * prefix[l];
            const Matrix2c sb = sig[code % 4] * suffix[l];
            out[l][code] = sa.cwiseProduct(sb.transpose()).sum();
        }
    }
}

cplx TupleEvaluator::contract(const std::array<cplx, 16>* const* tabs) const {
    const auto n = static_cast<std::size_t>(n_);
    const auto t = static_cast<std::size_t>(t_);
    // range[a][b]: product of identity entries over qubits a..b-1, shared by all pairs.
    thread_local std::vector<cplx> range;
    range.resize((n + 1) * (n + 1));
    for (std::size_t a = 0; a <= n; ++a) {
        range[a * (n + 1) + a] = 1.0;
        for (std::size_t b = a; b < n; ++b) range[a * (n + 1) + b + 1] = range[a * (n + 1) + b] * tabs[b][0][0];
    }
    cplx total = 0.0;
    for (std::size_t l = 0; l <= t; ++l) {
        const double mu = mu_[l];
        if (mu == 0.0) continue;
        cplx s = 0.0;
        for (const Pair& p : pairs_) {
            cplx prod = p.coeff;
            std::size_t from = 0;
            for (std::size_t i = p.first; i < p.last; ++i) {
                const Site& st = sites_[i];
                prod *= range[from * (n + 1) + st.qubit] * tabs[st.qubit][l][st.code];
                from = st.qubit + 1u;
            }
            s += prod * range[from * (n + 1) + n];
        }
        total += mu * s;
    }
    return std::ldexp(1.0, -k_) * total;
}

cplx TupleEvaluator::operator()(const Matrix2c* const* rows) const {
    const auto n = static_cast<std::size_t>(n_);
    const auto t = static_cast<std::size_t>(t_);
    thread_local std::vector<std::array<cplx, 16>> tabs;
    thread_local std::vector<const std::array<cplx, 16>*> ptr;
    thread_local std::vector<const Matrix2c*> column;
    tabs.resize(n * (t + 1));
    ptr.resize(n);
    column.resize(t);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t l = 0; l < t; ++l) column[l] = &rows[l][j];
        qubit_tables(column.data(), &tabs[j * (t + 1)]);
        ptr[j] = &tabs[j * (t + 1)];
    }
    return contract(ptr.data());
}

UStatResult u_statistic_tk(const SnapshotFactors& subsample, const Observable& H, int k, long long tuple_budget,
                           Rng& rng, UStatRoute route) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    if (subsample.n_qubits() != H.n_qubits()) throw Error(ErrorCode::dimension_mismatch, "snapshot and observable sizes differ");
    if (tuple_budget < 1) throw Error(ErrorCode::domain, "tuple budget must be positive");
    check_subsample(subsample.size(), k);
    if (route == UStatRoute::automatic && k <= 1) {
        const ObservableData od(H);
        const TupleEvaluator ev2(H, 0);
        const TupleEvaluator ev3(H, 1);
        const AccumulatorResult acc = accumulate_t0_t1(visit_factors(subsample, ev2, k == 1 ? &ev3 : nullptr), subsample.size(), od, ev2,
                                                       k == 1 ? &ev3 : nullptr);
        const auto L = static_cast<long long>(subsample.size());
        return {k == 0 ? acc.t0 : acc.t1, static_cast<long long>(falling_factorial(L, k + 2)), false};
    }
    return per_tuple_ustat(subsample, TupleEvaluator(H, k), tuple_budget, rng);
}

UStatResult u_statistic_tk(const std::vector<Snapshot>& subsample, Ensemble ensemble, const Observable& H, int k,
                           long long tuple_budget, Rng& rng) {
    return u_statistic_tk(SnapshotFactors(subsample, ensemble), H, k, tuple_budget, rng);
}

double u_statistic_dense(const std::vector<CMatrix>& xs, const Observable& H, int k) {
    if (k < 0) throw Error(ErrorCode::domain, "k must be nonnegative");
    const int t = k + 2;
    check_subsample(xs.size(), k);
    const std::vector<double> mu = mu_coefficients(k).coefficients;
    const CMatrix& h = H.matrix();
    const Eigen::Index d = h.rows();
    std::vector<std::size_t> idx(static_cast<std::size_t>(t));
    std::vector<char> used(xs.size(), 0);
    double sum = 0.0;
    long long count = 0;
    std::function<void(int)> rec = [&](int pos) {
        if (pos == t) {
            cplx f = 0.0;
            for (int l = 0; l <= t; ++l) {
                if (mu[static_cast<std::size_t>(l)] == 0.0) continue;
                CMatrix a = CMatrix::Identity(d, d), b = CMatrix::Identity(d, d);
                for (int p = 0; p < l; ++p) a = a * xs[idx[static_cast<std::size_t>(p)]];
                for (int p = l; p < t; ++p) b = b * xs[idx[static_cast<std::size_t>(p)]];
                f += mu[static_cast<std::size_t>(l)] * (h * a * h * b).trace();
            }
            sum += std::ldexp(f.real(), -k);
            ++count;
            return;
        }
        for (std::size_t m = 0; m < xs.size(); ++m) {
            if (used[m]) continue;
            used[m] = 1;
            idx[static_cast<std::size_t>(pos)] = m;
            rec(pos + 1);
            used[m] = 0;
        }
    };
    rec(0);
    return sum / static_cast<double>(count);
}

double median_of_means(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorCode::insufficient_data, "median of an empty list");
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
    std::nth_element(values.begin(), mid, values.end());
    return *mid;
}

HankelSolve hankel_solve_estimated(const MomentSequence& t_hat, int n, double clip_tol) {
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    if (static_cast<int>(t_hat.values.size()) < 2 * n) {
        throw Error(ErrorCode::insufficient_data, "Hankel system of order " + std::to_string(n) + " needs " +
                                                      std::to_string(2 * n) + " moments");
    }
    const auto& t = t_hat.values;
    if (std::all_of(t.begin(), t.begin() + 2 * n, [](double v) { return v == 0.0; })) {
        throw Error(ErrorCode::degenerate_input, "all estimated moments are zero");
    }
    RMatrix A(n, n);
    RVector b(n);
    double scale = std::max(std::abs(t[0]), std::abs(t[1]));
    for (int i = 0; i < n; ++i) {
        b[i] = t[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) A(i, j) = t[static_cast<std::size_t>(i + j + 1)];
        scale = std::max(scale, std::abs(A(i, i)));
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(A);
    RVector lam = es.eigenvalues();
    HankelSolve out;
    out.diag.min_eigenvalue = lam.minCoeff();
    const double floor = clip_tol * scale;
    if (out.diag.min_eigenvalue <= floor) {
        out.diag.clipped = true;
        for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = std::max(lam[i], floor);
    }
    out.diag.condition_number = lam.maxCoeff() / lam.minCoeff();
    const RVector y = es.eigenvectors().transpose() * b;
    double bhat = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) bhat += y[i] * y[i] / lam[i];
    out.b_hat = bhat;
    return out;
}

EstimateReport estimate_kry_bound(const ShadowBatch& batch, const Observable& H, const EstimatorConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    const int n = config.n;
    if (n < 1) throw Error(ErrorCode::domain, "Krylov order must be positive");
    if (config.I < 1) throw Error(ErrorCode::domain, "subsample count I must be at least 1");
    if (config.L < 2 * n + 1) {
        throw Error(ErrorCode::insufficient_data, "subsample size L must be at least 2n + 1 = " + std::to_string(2 * n + 1));
    }
    if (batch.n_qubits() != H.n_qubits()) throw Error(ErrorCode::dimension_mismatch, "batch and observable sizes differ");
    const auto need = static_cast<std::size_t>(config.I) * static_cast<std::size_t>(config.L);
    if (batch.size() < need) {
        throw Error(ErrorCode::insufficient_data, "batch has " + std::to_string(batch.size()) + " snapshots, I*L = " +
                                                      std::to_string(need));
    }
    const int km = 2 * n;
    const ObservableData od(H);
    std::vector<TupleEvaluator> evs;
    for (int k = 0; k < km; ++k) evs.emplace_back(H, k);

    EstimateReport rep;
    rep.n = n;
    rep.I = config.I;
    rep.L = config.L;
    rep.per_subsample.assign(static_cast<std::size_t>(config.I), std::vector<double>(static_cast<std::size_t>(km)));
    std::vector<std::vector<long long>> tuples(static_cast<std::size_t>(config.I), std::vector<long long>(static_cast<std::size_t>(km)));
    std::vector<std::vector<char>> sampled(static_cast<std::size_t>(config.I), std::vector<char>(static_cast<std::size_t>(km)));

    auto work = [&](std::size_t i) {
        const std::size_t begin = i * static_cast<std::size_t>(config.L);
        const auto L = static_cast<std::size_t>(config.L);
        const bool automatic = config.route == UStatRoute::automatic;
        const bool clifford = batch.ensemble() == Ensemble::clifford;
        // Per-qubit factor matrices are only materialized when some moment needs tuples.
        std::optional<SnapshotFactors> f;
        if (!automatic || !clifford || km > 2) f.emplace(batch, begin, L);
        int k0 = 0;
        if (automatic) {
            const TupleEvaluator* ev3 = km > 1 ? &evs[1] : nullptr;
            AccumulatorResult acc;
            if (clifford) {
                const WordHistogram h = clifford_histogram(batch, begin, L);
                acc = clifford_t0_t1(h, L, od, evs[0], ev3);
            } else {
                acc = accumulate_t0_t1(visit_factors(*f, evs[0], ev3), L, od, evs[0], ev3);
            }
            rep.per_subsample[i][0] = acc.t0;
            tuples[i][0] = static_cast<long long>(falling_factorial(config.L, 2));
            if (km > 1) {
                rep.per_subsample[i][1] = acc.t1;
                tuples[i][1] = static_cast<long long>(falling_factorial(config.L, 3));
            }
            k0 = std::min(km, 2);
        }
        for (int k = k0; k < km; ++k) {
            Rng rng(derive_seed(config.seed, {i, static_cast<std::uint64_t>(k)}));
            const UStatResult r = per_tuple_ustat(*f, evs[static_cast<std::size_t>(k)], config.tuple_budget, rng);
            rep.per_subsample[i][static_cast<std::size_t>(k)] = r.value;
            tuples[i][static_cast<std::size_t>(k)] = r.tuples;
            sampled[i][static_cast<std::size_t>(k)] = r.subsampled;
        }
    };
    parallel_for(static_cast<std::size_t>(config.I), config.workers, work);

    rep.t_hat.provenance = Provenance::estimated;
    rep.tuples.assign(static_cast<std::size_t>(km), 0);
    rep.subsampled.assign(static_cast<std::size_t>(km), false);
    for (int k = 0; k < km; ++k) {
        std::vector<double> col;
        for (std::size_t i = 0; i < static_cast<std::size_t>(config.I); ++i) {
            col.push_back(rep.per_subsample[i][static_cast<std::size_t>(k)]);
            rep.tuples[static_cast<std::size_t>(k)] += tuples[i][static_cast<std::size_t>(k)];
            if (sampled[i][static_cast<std::size_t>(k)]) rep.subsampled[static_cast<std::size_t>(k)] = true;
        }
        rep.t_hat.values.push_back(median_of_means(col));
    }
    const HankelSolve hs = hankel_solve_estimated(rep.t_hat, n, config.clip_tol);
    rep.b_hat = hs.b_hat;
    rep.hankel = hs.diag;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

EstimatorConfig planned_config(const DensityMatrix& rho, const Observable& H, EstimatorConfig base) {
    if (!base.epsilon || !base.delta) throw Error(ErrorCode::domain, "planner needs both epsilon and delta");
    base.I = plan_repetitions(base.n, *base.delta);
    base.L = plan_subsample_size(rho, H, base.n, *base.epsilon);
    return base;
}

nlohmann::json to_json(const EstimateReport& r) {
    nlohmann::json j;
    j["n"] = r.n;
    j["I"] = r.I;
    j["L"] = r.L;
    j["t_hat"] = r.t_hat.values;
    j["per_subsample"] = r.per_subsample;
    j["b_hat"] = r.b_hat;
    j["hankel"] = {{"condition_number", r.hankel.condition_number},
                   {"min_eigenvalue", r.hankel.min_eigenvalue},
                   {"clipped", r.hankel.clipped}};
    j["tuples"] = r.tuples;
    j["subsampled"] = r.subsampled;
    j["seconds"] = r.seconds;
    return j;
}

}  // namespace kst
