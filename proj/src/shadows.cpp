#include "kst/shadows.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <thread>

namespace kst {

namespace {

constexpr char kMagic[8] = {'K', 'S', 'T', 'S', 'H', 'D', 'W', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint64_t kHaarDomain = 0x6c6f63616c686161ULL;

Matrix2c canonical_phase(const Matrix2c& u) {
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            const cplx v = u(r, c);
            if (std::abs(v) > 1e-9) return u * (std::abs(v) / v);
        }
    return u;
}

std::array<Matrix2c, kCliffordCount> build_clifford_table() {
    Matrix2c h;
    h << 1.0, 1.0, 1.0, -1.0;
    h /= std::sqrt(2.0);
    Matrix2c s;
    s << 1.0, 0.0, 0.0, cplx(0.0, 1.0);
    const std::array<Matrix2c, 2> gens{h, s};

    std::vector<Matrix2c> found{Matrix2c::Identity()};
    std::deque<std::size_t> queue{0};
    while (!queue.empty()) {
        const Matrix2c cur = found[queue.front()];
        queue.pop_front();
        for (const Matrix2c& g : gens) {
            const Matrix2c next = canonical_phase(g * cur);
            const bool seen = std::any_of(found.begin(), found.end(),
                                          [&](const Matrix2c& f) { return (f - next).norm() < 1e-9; });
            if (!seen) {
                found.push_back(next);
                queue.push_back(found.size() - 1);
            }
        }
    }
    if (found.size() != kCliffordCount) throw Error(ErrorCode::validation, "Clifford enumeration failed");
    std::array<Matrix2c, kCliffordCount> out;
    std::copy(found.begin(), found.end(), out.begin());
    return out;
}

std::array<double, 3> axis_of(const Matrix2c& u) {
    const Matrix2c m = u.adjoint() * pauli_basis()[3] * u;
    std::array<double, 3> n{};
    for (int a = 0; a < 3; ++a) n[static_cast<std::size_t>(a)] = 0.5 * (pauli_basis()[static_cast<std::size_t>(a + 1)] * m).trace().real();
    return n;
}

const std::array<std::array<double, 3>, kCliffordCount>& clifford_axes() {
    static const auto axes = [] {
        std::array<std::array<double, 3>, kCliffordCount> out{};
        for (std::size_t i = 0; i < kCliffordCount; ++i) {
            out[i] = axis_of(clifford_table()[i]);
            for (double& v : out[i]) v = std::round(v);
        }
        return out;
    }();
    return axes;
}

void check_id(Ensemble e, std::uint32_t id) {
    if (e == Ensemble::clifford && id >= kCliffordCount) {
        throw Error(ErrorCode::validation, "Clifford id out of range: " + std::to_string(id));
    }
}

void fwht(std::vector<double>& v) {
    const std::size_t n = v.size();
    for (std::size_t h = 1; h < n; h <<= 1)
        for (std::size_t i = 0; i < n; i += h << 1)
            for (std::size_t j = i; j < i + h; ++j) {
                const double a = v[j], b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
}

template <class T>
void put(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error(ErrorCode::io, "truncated shadow batch file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

std::string to_string(Ensemble e) { return e == Ensemble::clifford ? "clifford" : "haar"; }

Ensemble ensemble_from_string(const std::string& s) {
    if (s == "clifford") return Ensemble::clifford;
    if (s == "haar") return Ensemble::haar;
    throw Error(ErrorCode::validation, "unknown ensemble '" + s + "' (expected clifford or haar)");
}

const std::array<Matrix2c, kCliffordCount>& clifford_table() {
    static const auto table = build_clifford_table();
    return table;
}

Matrix2c ensemble_unitary(Ensemble e, std::uint32_t id) {
    check_id(e, id);
    if (e == Ensemble::clifford) return clifford_table()[id];
    Rng rng(derive_seed(kHaarDomain, {id}));
    double q[4];
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : q) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : q) x /= norm;
    Matrix2c u;
    u << cplx(q[0], q[1]), cplx(q[2], q[3]), cplx(-q[2], q[3]), cplx(q[0], -q[1]);
    return u;
}

std::array<double, 3> measurement_axis(Ensemble e, std::uint32_t id) {
    check_id(e, id);
    if (e == Ensemble::clifford) return clifford_axes()[id];
    return axis_of(ensemble_unitary(e, id));
}

Matrix2c snapshot_factor(Ensemble e, std::uint32_t id, int bit) {
    const auto n = measurement_axis(e, id);
    const double g = bit ? -3.0 : 3.0;
    const auto& p = pauli_basis();
    return 0.5 * (p[0] + g * (n[0] * p[1] + n[1] * p[2] + n[2] * p[3]));
}

ShadowBatch::ShadowBatch(int n_qubits, Ensemble ensemble, std::uint64_t master_seed)
    : n_qubits_(n_qubits), ensemble_(ensemble), master_seed_(master_seed) {
    hilbert_dim(n_qubits);
}

Snapshot ShadowBatch::snapshot(std::size_t i) const {
    Snapshot s;
    const auto n = static_cast<std::size_t>(n_qubits_);
    s.unitary_ids.assign(ids_.begin() + static_cast<std::ptrdiff_t>(i * n),
                         ids_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    for (int j = 0; j < n_qubits_; ++j) s.outcomes.push_back(static_cast<std::uint8_t>(bit(i, j)));
    return s;
}

void ShadowBatch::push_back(const Snapshot& s) {
    if (static_cast<int>(s.unitary_ids.size()) != n_qubits_ || static_cast<int>(s.outcomes.size()) != n_qubits_) {
        throw Error(ErrorCode::dimension_mismatch, "snapshot length differs from batch qubit count");
    }
    std::uint64_t b = 0;
    for (int j = 0; j < n_qubits_; ++j) {
        check_id(ensemble_, s.unitary_ids[static_cast<std::size_t>(j)]);
        if (s.outcomes[static_cast<std::size_t>(j)] > 1) throw Error(ErrorCode::validation, "outcome must be 0 or 1");
        b |= std::uint64_t{s.outcomes[static_cast<std::size_t>(j)]} << j;
    }
    ids_.insert(ids_.end(), s.unitary_ids.begin(), s.unitary_ids.end());
    bits_.push_back(b);
}

void ShadowBatch::resize(std::size_t m) {
    ids_.resize(m * static_cast<std::size_t>(n_qubits_));
    bits_.resize(m);
}

void ShadowBatch::set(std::size_t i, const std::uint32_t* ids, std::uint64_t bits) {
    std::copy(ids, ids + n_qubits_, ids_.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(n_qubits_)));
    bits_[i] = bits;
}

SnapshotSampler::SnapshotSampler(const DensityMatrix& rho, Ensemble ensemble)
    : n_(rho.n_qubits()), ensemble_(ensemble) {
    const auto t = pauli_traces(rho.matrix(), n_);
    expectations_.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) expectations_[i] = t[i].real();
}

std::vector<double> SnapshotSampler::outcome_distribution(const std::uint32_t* ids) const {
    std::vector<double> e;
    distribution_into(ids, e);
    return e;
}

void SnapshotSampler::distribution_into(const std::uint32_t* ids, std::vector<double>& e) const {
    const std::size_t d = std::size_t{1} << n_;
    // E[A] = tr(rho prod_{j in A} n_j . sigma_j), subsets indexed like outcomes.
    e.resize(d);
    if (ensemble_ == Ensemble::clifford) {
        std::array<double, kMaxQubits> sign{};
        std::array<std::size_t, kMaxQubits> letter{};
        for (int j = 0; j < n_; ++j) {
            const auto& ax = clifford_axes()[ids[j]];
            for (std::size_t a = 0; a < 3; ++a)
                if (ax[a] != 0.0) {
                    letter[static_cast<std::size_t>(j)] = a + 1;
                    sign[static_cast<std::size_t>(j)] = ax[a];
                }
        }
        thread_local std::vector<std::size_t> idx;
        thread_local std::vector<double> sg;
        idx.assign(d, 0);
        sg.assign(d, 1.0);
        e[0] = expectations_[0];
        for (std::size_t a = 1; a < d; ++a) {
            const int low = std::countr_zero(a);
            const int q = n_ - 1 - low;  // qubit of that bit
            const std::size_t rest = a & (a - 1);
            idx[a] = idx[rest] + (letter[static_cast<std::size_t>(q)] << (2 * low));
            sg[a] = sg[rest] * sign[static_cast<std::size_t>(q)];
            e[a] = sg[a] * expectations_[idx[a]];
        }
    } else {
        // Contract one base-4 digit to a bit per qubit, least significant first.
        std::vector<double> cur = expectations_;
        for (int q = n_ - 1; q >= 0; --q) {
            const auto ax = measurement_axis(ensemble_, ids[q]);
            const std::size_t rest = std::size_t{1} << (n_ - 1 - q);
            const std::size_t prefix = std::size_t{1} << (2 * q);
            std::vector<double> next(prefix * 2 * rest);
            for (std::size_t p = 0; p < prefix; ++p)
                for (std::size_t s = 0; s < rest; ++s) {
                    const std::size_t base = p * 4 * rest + s;
                    next[p * 2 * rest + s] = cur[base];
                    next[p * 2 * rest + rest + s] =
                        ax[0] * cur[base + rest] + ax[1] * cur[base + 2 * rest] + ax[2] * cur[base + 3 * rest];
                }
            cur.swap(next);
        }
        e.swap(cur);
    }
    fwht(e);
    const double scale = std::ldexp(1.0, -n_);
    for (double& v : e) v = std::max(0.0, v * scale);
}

std::uint64_t SnapshotSampler::sample(Rng& rng, std::uint32_t* ids) const {
    for (int j = 0; j < n_; ++j)
        ids[j] = ensemble_ == Ensemble::clifford ? rng.below(kCliffordCount) : static_cast<std::uint32_t>(rng() >> 32);
    thread_local std::vector<double> p;
    distribution_into(ids, p);
    double total = 0.0;
    for (double v : p) total += v;
    const double target = rng.uniform() * total;
    std::size_t s = 0;
    double acc = 0.0;
    for (; s + 1 < p.size(); ++s) {
        acc += p[s];
        if (acc > target) break;
    }
    std::uint64_t bits = 0;
    for (int j = 0; j < n_; ++j) bits |= static_cast<std::uint64_t>((s >> (n_ - 1 - j)) & 1U) << j;
    return bits;
}

Snapshot sample_snapshot(const DensityMatrix& rho, Ensemble ensemble, Rng& rng) {
    const SnapshotSampler sampler(rho, ensemble);
    Snapshot snap;
    snap.unitary_ids.resize(static_cast<std::size_t>(rho.n_qubits()));
    const std::uint64_t bits = sampler.sample(rng, snap.unitary_ids.data());
    for (int j = 0; j < rho.n_qubits(); ++j) snap.outcomes.push_back(static_cast<std::uint8_t>((bits >> j) & 1U));
    return snap;
}

HermitianOperator snapshot_to_matrix(const Snapshot& snap, Ensemble ensemble) {
    const int n = static_cast<int>(snap.unitary_ids.size());
    if (n == 0 || snap.outcomes.size() != snap.unitary_ids.size()) {
        throw Error(ErrorCode::dimension_mismatch, "snapshot ids and outcomes differ in length");
    }
    hilbert_dim(n);
    CMatrix out = snapshot_factor(ensemble, snap.unitary_ids[0], snap.outcomes[0]);
    for (int j = 1; j < n; ++j) {
        const Matrix2c f = snapshot_factor(ensemble, snap.unitary_ids[static_cast<std::size_t>(j)],
                                           snap.outcomes[static_cast<std::size_t>(j)]);
        CMatrix next(out.rows() * 2, out.cols() * 2);
        for (Eigen::Index r = 0; r < out.rows(); ++r)
            for (Eigen::Index c = 0; c < out.cols(); ++c) next.block<2, 2>(2 * r, 2 * c) = out(r, c) * f;
        out.swap(next);
    }
    return {std::move(out), OperatorBasis::computational};
}

ShadowBatch generate_batch(const DensityMatrix& rho, std::size_t m, Ensemble ensemble, std::uint64_t master_seed,
                           int workers) {
    if (m < 1) throw Error(ErrorCode::domain, "batch size must be at least 1");
    const SnapshotSampler sampler(rho, ensemble);
    ShadowBatch batch(rho.n_qubits(), ensemble, master_seed);
    batch.resize(m);
    const int n = rho.n_qubits();
    auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<std::uint32_t> ids(static_cast<std::size_t>(n));
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(derive_seed(master_seed, {i}));
            const std::uint64_t bits = sampler.sample(rng, ids.data());
            batch.set(i, ids.data(), bits);
        }
    };
    const std::size_t w = static_cast<std::size_t>(std::clamp(workers, 1, 256));
    if (w == 1 || m < 2 * w) {
        run(0, m);
        return batch;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (m + w - 1) / w;
    for (std::size_t k = 0; k < w; ++k) {
        const std::size_t b = k * chunk, e = std::min(m, b + chunk);
        if (b < e) pool.emplace_back(run, b, e);
    }
    for (auto& t : pool) t.join();
    return batch;
}

void write_batch(const std::filesystem::path& path, const ShadowBatch& batch,
                 const std::optional<std::string>& state_description) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.n_qubits()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(batch.ensemble()));
    put<std::uint32_t>(os, 0);
    put<std::uint64_t>(os, batch.master_seed());
    put<std::uint64_t>(os, batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (int j = 0; j < batch.n_qubits(); ++j) put<std::uint32_t>(os, batch.id(i, j));
        put<std::uint64_t>(os, batch.bits(i));
    }
    if (!os) throw Error(ErrorCode::io, "write failed for " + path.string());

    nlohmann::json meta = {{"format", "KSTSHDW1"},
                           {"version", kFormatVersion},
                           {"n_qubits", batch.n_qubits()},
                           {"ensemble", to_string(batch.ensemble())},
                           {"master_seed", batch.master_seed()},
                           {"snapshots", batch.size()},
                           {"record_bytes", 4 * batch.n_qubits() + 8},
                           {"byte_order", "little"}};
    if (state_description) meta["state"] = *state_description;
    std::ofstream js(path.string() + ".json");
    if (!js) throw Error(ErrorCode::io, "cannot write sidecar for " + path.string());
    js << meta.dump(2) << '\n';
}

ShadowBatch read_batch(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorCode::io, path.string() + " is not a shadow batch file");
    }
    const auto version = get<std::uint32_t>(is);
    if (version != kFormatVersion) throw Error(ErrorCode::io, "unsupported batch format version " + std::to_string(version));
    const auto n = get<std::uint32_t>(is);
    const auto ens = get<std::uint32_t>(is);
    get<std::uint32_t>(is);
    const auto seed = get<std::uint64_t>(is);
    const auto m = get<std::uint64_t>(is);
    if (ens > 1) throw Error(ErrorCode::io, "unknown ensemble code " + std::to_string(ens));
    ShadowBatch batch(static_cast<int>(n), static_cast<Ensemble>(ens), seed);
    batch.resize(m);
    std::vector<std::uint32_t> ids(n);
    for (std::uint64_t i = 0; i < m; ++i) {
        for (auto& x : ids) {
            x = get<std::uint32_t>(is);
            check_id(static_cast<Ensemble>(ens), x);
        }
        const auto bits = get<std::uint64_t>(is);
        if (n < 64 && (bits >> n) != 0) throw Error(ErrorCode::io, "outcome bits exceed qubit count");
        batch.set(i, ids.data(), bits);
    }
    return batch;
}

}  // namespace kst
