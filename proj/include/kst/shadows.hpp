#pragma once

#include "kst/qfi.hpp"
#include "kst/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kst {

enum class Ensemble : std::uint32_t { clifford = 0, haar = 1 };

std::string to_string(Ensemble e);
Ensemble ensemble_from_string(const std::string& s);

inline constexpr std::uint32_t kCliffordCount = 24;

// Single-qubit Clifford group modulo phase, in breadth-first order from the
// identity under the generators (H, S). Each element is phase-normalized so
// that its first nonzero entry (row-major) is real and positive. Index 0 is
// the identity, 1 is H, 2 is S.
const std::array<Matrix2c, kCliffordCount>& clifford_table();

// Unitary for an id. Clifford ids index clifford_table(); local-Haar ids are
// 32-bit keys, each seeding four Gaussians that form a unit quaternion
// (a, b, c, d) -> [[a + ib, c + id], [-c + id, a - ib]].
Matrix2c ensemble_unitary(Ensemble e, std::uint32_t id);

// Bloch vector n of u^dagger Z u = n . sigma. Exact integers for Clifford ids.
std::array<double, 3> measurement_axis(Ensemble e, std::uint32_t id);

// 3 u^dagger |s><s| u - 1 = (1 + 3 (-1)^s n . sigma) / 2.
Matrix2c snapshot_factor(Ensemble e, std::uint32_t id, int bit);

struct Snapshot {
    std::vector<std::uint32_t> unitary_ids;  // one per qubit
    std::vector<std::uint8_t> outcomes;      // one bit per qubit
};

// Snapshots stored column-wise: ids[i * N + j] and bit j of bits[i] belong
// to qubit j of snapshot i.
class ShadowBatch {
public:
    ShadowBatch(int n_qubits, Ensemble ensemble, std::uint64_t master_seed);

    int n_qubits() const noexcept { return n_qubits_; }
    Ensemble ensemble() const noexcept { return ensemble_; }
    std::uint64_t master_seed() const noexcept { return master_seed_; }
    std::size_t size() const noexcept { return bits_.size(); }

    std::uint32_t id(std::size_t i, int qubit) const {
        return ids_[i * static_cast<std::size_t>(n_qubits_) + static_cast<std::size_t>(qubit)];
    }
    int bit(std::size_t i, int qubit) const { return static_cast<int>((bits_[i] >> qubit) & 1U); }
    std::uint64_t bits(std::size_t i) const { return bits_[i]; }

    Snapshot snapshot(std::size_t i) const;
    void push_back(const Snapshot& s);
    void resize(std::size_t m);
    void set(std::size_t i, const std::uint32_t* ids, std::uint64_t bits);

    const std::vector<std::uint32_t>& raw_ids() const noexcept { return ids_; }
    const std::vector<std::uint64_t>& raw_bits() const noexcept { return bits_; }

    bool operator==(const ShadowBatch& o) const = default;

private:
    int n_qubits_;
    Ensemble ensemble_;
    std::uint64_t master_seed_;
    std::vector<std::uint32_t> ids_;
    std::vector<std::uint64_t> bits_;
};

// Born-rule sampler with the Pauli expectations of rho cached.
class SnapshotSampler {
public:
    SnapshotSampler(const DensityMatrix& rho, Ensemble ensemble);

    int n_qubits() const noexcept { return n_; }
    Ensemble ensemble() const noexcept { return ensemble_; }

    // p(s) = <s| U rho U^dagger |s> over dense outcome index (qubit 0 most
    // significant).
    std::vector<double> outcome_distribution(const std::uint32_t* ids) const;

    // Draws ids then one outcome; writes N ids and returns the bits field.
    std::uint64_t sample(Rng& rng, std::uint32_t* ids) const;

private:
    void distribution_into(const std::uint32_t* ids, std::vector<double>& e) const;

    int n_;
    Ensemble ensemble_;
    std::vector<double> expectations_;  // tr(rho P), base-4 order
};

Snapshot sample_snapshot(const DensityMatrix& rho, Ensemble ensemble, Rng& rng);

HermitianOperator snapshot_to_matrix(const Snapshot& snap, Ensemble ensemble);

// Snapshot i uses the substream derive_seed(master_seed, {i}); the result is
// independent of the worker count.
ShadowBatch generate_batch(const DensityMatrix& rho, std::size_t m, Ensemble ensemble,
                           std::uint64_t master_seed, int workers = 1);

// Binary layout (little endian):
//   bytes 0..7   magic "KSTSHDW1"
//   u32 version (=1), u32 N, u32 ensemble (0 Clifford, 1 local Haar), u32 reserved (=0)
//   u64 master_seed, u64 M
//   M records of N x u32 unitary ids followed by u64 outcome bits
// A JSON sidecar "<path>.json" repeats the header fields.
void write_batch(const std::filesystem::path& path, const ShadowBatch& batch,
                 const std::optional<std::string>& state_description = std::nullopt);
ShadowBatch read_batch(const std::filesystem::path& path);

}  // namespace kst
