#pragma once

#include "kst/multicopy.hpp"
#include "kst/shadows.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace kst {

inline constexpr long long kDefaultTupleBudget = 2'000'000;
inline constexpr double kDefaultClipTol = 1e-12;

enum class UStatRoute {
    automatic,   // accumulator sums for k <= 1, per-tuple evaluation otherwise
    per_tuple,   // always enumerate or sample tuples
};

struct EstimatorConfig {
    int n = 1;
    int I = 1;
    long long L = 3;
    std::optional<double> epsilon;
    std::optional<double> delta;
    long long tuple_budget = kDefaultTupleBudget;
    std::uint64_t seed = 0;
    double clip_tol = kDefaultClipTol;
    int workers = 1;
    UStatRoute route = UStatRoute::automatic;
};

struct HankelDiagnostics {
    double condition_number = 0.0;
    double min_eigenvalue = 0.0;  // before clipping
    bool clipped = false;
};

struct UStatResult {
    double value = 0.0;
    long long tuples = 0;  // ordered tuples contributing
    bool subsampled = false;
};

struct EstimateReport {
    int n = 1;
    int I = 1;
    long long L = 0;
    MomentSequence t_hat;
    std::vector<std::vector<double>> per_subsample;  // [i][k]
    double b_hat = 0.0;
    HankelDiagnostics hankel;
    std::vector<long long> tuples;    // per k, summed over subsamples
    std::vector<bool> subsampled;     // per k, any subsample sampled tuples
    double seconds = 0.0;
};

// Per-qubit 2x2 snapshot factors of a contiguous range of a batch.
class SnapshotFactors {
public:
    SnapshotFactors(const ShadowBatch& batch, std::size_t begin, std::size_t count);
    explicit SnapshotFactors(const std::vector<Snapshot>& snaps, Ensemble ensemble);

    int n_qubits() const noexcept { return n_; }
    std::size_t size() const noexcept { return count_; }
    const Matrix2c* row(std::size_t m) const { return &factors_[m * static_cast<std::size_t>(n_)]; }

private:
    int n_;
    std::size_t count_;
    std::vector<Matrix2c> factors_;
};

// f(X_1..X_t) = 2^-k sum_l mu_l tr(H X_1..X_l H X_{l+1}..X_t) for product
// operators X_m, contracted qubit by qubit through the Pauli expansion of H.
class TupleEvaluator {
public:
    TupleEvaluator(const Observable& H, int k);
    int copies() const noexcept { return t_; }
    cplx operator()(const Matrix2c* const* rows) const;

    // tr(sigma_a P_l sigma_b S_l) at index 4 a + b for l = 0..t, where P_l and S_l
    // are the products of one qubit's first l and last t - l factors; `out`
    // holds t + 1 tables.
    void qubit_tables(const Matrix2c* const* factors, std::array<cplx, 16>* out) const;
    // Tuple value from per-qubit tables; tabs[j] points at the t + 1 tables of qubit j.
    cplx contract(const std::array<cplx, 16>* const* tabs) const;

    // Sum over snapshot words of count(w) times the value with all copies
    // equal to that word, for six-letter alphabets. `counts` is the dense 6^n
    // count tensor (qubit 0 most significant) and letter_tabs[c] points at
    // the t + 1 tables of letter c.
    cplx diagonal_letter_sum(const std::vector<double>& counts, const std::array<const std::array<cplx, 16>*, 6>& letter_tabs) const;
    // Entries of the per-l tensor diagonal_letter_sum builds.
    double code_space_size() const;

private:
    int n_;
    int k_;
    int t_;
    struct Site {
        std::uint8_t qubit;
        std::uint8_t code;  // 4 * letter of the first term + letter of the second
    };
    struct Pair {
        double coeff;
        std::size_t first, last;  // range into sites_ of non-identity letter pairs
    };
    std::vector<double> mu_;
    std::vector<Pair> pairs_;
    std::vector<Site> sites_;
    std::uint16_t needed_ = 0;  // bitmask of codes that occur on any qubit
    std::vector<std::vector<std::uint8_t>> qubit_codes_;  // codes used per qubit, 0 first
};

UStatResult u_statistic_tk(const SnapshotFactors& subsample, const Observable& H, int k,
                           long long tuple_budget, Rng& rng, UStatRoute route = UStatRoute::automatic);
UStatResult u_statistic_tk(const std::vector<Snapshot>& subsample, Ensemble ensemble, const Observable& H,
                           int k, long long tuple_budget, Rng& rng);

// Exact U-statistic over arbitrary dense operators; reference path for tests.
double u_statistic_dense(const std::vector<CMatrix>& xs, const Observable& H, int k);

// Lower median for even counts.
double median_of_means(std::vector<double> values);

struct HankelSolve {
    double b_hat = 0.0;
    HankelDiagnostics diag;
};

HankelSolve hankel_solve_estimated(const MomentSequence& t_hat, int n, double clip_tol = kDefaultClipTol);

// Subsamples are the contiguous ranges [i L, (i + 1) L) of the batch.
EstimateReport estimate_kry_bound(const ShadowBatch& batch, const Observable& H, const EstimatorConfig& config);

// I and L from the planner; epsilon and delta must be set.
EstimatorConfig planned_config(const DensityMatrix& rho, const Observable& H, EstimatorConfig base);

nlohmann::json to_json(const EstimateReport& r);

}  // namespace kst
