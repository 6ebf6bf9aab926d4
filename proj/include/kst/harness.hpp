#pragma once

#include "kst/bounds.hpp"
#include "kst/estimator.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kst {

enum class Experiment { fig2a, fig2b, fig2c, fig3a, fig3b, fig3c, figS3, custom };

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);

inline constexpr int kCsvSchemaVersion = 1;
inline constexpr int kMaxExactQubits = 12;
inline constexpr int kMaxShadowQubits = 8;

struct ExperimentConfig {
    Experiment experiment = Experiment::custom;
    int n_qubits = 4;
    std::vector<double> p_grid;  // pseudo-pure sweeps
    std::vector<int> k_grid;     // bound-entangled sweeps; empty means 1..floor(N/2)
    std::vector<std::string> bounds{"Leg", "Sub", "Tay1", "Tay2", "Tay3", "Kry1"};

    // Shadow estimation. Either a fixed budget M, or planner mode where
    // epsilon is relative to the exact T_0 of each point.
    std::optional<long long> shadow_budget;
    std::optional<double> epsilon;
    double delta = 0.1;
    int krylov_order = 1;
    Ensemble ensemble = Ensemble::clifford;
    long long tuple_budget = kDefaultTupleBudget;

    // Scaling studies.
    std::vector<int> n_grid{2, 3, 4, 5, 6};
    double scaling_p = 0.25;
    int scaling_k = 1;
    long long m_min = 128;
    long long m_max = 1LL << 24;
    double m_factor = 1.41421356237309505;
    int trials = 25;
    double target_error = 0.1;

    // Random-state ratio study; rank 0 means full rank.
    long long samples = 100000;
    int state_rank = 0;
    std::vector<int> taylor_orders{1, 2, 3};
    std::vector<int> krylov_orders{1, 2, 3};

    // Custom experiment.
    nlohmann::json state = {{"type", "ghz"}};
    nlohmann::json observable = {{"type", "collective_spin"}};

    std::uint64_t seed = 1;
    int workers = 1;
};

ExperimentConfig default_config(Experiment e);
// Overlays the keys present in j onto the defaults of j["experiment"] (or of
// `fallback` when absent). Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j, Experiment fallback);
nlohmann::json to_json(const ExperimentConfig& c);
void validate(const ExperimentConfig& c);

DensityMatrix make_state(const nlohmann::json& spec, int n_qubits);
PureState make_pure_state(const nlohmann::json& spec, int n_qubits);
Observable make_observable(const nlohmann::json& spec, int n_qubits);

// Cells are JSON scalars; null is written as "undefined".
struct RunRecord {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<nlohmann::json>> rows;
    nlohmann::json summary = nlohmann::json::object();
    nlohmann::json config;
};

std::string to_csv(const RunRecord& r);
nlohmann::json metadata(const RunRecord& r);
// Writes <dir>/<name>.csv and <dir>/<name>.meta.json; returns the paths.
std::vector<std::filesystem::path> write_run(const RunRecord& r, const std::filesystem::path& dir);

struct BoundRequest {
    BoundFamily family;
    int order = 0;
};
BoundRequest parse_bound_label(const std::string& label);

// Exact F_Q and requested bounds at one state; `degenerate` marks rho and H commuting.
struct ExactPoint {
    double f_q = 0.0;
    int n_star = 0;
    bool degenerate = false;
    std::vector<double> bounds;
};
ExactPoint exact_point(const DensityMatrix& rho, const Observable& H, const std::vector<BoundRequest>& bounds);

struct ShadowPlan {
    long long M = 0;
    int I = 1;
    long long L = 0;
    bool planned = false;
};
ShadowPlan shadow_plan(const DensityMatrix& rho, const Observable& H, const ExperimentConfig& c);

// Generates a batch from `seed` and runs the estimator on it.
EstimateReport shadow_estimate(const DensityMatrix& rho, const Observable& H, const ShadowPlan& plan,
                               const ExperimentConfig& c, std::uint64_t seed, int workers);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};
LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y);

// Geometric budget grid m_min, m_min*f, ... (rounded, strictly increasing) up to m_max.
std::vector<long long> budget_grid(long long m_min, long long m_max, double factor);

RunRecord run_fig2_exact(const ExperimentConfig& c);
RunRecord run_fig2_shadow(const ExperimentConfig& c);
RunRecord run_fig3_exact(const ExperimentConfig& c);
RunRecord run_fig3_shadow(const ExperimentConfig& c);
RunRecord run_scaling(const ExperimentConfig& c);
RunRecord run_figS3(const ExperimentConfig& c);
RunRecord run_custom(const ExperimentConfig& c);
RunRecord run_experiment(const ExperimentConfig& c);

}  // namespace kst
