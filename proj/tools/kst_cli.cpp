#include "kst/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

int fail(const std::string& code, const std::string& message, int status) {
    std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
    return status;
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw kst::Error(kst::ErrorCode::io, "cannot open config " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw kst::Error(kst::ErrorCode::validation, "config " + path + " is not valid JSON: " + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Krylov subspace QFI bounds: experiment runner"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<int> n_qubits;
    std::optional<long long> shadow_budget;
    std::optional<double> epsilon;
    std::optional<double> delta;
    app.add_option("--config", config_path, "JSON file overlaying the experiment defaults");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--workers", workers, "Worker threads");
    app.add_option("-N,--n-qubits", n_qubits, "Number of qubits");
    app.add_option("--shadow-budget", shadow_budget, "Fixed number M of classical shadows per point");
    app.add_option("--epsilon", epsilon, "Planner accuracy, relative to T_0");
    app.add_option("--delta", delta, "Failure probability for the median-of-means repetitions");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"fig2a", "Exact relative errors of all bounds over a pseudo-pure GHZ sweep"},
        {"fig2b", "Shadow estimate of the first Krylov bound over a pseudo-pure GHZ sweep"},
        {"fig2c", "Shadow budget needed for 10% error against N, pseudo-pure GHZ"},
        {"fig3a", "Exact relative errors of all bounds over bound-entangled states"},
        {"fig3b", "Shadow estimate of the first Krylov bound over bound-entangled states"},
        {"fig3c", "Shadow budget needed for 10% error against N, bound-entangled"},
        {"figS3", "Entanglement detection ratios over random states"},
        {"custom", "Any state and observable from the config file"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 1);
    }

    try {
        const kst::Experiment experiment = kst::experiment_from_string(app.get_subcommands().front()->get_name());
        json overlay = config_path.empty() ? json::object() : load_json(config_path);
        if (overlay.contains("experiment") && overlay["experiment"] != kst::to_string(experiment)) {
            throw kst::Error(kst::ErrorCode::validation, "config is for experiment " + overlay["experiment"].dump() +
                                                             ", subcommand is " + kst::to_string(experiment));
        }
        if (seed) overlay["seed"] = *seed;
        if (workers) overlay["workers"] = *workers;
        if (n_qubits) overlay["n_qubits"] = *n_qubits;
        if (shadow_budget) overlay["shadow_budget"] = *shadow_budget;
        // An explicit epsilon switches shadow experiments to planner sizing.
        if (epsilon) {
            overlay["epsilon"] = *epsilon;
            if (!shadow_budget) overlay["shadow_budget"] = nullptr;
        }
        if (delta) overlay["delta"] = *delta;
        const kst::ExperimentConfig config = kst::config_from_json(overlay, experiment);
        const kst::RunRecord record = kst::run_experiment(config);
        const auto files = kst::write_run(record, out_dir);
        json out{{"experiment", record.name}, {"rows", record.rows.size()}, {"summary", record.summary}};
        for (const auto& f : files) out["files"].push_back(f.string());
        std::cout << out.dump(2) << '\n';
        return 0;
    } catch (const kst::Error& e) {
        return fail(std::string(kst::to_string(e.code())), e.what(), 2);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 3);
    }
}
