#include "kst/harness.hpp"

#include "kst/bounds.hpp"
#include "kst/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#ifndef KST_VERSION
#define KST_VERSION "unknown"
#endif

namespace kst {

namespace {

using nlohmann::json;

const std::map<std::string, Experiment>& experiment_names() {
    static const std::map<std::string, Experiment> names{
        {"fig2a", Experiment::fig2a}, {"fig2b", Experiment::fig2b}, {"fig2c", Experiment::fig2c},
        {"fig3a", Experiment::fig3a}, {"fig3b", Experiment::fig3b}, {"fig3c", Experiment::fig3c},
        {"figS3", Experiment::figS3}, {"custom", Experiment::custom}};
    return names;
}

std::vector<double> default_p_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) g.push_back(0.95 * i / 20.0);
    return g;
}

std::vector<int> k_values(const ExperimentConfig& c) {
    if (!c.k_grid.empty()) return c.k_grid;
    std::vector<int> k;
    for (int i = 1; i <= c.n_qubits / 2; ++i) k.push_back(i);
    return k;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string format_cell(const json& v) {
    switch (v.type()) {
        case json::value_t::null: return "undefined";
        case json::value_t::boolean: return v.get<bool>() ? "true" : "false";
        case json::value_t::number_integer: return std::to_string(v.get<long long>());
        case json::value_t::number_unsigned: return std::to_string(v.get<unsigned long long>());
        case json::value_t::number_float: return format_double(v.get<double>());
        case json::value_t::string: {
            const auto s = v.get<std::string>();
            if (s.find_first_of(",\"\n") == std::string::npos) return s;
            std::string q = "\"";
            for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            return q + "\"";
        }
        default: throw Error(ErrorCode::validation, "CSV cells must be scalars");
    }
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json optional_number(double v, bool defined) { return defined ? json(v) : json(nullptr); }

int shadow_order(const ExperimentConfig& c) { return c.krylov_order; }

std::vector<BoundRequest> parse_bounds(const std::vector<std::string>& labels) {
    std::vector<BoundRequest> out;
    for (const auto& l : labels) out.push_back(parse_bound_label(l));
    return out;
}

// Columns shared by every shadow row, after the sweep column.
std::vector<std::string> shadow_columns(int n) {
    std::vector<std::string> cols{"F_Q", "Kry" + std::to_string(n), "B_hat", "E_hat"};
    for (int k = 0; k < 2 * n; ++k) {
        cols.push_back("T" + std::to_string(k));
        cols.push_back("T" + std::to_string(k) + "_hat");
    }
    for (const char* s : {"M", "I", "L", "clipped", "min_eigenvalue", "tuple_sampled"}) cols.emplace_back(s);
    return cols;
}

std::vector<json> shadow_row(const DensityMatrix& rho, const Observable& H, const ExperimentConfig& c,
                             std::uint64_t seed, int workers) {
    const int n = shadow_order(c);
    const ExactPoint ex = exact_point(rho, H, {{BoundFamily::krylov, n}});
    std::vector<json> row;
    const std::size_t width = shadow_columns(n).size();
    if (ex.degenerate) {
        row.emplace_back(0.0);
        while (row.size() < width) row.emplace_back(nullptr);
        return row;
    }
    const ShadowPlan plan = shadow_plan(rho, H, c);
    const EstimateReport r = shadow_estimate(rho, H, plan, c, seed, workers);
    const MomentSequence t = moments_exact(rho, H, 2 * n);
    row.emplace_back(ex.f_q);
    row.emplace_back(ex.bounds[0]);
    row.emplace_back(r.b_hat);
    row.emplace_back(relative_error(r.b_hat, ex.f_q));
    for (int k = 0; k < 2 * n; ++k) {
        row.emplace_back(t.values[static_cast<std::size_t>(k)]);
        row.emplace_back(r.t_hat.values[static_cast<std::size_t>(k)]);
    }
    row.emplace_back(plan.M);
    row.emplace_back(plan.I);
    row.emplace_back(plan.L);
    row.emplace_back(r.hankel.clipped);
    row.emplace_back(r.hankel.min_eigenvalue);
    row.emplace_back(std::any_of(r.subsampled.begin(), r.subsampled.end(), [](bool b) { return b; }));
    return row;
}

RunRecord exact_sweep(const ExperimentConfig& c, const std::string& sweep, const std::vector<json>& values,
                      const std::vector<DensityMatrix>& states) {
    const Observable H = collective_spin_z(c.n_qubits);
    const auto req = parse_bounds(c.bounds);
    RunRecord rec;
    rec.name = to_string(c.experiment);
    rec.config = to_json(c);
    rec.columns = {sweep, "F_Q", "n_star"};
    for (const auto& b : c.bounds) {
        rec.columns.push_back(b);
        rec.columns.push_back("E_" + b);
    }
    rec.rows.resize(states.size());
    parallel_for(states.size(), c.workers, [&](std::size_t i) {
        const ExactPoint ex = exact_point(states[i], H, req);
        auto& row = rec.rows[i];
        row.push_back(values[i]);
        row.emplace_back(ex.f_q);
        row.push_back(ex.degenerate ? json(nullptr) : json(ex.n_star));
        for (std::size_t b = 0; b < req.size(); ++b) {
            row.push_back(optional_number(ex.bounds[b], !ex.degenerate));
            row.push_back(optional_number(ex.degenerate ? 0.0 : relative_error(ex.bounds[b], ex.f_q), !ex.degenerate));
        }
    });
    return rec;
}

RunRecord shadow_sweep(const ExperimentConfig& c, const std::string& sweep, const std::vector<json>& values,
                       const std::vector<DensityMatrix>& states) {
    const Observable H = collective_spin_z(c.n_qubits);
    RunRecord rec;
    rec.name = to_string(c.experiment);
    rec.config = to_json(c);
    rec.columns = {sweep};
    for (auto& col : shadow_columns(shadow_order(c))) rec.columns.push_back(col);
    rec.rows.resize(states.size());
    // Points run concurrently; a single point gets the whole pool instead.
    const int inner = states.size() == 1 ? c.workers : 1;
    parallel_for(states.size(), c.workers, [&](std::size_t i) {
        auto& row = rec.rows[i];
        row.push_back(values[i]);
        for (auto& cell : shadow_row(states[i], H, c, derive_seed(c.seed, {i}), inner)) row.push_back(std::move(cell));
    });
    double worst = 0.0;
    for (const auto& row : rec.rows)
        if (!row[4].is_null()) worst = std::max(worst, row[4].get<double>());
    rec.summary["max_E_hat"] = worst;
    return rec;
}

void require_keys(const json& j, const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw Error(ErrorCode::validation, "unknown key '" + it.key() + "'");
}

std::vector<std::uint8_t> ops_from_json(const json& v, int n_qubits) {
    std::vector<std::uint8_t> ops = parse_pauli_string(v.get<std::string>());
    if (static_cast<int>(ops.size()) != n_qubits) {
        throw Error(ErrorCode::dimension_mismatch, "Pauli string length differs from n_qubits");
    }
    return ops;
}

CMatrix matrix_from_json(const json& spec, std::size_t d) {
    const json& re = spec.at("re");
    const json im = spec.value("im", json());
    if (re.size() != d) throw Error(ErrorCode::dimension_mismatch, "matrix has wrong row count");
    CMatrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < d; ++r) {
        if (re[r].size() != d) throw Error(ErrorCode::dimension_mismatch, "matrix has wrong column count");
        for (std::size_t col = 0; col < d; ++col) {
            const double i = im.is_null() ? 0.0 : im.at(r).at(col).get<double>();
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = cplx(re[r][col].get<double>(), i);
        }
    }
    return m;
}

}  // namespace

std::string to_string(Experiment e) {
    for (const auto& [name, v] : experiment_names())
        if (v == e) return name;
    return "custom";
}

Experiment experiment_from_string(const std::string& s) {
    const auto it = experiment_names().find(s);
    if (it == experiment_names().end()) throw Error(ErrorCode::validation, "unknown experiment '" + s + "'");
    return it->second;
}

ExperimentConfig default_config(Experiment e) {
    ExperimentConfig c;
    c.experiment = e;
    switch (e) {
        case Experiment::fig2a:
            c.n_qubits = 8;
            c.p_grid = default_p_grid();
            break;
        case Experiment::fig2b:
            c.n_qubits = 6;
            c.p_grid = default_p_grid();
            c.shadow_budget = 480000;
            break;
        case Experiment::fig2c:
            c.scaling_p = 0.25;
            break;
        case Experiment::fig3a:
            c.n_qubits = 8;
            break;
        case Experiment::fig3b:
            c.n_qubits = 6;
            c.shadow_budget = 3200000;
            break;
        case Experiment::fig3c:
            c.scaling_k = 1;
            break;
        case Experiment::figS3:
            c.n_qubits = 2;
            c.bounds = {"Leg", "Sub", "Tay1", "Tay2", "Tay3", "Kry1", "Kry2", "Kry3"};
            break;
        case Experiment::custom:
            c.n_qubits = 4;
            break;
    }
    return c;
}

ExperimentConfig config_from_json(const json& j, Experiment fallback) {
    if (!j.is_object()) throw Error(ErrorCode::validation, "config must be a JSON object");
    require_keys(j, {"experiment", "n_qubits", "p_grid", "k_grid", "bounds", "shadow_budget", "epsilon", "delta",
                     "krylov_order", "ensemble", "tuple_budget", "n_grid", "scaling_p", "scaling_k", "m_min",
                     "m_max", "m_factor", "trials", "target_error", "samples", "state_rank", "taylor_orders",
                     "krylov_orders", "state", "observable", "seed", "workers"});
    try {
        const Experiment e = j.contains("experiment") ? experiment_from_string(j["experiment"].get<std::string>()) : fallback;
        ExperimentConfig c = default_config(e);
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j[key].get<std::remove_reference_t<decltype(field)>>();
        };
        get("n_qubits", c.n_qubits);
        get("p_grid", c.p_grid);
        get("k_grid", c.k_grid);
        get("bounds", c.bounds);
        if (j.contains("shadow_budget")) {
            if (j["shadow_budget"].is_null()) c.shadow_budget.reset();
            else c.shadow_budget = j["shadow_budget"].get<long long>();
        }
        if (j.contains("epsilon")) {
            if (j["epsilon"].is_null()) c.epsilon.reset();
            else c.epsilon = j["epsilon"].get<double>();
        }
        get("delta", c.delta);
        get("krylov_order", c.krylov_order);
        if (j.contains("ensemble")) c.ensemble = ensemble_from_string(j["ensemble"].get<std::string>());
        get("tuple_budget", c.tuple_budget);
        get("n_grid", c.n_grid);
        get("scaling_p", c.scaling_p);
        get("scaling_k", c.scaling_k);
        get("m_min", c.m_min);
        get("m_max", c.m_max);
        get("m_factor", c.m_factor);
        get("trials", c.trials);
        get("target_error", c.target_error);
        get("samples", c.samples);
        get("state_rank", c.state_rank);
        get("taylor_orders", c.taylor_orders);
        get("krylov_orders", c.krylov_orders);
        if (j.contains("state")) c.state = j["state"];
        if (j.contains("observable")) c.observable = j["observable"];
        get("seed", c.seed);
        get("workers", c.workers);
        return c;
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::validation, std::string("bad config value: ") + ex.what());
    }
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["experiment"] = to_string(c.experiment);
    j["n_qubits"] = c.n_qubits;
    j["p_grid"] = c.p_grid;
    j["k_grid"] = c.k_grid;
    j["bounds"] = c.bounds;
    j["shadow_budget"] = c.shadow_budget ? json(*c.shadow_budget) : json(nullptr);
    j["epsilon"] = c.epsilon ? json(*c.epsilon) : json(nullptr);
    j["delta"] = c.delta;
    j["krylov_order"] = c.krylov_order;
    j["ensemble"] = to_string(c.ensemble);
    j["tuple_budget"] = c.tuple_budget;
    j["n_grid"] = c.n_grid;
    j["scaling_p"] = c.scaling_p;
    j["scaling_k"] = c.scaling_k;
    j["m_min"] = c.m_min;
    j["m_max"] = c.m_max;
    j["m_factor"] = c.m_factor;
    j["trials"] = c.trials;
    j["target_error"] = c.target_error;
    j["samples"] = c.samples;
    j["state_rank"] = c.state_rank;
    j["taylor_orders"] = c.taylor_orders;
    j["krylov_orders"] = c.krylov_orders;
    j["state"] = c.state;
    j["observable"] = c.observable;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    return j;
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::validation, m); };
    if (c.workers < 1) fail("workers must be at least 1");
    if (!(c.delta > 0.0 && c.delta < 1.0)) fail("delta must lie in (0, 1)");
    if (c.epsilon && !(*c.epsilon > 0.0)) fail("epsilon must be positive");
    if (c.shadow_budget && *c.shadow_budget < 1) fail("shadow budget must be positive");
    if (c.krylov_order < 1) fail("krylov_order must be positive");
    if (c.tuple_budget < 1) fail("tuple_budget must be positive");
    for (const auto& b : c.bounds) parse_bound_label(b);
    const bool shadow = c.experiment == Experiment::fig2b || c.experiment == Experiment::fig3b;
    const bool scaling = c.experiment == Experiment::fig2c || c.experiment == Experiment::fig3c;
    const int cap = shadow ? kMaxShadowQubits : kMaxExactQubits;
    if (!scaling && (c.n_qubits < 1 || c.n_qubits > cap)) {
        throw Error(ErrorCode::resource, "n_qubits must lie in [1, " + std::to_string(cap) + "] for " +
                                             to_string(c.experiment));
    }
    if (c.experiment == Experiment::fig2a || c.experiment == Experiment::fig2b) {
        if (c.p_grid.empty()) fail("p_grid must be nonempty");
        for (double p : c.p_grid)
            if (!(p >= 0.0 && p <= 1.0)) fail("p values must lie in [0, 1]");
    }
    if (c.experiment == Experiment::fig3a || c.experiment == Experiment::fig3b) {
        if (c.n_qubits < 2) fail("bound entangled sweeps need n_qubits >= 2");
        for (int k : k_values(c))
            if (k < 1 || k > c.n_qubits / 2) fail("k values must lie in [1, floor(N/2)]");
    }
    if (shadow && !c.shadow_budget && !c.epsilon) fail("shadow experiments need shadow_budget or epsilon");
    if (scaling) {
        if (c.n_grid.empty()) fail("n_grid must be nonempty");
        for (int n : c.n_grid) {
            if (n < 1 || n > kMaxShadowQubits) {
                throw Error(ErrorCode::resource, "n_grid entries must lie in [1, " + std::to_string(kMaxShadowQubits) + "]");
            }
            if (c.experiment == Experiment::fig3c && n < 2 * c.scaling_k) fail("n_grid entries must be >= 2 scaling_k");
        }
        if (!(c.scaling_p >= 0.0 && c.scaling_p < 1.0)) fail("scaling_p must lie in [0, 1)");
        if (c.scaling_k < 1) fail("scaling_k must be positive");
        if (c.m_min < 1 || c.m_max < c.m_min) fail("need 1 <= m_min <= m_max");
        if (!(c.m_factor > 1.0)) fail("m_factor must exceed 1");
        if (c.trials < 1) fail("trials must be positive");
        if (!(c.target_error > 0.0)) fail("target_error must be positive");
    }
    if (c.experiment == Experiment::figS3) {
        if (c.samples < 1) fail("samples must be positive");
        for (int n : c.taylor_orders)
            if (n < 1) fail("taylor_orders must be positive");
        for (int n : c.krylov_orders)
            if (n < 1) fail("krylov_orders must be positive");
    }
}

PureState make_pure_state(const json& spec, int n_qubits) {
    const std::string type = spec.value("type", "ghz");
    if (type == "ghz") return ghz_state(n_qubits);
    if (type == "haar") return haar_random_state(n_qubits, spec.value("seed", std::uint64_t{0}));
    if (type == "basis") return basis_state(n_qubits, spec.value("index", std::size_t{0}));
    if (type == "amplitudes") {
        const json& re = spec.at("re");
        const json im = spec.value("im", json());
        CVector a(static_cast<Eigen::Index>(re.size()));
        for (std::size_t i = 0; i < re.size(); ++i)
            a[static_cast<Eigen::Index>(i)] = cplx(re[i].get<double>(), im.is_null() ? 0.0 : im.at(i).get<double>());
        return PureState(n_qubits, a);
    }
    throw Error(ErrorCode::validation, "unknown pure state type '" + type + "'");
}

DensityMatrix make_state(const json& spec, int n_qubits) {
    try {
        const std::string type = spec.at("type").get<std::string>();
        if (type == "ghz" || type == "haar" || type == "basis" || type == "amplitudes") {
            return DensityMatrix::from_pure(make_pure_state(spec, n_qubits));
        }
        if (type == "pseudo_pure") {
            return pseudo_pure(make_pure_state(spec.value("psi", json{{"type", "ghz"}}), n_qubits), spec.at("p").get<double>());
        }
        if (type == "bound_entangled") return bound_entangled(n_qubits, spec.at("k").get<int>());
        if (type == "maximally_mixed") return maximally_mixed(n_qubits);
        if (type == "random") return random_density_matrix(n_qubits, spec.value("rank", 0), spec.value("seed", std::uint64_t{0}));
        if (type == "matrix") return DensityMatrix(n_qubits, matrix_from_json(spec, hilbert_dim(n_qubits)));
        throw Error(ErrorCode::validation, "unknown state type '" + type + "'");
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::validation, std::string("bad state spec: ") + ex.what());
    }
}

Observable make_observable(const json& spec, int n_qubits) {
    try {
        const std::string type = spec.at("type").get<std::string>();
        if (type == "collective_spin") return collective_spin_z(n_qubits);
        if (type == "pauli_string") return pauli_string_observable(ops_from_json(spec.at("ops"), n_qubits));
        if (type == "random_pauli_string") {
            return pauli_string_observable(random_pauli_string(n_qubits, spec.value("seed", std::uint64_t{0})));
        }
        if (type == "random") return random_observable(n_qubits, spec.value("seed", std::uint64_t{0}));
        if (type == "pauli_terms") {
            std::vector<PauliTerm> terms;
            for (const auto& t : spec.at("terms")) {
                PauliTerm p;
                p.coefficient = t.at("coefficient").get<double>();
                p.ops = ops_from_json(t.at("ops"), n_qubits);
                terms.push_back(std::move(p));
            }
            return Observable::from_pauli_terms(n_qubits, std::move(terms));
        }
        if (type == "matrix") return Observable(n_qubits, matrix_from_json(spec, hilbert_dim(n_qubits)));
        throw Error(ErrorCode::validation, "unknown observable type '" + type + "'");
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::validation, std::string("bad observable spec: ") + ex.what());
    }
}

std::string to_csv(const RunRecord& r) {
    std::ostringstream os;
    for (std::size_t i = 0; i < r.columns.size(); ++i) os << (i ? "," : "") << r.columns[i];
    os << '\n';
    for (const auto& row : r.rows) {
        if (row.size() != r.columns.size()) throw Error(ErrorCode::validation, "row width differs from header");
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_cell(row[i]);
        os << '\n';
    }
    return os.str();
}

json metadata(const RunRecord& r) {
    json m;
    m["schema_version"] = kCsvSchemaVersion;
    m["name"] = r.name;
    m["columns"] = r.columns;
    m["rows"] = r.rows.size();
    m["config"] = r.config;
    m["summary"] = r.summary;
    m["environment"] = {{"version", KST_VERSION},
                        {"compiler", __VERSION__},
                        {"timestamp", utc_timestamp()},
                        {"hardware_threads", std::thread::hardware_concurrency()}};
    return m;
}

std::vector<std::filesystem::path> write_run(const RunRecord& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create output directory " + dir.string() + ": " + ec.message());
    const auto csv = dir / (r.name + ".csv");
    const auto meta = dir / (r.name + ".meta.json");
    {
        std::ofstream os(csv, std::ios::binary);
        os << to_csv(r);
        if (!os) throw Error(ErrorCode::io, "cannot write " + csv.string());
    }
    {
        std::ofstream os(meta, std::ios::binary);
        os << metadata(r).dump(2) << '\n';
        if (!os) throw Error(ErrorCode::io, "cannot write " + meta.string());
    }
    return {csv, meta};
}

BoundRequest parse_bound_label(const std::string& label) {
    if (label == "Leg") return {BoundFamily::legendre, 0};
    if (label == "Sub") return {BoundFamily::sub_qfi, 0};
    for (const auto& [prefix, family] : {std::pair{"Tay", BoundFamily::taylor}, std::pair{"Kry", BoundFamily::krylov}}) {
        const std::string p(prefix);
        if (label.rfind(p, 0) == 0 && label.size() > p.size()) {
            int n = 0;
            const char* first = label.data() + p.size();
            const char* last = label.data() + label.size();
            const auto res = std::from_chars(first, last, n);
            if (res.ec == std::errc() && res.ptr == last && n >= 1) return {family, n};
        }
    }
    throw Error(ErrorCode::validation, "unknown bound label '" + label + "' (expected Leg, Sub, Tay<n>, Kry<n>)");
}

ExactPoint exact_point(const DensityMatrix& rho, const Observable& H, const std::vector<BoundRequest>& bounds) {
    ExactPoint out;
    const SpectralContext ctx(rho, H);
    out.f_q = qfi_exact(ctx);
    out.bounds.assign(bounds.size(), 0.0);
    SpectralMeasure measure;
    try {
        measure = spectral_measure(ctx);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_commutator) throw;
        out.degenerate = true;
        out.f_q = 0.0;
        return out;
    }
    out.n_star = static_cast<int>(measure.x.size());
    int kry_max = 0;
    for (const auto& b : bounds)
        if (b.family == BoundFamily::krylov) kry_max = std::max(kry_max, std::min(b.order, out.n_star));
    std::vector<double> kry;
    if (kry_max > 0) kry = krylov_hierarchy(measure, kry_max).bounds;
    std::optional<double> f_ghz;
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        const auto& b = bounds[i];
        switch (b.family) {
            case BoundFamily::legendre:
                if (!f_ghz) f_ghz = std::clamp(fidelity(rho, ghz_state(rho.n_qubits())), 0.0, 1.0);
                out.bounds[i] = legendre_bound(*f_ghz, rho.n_qubits()).value;
                break;
            case BoundFamily::sub_qfi: out.bounds[i] = sub_qfi_bound(ctx).value; break;
            case BoundFamily::taylor: out.bounds[i] = taylor_bound(ctx, b.order).value; break;
            // Past n* the Krylov space has stopped growing and the bound stays at its terminal value.
            case BoundFamily::krylov:
                out.bounds[i] = kry[static_cast<std::size_t>(std::min(b.order, out.n_star) - 1)];
                break;
        }
    }
    return out;
}

ShadowPlan shadow_plan(const DensityMatrix& rho, const Observable& H, const ExperimentConfig& c) {
    const int n = c.krylov_order;
    ShadowPlan plan;
    plan.I = plan_repetitions(n, c.delta);
    if (c.shadow_budget) {
        plan.M = *c.shadow_budget;
        plan.L = plan.M / plan.I;
        if (plan.L < 2 * n + 1) {
            throw Error(ErrorCode::insufficient_data, "shadow budget " + std::to_string(plan.M) + " gives L = " +
                                                          std::to_string(plan.L) + " per subsample; need at least " +
                                                          std::to_string(2 * n + 1));
        }
        return plan;
    }
    if (!c.epsilon) throw Error(ErrorCode::validation, "need a shadow budget or epsilon");
    const double t0 = moments_exact(rho, H, 1).values[0];
    plan.L = plan_subsample_size(rho, H, n, *c.epsilon * std::abs(t0));
    plan.M = plan.L * plan.I;
    plan.planned = true;
    return plan;
}

EstimateReport shadow_estimate(const DensityMatrix& rho, const Observable& H, const ShadowPlan& plan,
                               const ExperimentConfig& c, std::uint64_t seed, int workers) {
    const ShadowBatch batch = generate_batch(rho, static_cast<std::size_t>(plan.M), c.ensemble, derive_seed(seed, {0}), workers);
    EstimatorConfig ec;
    ec.n = c.krylov_order;
    ec.I = plan.I;
    ec.L = plan.L;
    ec.tuple_budget = c.tuple_budget;
    ec.seed = derive_seed(seed, {1});
    ec.workers = workers;
    return estimate_kry_bound(batch, H, ec);
}

LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::insufficient_data, "fit needs at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw Error(ErrorCode::degenerate_input, "fit abscissae are all equal");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy == 0.0 ? 1.0 : sxy * sxy / (sxx * syy);
    return f;
}

std::vector<long long> budget_grid(long long m_min, long long m_max, double factor) {
    if (m_min < 1 || m_max < m_min || !(factor > 1.0)) throw Error(ErrorCode::domain, "bad budget grid");
    std::vector<long long> g;
    for (int j = 0;; ++j) {
        const auto m = static_cast<long long>(std::llround(static_cast<double>(m_min) * std::pow(factor, j)));
        if (m > m_max) break;
        if (g.empty() || m > g.back()) g.push_back(m);
    }
    return g;
}

RunRecord run_fig2_exact(const ExperimentConfig& c) {
    std::vector<json> values;
    std::vector<DensityMatrix> states;
    const PureState ghz = ghz_state(c.n_qubits);
    for (double p : c.p_grid) {
        values.emplace_back(p);
        states.push_back(pseudo_pure(ghz, p));
    }
    return exact_sweep(c, "p", values, states);
}

RunRecord run_fig2_shadow(const ExperimentConfig& c) {
    std::vector<json> values;
    std::vector<DensityMatrix> states;
    const PureState ghz = ghz_state(c.n_qubits);
    for (double p : c.p_grid) {
        values.emplace_back(p);
        states.push_back(pseudo_pure(ghz, p));
    }
    return shadow_sweep(c, "p", values, states);
}

RunRecord run_fig3_exact(const ExperimentConfig& c) {
    std::vector<json> values;
    std::vector<DensityMatrix> states;
    for (int k : k_values(c)) {
        values.emplace_back(k);
        states.push_back(bound_entangled(c.n_qubits, k));
    }
    return exact_sweep(c, "k", values, states);
}

RunRecord run_fig3_shadow(const ExperimentConfig& c) {
    std::vector<json> values;
    std::vector<DensityMatrix> states;
    for (int k : k_values(c)) {
        values.emplace_back(k);
        states.push_back(bound_entangled(c.n_qubits, k));
    }
    return shadow_sweep(c, "k", values, states);
}

RunRecord run_scaling(const ExperimentConfig& c) {
    const bool pseudo = c.experiment != Experiment::fig3c;
    const int n = c.krylov_order;
    const int I = plan_repetitions(n, c.delta);
    const auto grid = budget_grid(c.m_min, c.m_max, c.m_factor);
    RunRecord rec;
    rec.name = to_string(c.experiment);
    rec.config = to_json(c);
    rec.columns = {"N", "F_Q", "M", "I", "L", "median_E_hat", "min_E_hat", "max_E_hat", "selected"};
    std::vector<double> fit_x, fit_y;
    json m_star = json::object();
    for (int N : c.n_grid) {
        const DensityMatrix rho = pseudo ? pseudo_pure(ghz_state(N), c.scaling_p) : bound_entangled(N, c.scaling_k);
        const Observable H = collective_spin_z(N);
        const double fq = qfi_exact(rho, H);
        std::optional<long long> found;
        for (long long M : grid) {
            const long long L = M / I;
            if (L < 2 * n + 1) continue;
            ExperimentConfig point = c;
            point.shadow_budget = M;
            const ShadowPlan plan{M, I, L, false};
            std::vector<double> errs(static_cast<std::size_t>(c.trials));
            // Each trial draws a prefix of its own fixed stream, so budgets are nested per trial.
            parallel_for(errs.size(), c.workers, [&](std::size_t t) {
                // Tiny budgets can leave every median moment at exactly zero; such a
                // trial has no estimate and counts as an unbounded error.
                try {
                    const EstimateReport r = shadow_estimate(rho, H, plan, point,
                                                             derive_seed(c.seed, {static_cast<std::uint64_t>(N), t}), 1);
                    errs[t] = relative_error(r.b_hat, fq);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::degenerate_input) throw;
                    errs[t] = std::numeric_limits<double>::infinity();
                }
            });
            const double med = median_of_means(errs);
            const bool hit = med <= c.target_error;
            rec.rows.push_back({N, fq, M, I, L, med, *std::min_element(errs.begin(), errs.end()),
                                *std::max_element(errs.begin(), errs.end()), hit});
            if (hit) {
                found = M;
                break;
            }
        }
        m_star[std::to_string(N)] = found ? json(*found) : json(nullptr);
        if (found) {
            fit_x.push_back(N);
            fit_y.push_back(std::log2(static_cast<double>(*found)));
        }
    }
    rec.summary["m_star"] = m_star;
    rec.summary["fit"] = "ordinary least squares of log2(M*) against N";
    if (fit_x.size() >= 2) {
        const LinearFit f = least_squares(fit_x, fit_y);
        rec.summary["slope"] = f.slope;
        rec.summary["intercept"] = f.intercept;
        rec.summary["r2"] = f.r2;
    } else {
        rec.summary["slope"] = nullptr;
    }
    return rec;
}

RunRecord run_figS3(const ExperimentConfig& c) {
    std::vector<std::string> labels{"F_Q"};
    std::vector<BoundRequest> req;
    for (const auto& b : c.bounds) {
        labels.push_back(b);
        req.push_back(parse_bound_label(b));
    }
    const int N = c.n_qubits;
    const Observable H = collective_spin_z(N);
    constexpr std::size_t kChunk = 1000;
    const auto total = static_cast<std::size_t>(c.samples);
    const std::size_t chunks = (total + kChunk - 1) / kChunk;
    std::vector<std::vector<long long>> counts(chunks, std::vector<long long>(labels.size(), 0));
    parallel_for(chunks, c.workers, [&](std::size_t ch) {
        for (std::size_t i = ch * kChunk; i < std::min(total, (ch + 1) * kChunk); ++i) {
            const DensityMatrix rho = random_density_matrix(N, c.state_rank, derive_seed(c.seed, {i}));
            const ExactPoint ex = exact_point(rho, H, req);
            if (ex.degenerate) continue;
            // Strict inequality: a bound certifies entanglement only when it exceeds N.
            if (ex.f_q > N) ++counts[ch][0];
            for (std::size_t b = 0; b < req.size(); ++b)
                if (ex.bounds[b] > N) ++counts[ch][b + 1];
        }
    });
    std::vector<long long> sum(labels.size(), 0);
    for (const auto& cc : counts)
        for (std::size_t b = 0; b < sum.size(); ++b) sum[b] += cc[b];
    RunRecord rec;
    rec.name = to_string(c.experiment);
    rec.config = to_json(c);
    rec.columns = {"bound", "detections", "ratio"};
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const bool defined = sum[0] > 0;
        rec.rows.push_back({labels[b], sum[b],
                            optional_number(defined ? static_cast<double>(sum[b]) / static_cast<double>(sum[0]) : 0.0, defined)});
    }
    rec.summary["samples"] = c.samples;
    rec.summary["detected_by_qfi"] = sum[0];
    return rec;
}

RunRecord run_custom(const ExperimentConfig& c) {
    const DensityMatrix rho = make_state(c.state, c.n_qubits);
    const Observable H = make_observable(c.observable, c.n_qubits);
    const auto req = parse_bounds(c.bounds);
    const ExactPoint ex = exact_point(rho, H, req);
    RunRecord rec;
    rec.name = to_string(c.experiment);
    rec.config = to_json(c);
    rec.columns = {"F_Q", "n_star"};
    std::vector<json> row{ex.f_q, ex.degenerate ? json(nullptr) : json(ex.n_star)};
    for (std::size_t b = 0; b < req.size(); ++b) {
        rec.columns.push_back(c.bounds[b]);
        rec.columns.push_back("E_" + c.bounds[b]);
        row.push_back(optional_number(ex.bounds[b], !ex.degenerate));
        row.push_back(optional_number(ex.degenerate ? 0.0 : relative_error(ex.bounds[b], ex.f_q), !ex.degenerate));
    }
    if (c.shadow_budget || c.epsilon) {
        const auto cols = shadow_columns(c.krylov_order);
        const auto cells = shadow_row(rho, H, c, c.seed, c.workers);
        // The first two shadow columns repeat F_Q and the exact Krylov bound.
        for (std::size_t i = 2; i < cols.size(); ++i) {
            rec.columns.push_back(cols[i]);
            row.push_back(cells[i]);
        }
    }
    rec.rows.push_back(std::move(row));
    return rec;
}

RunRecord run_experiment(const ExperimentConfig& c) {
    validate(c);
    switch (c.experiment) {
        case Experiment::fig2a: return run_fig2_exact(c);
        case Experiment::fig2b: return run_fig2_shadow(c);
        case Experiment::fig2c: return run_scaling(c);
        case Experiment::fig3a: return run_fig3_exact(c);
        case Experiment::fig3b: return run_fig3_shadow(c);
        case Experiment::fig3c: return run_scaling(c);
        case Experiment::figS3: return run_figS3(c);
        case Experiment::custom: return run_custom(c);
    }
    throw Error(ErrorCode::validation, "unknown experiment");
}

}  // namespace kst
