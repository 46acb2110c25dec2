#pragma once

// JSON formats: scenario files, prior files, run configurations, labels and
// the versioned source report.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fosl/pipeline.hpp"
#include "fosl/simkit.hpp"

namespace fosl {

using json = nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

inline json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": malformed JSON: " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& j)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
}

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback)
{
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

template <class T>
T require(const json& j, const char* key)
{
    if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

} // namespace detail

// --- generator parameters ---

inline GeneratorParams params_from_json(const json& j, ModelOrder model)
{
    GeneratorParams p;
    p.model = model;
    if (!j.is_object()) throw ConfigError("parameter block must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto k = param_from_name(it.key());
        if (!k) throw ConfigError("unknown parameter '" + it.key() + "'");
        if (!it.value().is_number()) throw ConfigError("parameter '" + it.key() + "' must be a number");
        p[*k] = it.value().get<double>();
    }
    return p;
}

inline json params_to_json(const GeneratorParams& p, bool free_only = false)
{
    json j = json::object();
    const auto fp = free_params(p.model);
    for (int i = 0; i < kParamCount; ++i) {
        const auto k = static_cast<Param>(i);
        const bool is_free = std::find(fp.begin(), fp.end(), k) != fp.end();
        if (free_only && !is_free) continue;
        if (p.model == ModelOrder::classical2 && !is_free && k != Param::Ep) continue;
        j[std::string(param_name(k))] = p[k];
    }
    return j;
}

// --- scenario ---

inline SimScenario scenario_from_json(const json& j)
{
    using detail::get_or;
    using detail::require;
    SimScenario sc;
    sc.name = get_or<std::string>(j, "name", "scenario");
    sc.n_bus = require<int>(j, "buses");
    for (const auto& b : require<json>(j, "branches")) {
        Branch br;
        br.from = require<int>(b, "from");
        br.to = require<int>(b, "to");
        br.r = get_or<double>(b, "r", 0.0);
        br.x = require<double>(b, "x");
        br.b = get_or<double>(b, "b", 0.0);
        sc.branches.push_back(br);
    }
    const json ib = require<json>(j, "infinite_bus");
    sc.has_infinite_bus = get_or<bool>(ib, "enabled", true);
    sc.infinite_bus = require<int>(ib, "bus");
    sc.infinite_bus_V = get_or<double>(ib, "V", 1.0);
    sc.source_reactance = get_or<double>(ib, "source_reactance", sc.source_reactance);
    sc.infinite_noise_std = get_or<double>(ib, "noise_std", sc.infinite_noise_std);
    sc.infinite_noise_hold = get_or<double>(ib, "noise_hold", sc.infinite_noise_hold);
    std::vector<std::string> names;
    for (const auto& g : require<json>(j, "generators")) {
        GeneratorSpec gs;
        gs.name = require<std::string>(g, "name");
        gs.bus = require<int>(g, "bus");
        gs.P = require<double>(g, "P");
        gs.V = get_or<double>(g, "V", 1.0);
        const ModelOrder m = model_from_name(get_or<std::string>(g, "model", "fluxdecay3"));
        gs.params = params_from_json(get_or<json>(g, "params", json::object()), m);
        names.push_back(gs.name);
        sc.generators.push_back(gs);
    }
    if (j.contains("loads")) {
        for (const auto& l : j.at("loads")) {
            LoadSpec ls;
            ls.bus = require<int>(l, "bus");
            ls.S = {require<double>(l, "P"), get_or<double>(l, "Q", 0.0)};
            ls.ou_sigma = get_or<double>(l, "ou_sigma", ls.ou_sigma);
            ls.ou_theta = get_or<double>(l, "ou_theta", ls.ou_theta);
            sc.loads.push_back(ls);
        }
    }
    if (j.contains("forcings")) {
        for (const auto& f : j.at("forcings")) {
            ForcingSpec fs;
            const auto target = require<std::string>(f, "generator");
            const auto it = std::find(names.begin(), names.end(), target);
            if (it == names.end()) throw ConfigError("forcing targets unknown generator '" + target + "'");
            fs.generator = static_cast<int>(it - names.begin());
            fs.channel = forcing_from_name(require<std::string>(f, "channel"));
            fs.amplitude = require<double>(f, "amplitude");
            fs.freq_hz = require<double>(f, "freq_hz");
            sc.forcings.push_back(fs);
        }
    }
    const json pmu = get_or<json>(j, "pmu", json::object());
    sc.fs = get_or<double>(pmu, "fs", sc.fs);
    if (pmu.contains("snr_db")) {
        const auto& v = pmu.at("snr_db");
        if (v.is_string() && v.get<std::string>() == "inf") sc.snr_db = std::numeric_limits<double>::infinity();
        else sc.snr_db = v.get<double>();
    }
    const json tm = get_or<json>(j, "timing", json::object());
    sc.duration = get_or<double>(tm, "duration", sc.duration);
    sc.dt = get_or<double>(tm, "dt", sc.dt);
    sc.warmup = get_or<double>(tm, "warmup", sc.warmup);
    const json aa = get_or<json>(j, "antialias", json::object());
    sc.antialias_cutoff_hz = get_or<double>(aa, "cutoff_hz", sc.antialias_cutoff_hz);
    sc.antialias_taps = get_or<int>(aa, "taps", sc.antialias_taps);
    sc.seed = get_or<std::uint64_t>(j, "seed", sc.seed);
    sc.validate();
    return sc;
}

inline SimScenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

// --- labels written next to simulated CSVs ---

inline json labels_to_json(const SimScenario& sc, const LabeledDataset& ds)
{
    json j;
    j["scenario"] = sc.name;
    j["seed"] = sc.seed;
    j["fs"] = ds.fs;
    j["snr_db"] = std::isinf(sc.snr_db) ? json("inf") : json(sc.snr_db);
    json gens = json::array();
    for (std::size_t g = 0; g < ds.names.size(); ++g) {
        json e;
        e["name"] = ds.names[g];
        e["csv"] = ds.names[g] + ".csv";
        e["model"] = std::string(model_name(ds.truth[g].model));
        e["truth"] = params_to_json(ds.truth[g]);
        const auto& op = ds.operating_points[g];
        e["steady_state"] = {op.V0, op.theta0, op.I0, op.phi0};
        e["noise_var"] = ds.noise_var[g];
        gens.push_back(e);
    }
    j["generators"] = gens;
    json fos = json::array();
    for (const auto& l : ds.labels) {
        fos.push_back({{"generator", ds.names[l.generator]},
                       {"channel", std::string(forcing_name(l.channel))},
                       {"freq_hz", l.freq_hz},
                       {"amplitude", l.amplitude}});
    }
    j["forced_oscillations"] = fos;
    return j;
}

// --- priors ---

/// Prior file entry: natural-unit means and variances for the free parameters
/// of one generator, plus values of any fixed parameters.
struct PriorEntry {
    std::string name;
    GeneratorParams mean;
    GeneratorParams variance;
};

inline std::vector<PriorEntry> priors_from_json(const json& j)
{
    std::vector<PriorEntry> out;
    for (const auto& g : detail::require<json>(j, "generators")) {
        PriorEntry e;
        e.name = detail::require<std::string>(g, "name");
        const ModelOrder m = model_from_name(detail::get_or<std::string>(g, "model", "fluxdecay3"));
        e.mean = params_from_json(detail::require<json>(g, "mean"), m);
        if (g.contains("variance")) {
            e.variance = params_from_json(g.at("variance"), m);
        } else {
            const double rel = detail::require<double>(g, "relative_std");
            e.variance = e.mean;
            for (Param k : free_params(m)) e.variance[k] = std::pow(rel * e.mean[k], 2);
        }
        for (Param k : free_params(m)) {
            if (!(e.mean[k] > 0.0) || !(e.variance[k] > 0.0)) {
                throw ConfigError("prior for " + e.name + "." + std::string(param_name(k)) + " must be positive");
            }
        }
        out.push_back(e);
    }
    return out;
}

inline json priors_to_json(const std::vector<PriorEntry>& priors)
{
    json gens = json::array();
    for (const auto& e : priors) {
        gens.push_back({{"name", e.name},
                        {"model", std::string(model_name(e.mean.model))},
                        {"mean", params_to_json(e.mean)},
                        {"variance", params_to_json(e.variance, true)}});
    }
    return json{{"generators", gens}};
}

// --- run configuration ---

struct RunConfig {
    std::filesystem::path base_dir;     // directory of the config file
    std::filesystem::path data_dir;
    std::filesystem::path priors_path;
    std::filesystem::path labels_path;  // optional noise variances and steady states
    std::filesystem::path output_dir;
    std::vector<std::string> generators;  // CSV stem per generator; empty = all prior entries
    std::optional<double> assumed_snr_db;
    bool steady_state_from_labels = false;
    double fs = 20.0;
    PipelineSettings pipeline;
    std::uint64_t seed = 1;
    bool legacy_dft_constant = false;
};

inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base)
{
    using detail::get_or;
    using detail::require;
    RunConfig rc;
    rc.base_dir = base;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    rc.data_dir = resolve(require<std::string>(j, "data_dir"));
    rc.priors_path = resolve(require<std::string>(j, "priors"));
    if (j.contains("labels")) rc.labels_path = resolve(j.at("labels").get<std::string>());
    rc.output_dir = resolve(get_or<std::string>(j, "output_dir", "out"));
    rc.generators = get_or<std::vector<std::string>>(j, "generators", {});
    if (j.contains("assumed_snr_db")) rc.assumed_snr_db = j.at("assumed_snr_db").get<double>();
    rc.steady_state_from_labels = get_or<std::string>(j, "steady_state", "mean") == "labels";
    rc.fs = get_or<double>(j, "fs", rc.fs);
    rc.seed = get_or<std::uint64_t>(j, "seed", rc.seed);
    auto& ps = rc.pipeline;
    for (const auto& b : get_or<json>(j, "bands", json::array())) {
        BandSpec bs;
        bs.freq_hz = require<double>(b, "freq_hz");
        bs.half_width_hz = get_or<double>(b, "half_width_hz", bs.half_width_hz);
        if (!(bs.freq_hz > 0.0) || bs.freq_hz >= 0.5 * rc.fs) throw ConfigError("band frequency outside (0, Nyquist)");
        if (!(bs.half_width_hz >= 0.0)) throw ConfigError("band half-width must be nonnegative");
        ps.bands.push_back(bs);
    }
    ps.lambda0 = get_or<double>(j, "lambda0", ps.lambda0);
    if (j.contains("lambda") && !j.at("lambda").is_null()) ps.lambda = j.at("lambda").get<double>();
    if (j.contains("iota") && !j.at("iota").is_null()) ps.iota = j.at("iota").get<double>();
    if (!(ps.lambda0 > 0.0) || (ps.lambda && !(*ps.lambda > 0.0))) throw ConfigError("lambda0 and lambda must be positive");
    const auto mode = get_or<std::string>(j, "dft_constant", "consistent");
    if (mode == "legacy") rc.legacy_dft_constant = true;
    else if (mode != "consistent") throw ConfigError("dft_constant must be 'consistent' or 'legacy'");
    ps.dft_constant = rc.legacy_dft_constant ? kDftNoiseConstantLegacy : kDftNoiseConstant;
    ps.threads = get_or<unsigned>(j, "threads", 0u);
    const json s = get_or<json>(j, "solver", json::object());
    auto& ss = ps.solver;
    ss.max_iterations = get_or<int>(s, "max_iterations", ss.max_iterations);
    ss.step_tol = get_or<double>(s, "step_tol", ss.step_tol);
    ss.grad_tol = get_or<double>(s, "grad_tol", ss.grad_tol);
    ss.full_newton = get_or<std::string>(s, "step", "gauss_newton") == "newton";
    ss.refresh_every = get_or<int>(s, "refresh_every", ss.refresh_every);
    ss.barrier_init = get_or<double>(s, "barrier_init", ss.barrier_init);
    ss.barrier_factor = get_or<double>(s, "barrier_factor", ss.barrier_factor);
    ss.barrier_final = get_or<double>(s, "barrier_final", ss.barrier_final);
    ss.fraction_to_boundary = get_or<double>(s, "fraction_to_boundary", ss.fraction_to_boundary);
    ss.max_newton_per_barrier = get_or<int>(s, "max_newton_per_barrier", ss.max_newton_per_barrier);
    if (ss.refresh_every < 1) throw ConfigError("refresh_every must be >= 1");
    if (!(ss.barrier_factor > 0.0 && ss.barrier_factor < 1.0)) throw ConfigError("barrier_factor must be in (0,1)");
    return rc;
}

inline RunConfig load_run_config(const std::string& path)
{
    const std::filesystem::path p(path);
    return run_config_from_json(read_json_file(path), p.parent_path());
}

/// Reads the PMU CSVs, priors and optional labels named by a run config.
inline std::vector<GeneratorInput> load_inputs(const RunConfig& rc)
{
    const auto priors = priors_from_json(read_json_file(rc.priors_path.string()));
    json labels;
    if (!rc.labels_path.empty()) labels = read_json_file(rc.labels_path.string());
    auto label_of = [&](const std::string& name) -> const json* {
        if (labels.is_null()) return nullptr;
        for (const auto& g : labels.at("generators"))
            if (g.at("name").get<std::string>() == name) return &g;
        return nullptr;
    };
    std::vector<std::string> names = rc.generators;
    if (names.empty())
        for (const auto& e : priors) names.push_back(e.name);
    std::vector<GeneratorInput> out;
    for (const auto& name : names) {
        const auto it = std::find_if(priors.begin(), priors.end(), [&](const PriorEntry& e) { return e.name == name; });
        if (it == priors.end()) throw ConfigError("no prior for generator " + name);
        GeneratorInput in;
        in.name = name;
        in.window = read_pmu_csv((rc.data_dir / (name + ".csv")).string(), rc.fs);
        const json* lab = label_of(name);
        if (rc.steady_state_from_labels) {
            if (!lab) throw ConfigError("steady_state 'labels' requested but no label for " + name);
            const auto ss = lab->at("steady_state").get<std::vector<double>>();
            for (int c = 0; c < 4; ++c) in.window.steady_state[c] = ss.at(c);
        }
        if (lab && lab->contains("noise_var")) {
            const auto nv = lab->at("noise_var").get<std::vector<double>>();
            for (int c = 0; c < 4; ++c) in.noise_var[c] = nv.at(c);
        } else if (rc.assumed_snr_db) {
            const double ratio = std::pow(10.0, *rc.assumed_snr_db / 10.0);
            for (int c = 0; c < 4; ++c) {
                double p = 0.0;
                for (double v : in.window.ch[c]) p += v * v;
                in.noise_var[c] = p / static_cast<double>(in.window.size()) / ratio;
            }
        } else {
            throw ConfigError("no noise variance for " + name + " (give labels or assumed_snr_db)");
        }
        for (double v : in.noise_var)
            if (!(v > 0.0)) throw ConfigError("noise variance for " + name + " must be positive");
        in.base = it->mean;
        in.prior = log_prior(it->mean.model, it->mean, it->variance);
        out.push_back(std::move(in));
    }
    return out;
}

// --- report ---

inline json complex_pair(const Eigen::Vector2cd& v)
{
    return json::array({v(0).real(), v(0).imag(), v(1).real(), v(1).imag()});
}

inline json report_to_json(const PipelineResult& r, const std::vector<GeneratorInput>& inputs, const RunConfig* rc)
{
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["iota"] = r.sources.iota;
    j["all_converged"] = r.all_converged;
    j["seconds_total"] = r.seconds_total;
    if (rc) {
        j["seed"] = rc->seed;
        j["dft_constant"] = rc->legacy_dft_constant ? "legacy" : "consistent";
        j["lambda0"] = rc->pipeline.lambda0;
    }
    json bands = json::array();
    for (const auto& m : r.masks) {
        bands.push_back({{"freq_hz", m.omega_d / (2.0 * std::numbers::pi)},
                         {"half_width_hz", m.omega_r / (2.0 * std::numbers::pi)},
                         {"bins", m.bins}});
    }
    j["bands"] = bands;
    std::vector<std::string> src;
    for (int g : r.sources.sources) src.push_back(inputs.at(g).name);
    j["sources"] = src;
    json gens = json::array();
    for (const auto& g : r.generators) {
        json e;
        e["name"] = g.name;
        e["index"] = g.index;
        e["ok"] = g.ok;
        if (!g.ok) e["error"] = g.error;
        e["stage1"] = {{"converged", g.stage1.converged},
                       {"iterations", g.stage1.iterations},
                       {"objective", g.stage1.objective},
                       {"status", g.stage1.status},
                       {"seconds", g.seconds_stage1}};
        e["stage2"] = {{"converged", g.stage2.converged},
                       {"iterations", g.stage2.iterations},
                       {"objective", g.stage2.objective},
                       {"status", g.stage2.status},
                       {"seconds", g.seconds_stage2},
                       {"lambda", g.lambda}};
        e["params_prior"] = params_to_json(g.params_prior, true);
        e["params_map"] = params_to_json(g.params_map, true);
        const InjectionSummary& s = r.sources.generators.at(static_cast<std::size_t>(g.index));
        json inj = json::array();
        for (std::size_t k = 0; k < s.bins.size(); ++k) {
            json row{{"bin", s.bins[k]}, {"norm", s.norms[k]}};
            if (g.ok && g.stage2.injections.cols() > static_cast<Eigen::Index>(k)) {
                const auto c = g.stage2.injections.col(static_cast<Eigen::Index>(k));
                row["values"] = {c(0), c(1), c(2), c(3)};
            }
            inj.push_back(row);
        }
        e["injections"] = inj;
        e["inf_norm"] = s.inf_norm;
        e["source"] = s.source;
        json spec = json::array();
        for (const auto& c : g.spectra) {
            spec.push_back({{"bin", c.bin},
                            {"freq_hz", c.freq_hz},
                            {"in_band", c.in_band},
                            {"measured", complex_pair(c.measured)},
                            {"predicted_prior", complex_pair(c.predicted_prior)},
                            {"predicted_post", complex_pair(c.predicted_post)}});
        }
        e["spectra"] = spec;
        const auto pre = g.prediction_error(false);
        const auto post = g.prediction_error(true);
        e["prediction_error_median"] = {{"prior", pre.empty() ? 0.0 : median_of(pre)},
                                        {"stage1", post.empty() ? 0.0 : median_of(post)}};
        gens.push_back(e);
    }
    j["generators"] = gens;
    return j;
}

/// Checks the report invariants that can be recomputed from the file alone.
inline void validate_report(const json& j)
{
    if (!j.is_object()) throw ConfigError("report must be a JSON object");
    if (detail::require<int>(j, "schema_version") != kReportSchemaVersion) throw ConfigError("unsupported report schema");
    const double iota = detail::require<double>(j, "iota");
    for (const auto& g : detail::require<json>(j, "generators")) {
        double mx = 0.0;
        for (const auto& row : detail::require<json>(g, "injections")) mx = std::max(mx, row.at("norm").get<double>());
        const double inf = detail::require<double>(g, "inf_norm");
        if (std::abs(mx - inf) > 1e-12 * std::max(1.0, inf)) {
            throw ConfigError("report inconsistency: injection table does not match inf_norm for " +
                              g.at("name").get<std::string>());
        }
        if (detail::require<bool>(g, "source") != (inf > iota)) {
            throw ConfigError("report inconsistency: verdict does not match inf_norm > iota");
        }
    }
}

} // namespace fosl
