// fosl: simulate PMU datasets, locate forced-oscillation sources, render reports.
//
// Exit codes: 0 ran, 1 runtime failure, 2 configuration or usage error,
// 3 at least one solver did not converge (the report is still written).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fosl/experiment.hpp"
#include "fosl/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonConvergence = 3;

struct SimulateArgs {
    std::string config;
    std::string out = "data";
    std::optional<std::uint64_t> seed;
    double prior_pct = 75.0;
    double prior_std = 0.5;
    double half_width = 0.05;
};

int cmd_simulate(const SimulateArgs& a)
{
    fosl::SimScenario sc = fosl::load_scenario(a.config);
    if (a.seed) sc.seed = *a.seed;
    sc.validate();
    if (!(a.prior_pct >= 0.0 && a.prior_pct < 100.0)) throw fosl::ConfigError("--prior-pct must be in [0, 100)");
    if (!(a.prior_std > 0.0)) throw fosl::ConfigError("--prior-std must be positive");

    const fosl::LabeledDataset ds = fosl::simulate_with_noise(sc, sc.seed);
    const fs::path out(a.out);
    fs::create_directories(out);
    for (std::size_t g = 0; g < ds.names.size(); ++g) {
        fosl::write_pmu_csv((out / (ds.names[g] + ".csv")).string(), ds.noisy[g]);
    }
    fosl::write_json_file((out / "labels.json").string(), fosl::labels_to_json(sc, ds));

    const fosl::PriorRecipe recipe{-a.prior_pct, a.prior_pct, a.prior_std};
    fosl::write_json_file((out / "priors.json").string(), fosl::priors_to_json(fosl::perturbed_priors(ds, recipe, sc.seed)));

    fosl::json bands = fosl::json::array();
    for (const auto& b : fosl::bands_from_labels(ds, a.half_width)) {
        bands.push_back({{"freq_hz", b.freq_hz}, {"half_width_hz", b.half_width_hz}});
    }
    const fosl::json run{{"data_dir", "."},     {"priors", "priors.json"}, {"labels", "labels.json"},
                         {"output_dir", "out"}, {"fs", ds.fs},             {"seed", sc.seed},
                         {"bands", bands}};
    fosl::write_json_file((out / "locate.json").string(), run);

    std::printf("wrote %zu generator CSVs, labels.json, priors.json and locate.json to %s\n", ds.names.size(),
                out.string().c_str());
    for (const auto& l : ds.labels) {
        std::printf("  forced oscillation: %s %s %.4g Hz\n", ds.names[l.generator].c_str(),
                    std::string(fosl::forcing_name(l.channel)).c_str(), l.freq_hz);
    }
    return kExitOk;
}

struct LocateArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda0;
    std::optional<double> iota;
    std::string stage = "both";
    bool legacy_dft = false;
    std::optional<unsigned> threads;
};

int cmd_locate(const LocateArgs& a)
{
    fosl::RunConfig rc = fosl::load_run_config(a.config);
    if (a.seed) rc.seed = *a.seed;
    if (a.lambda0) rc.pipeline.lambda0 = *a.lambda0;
    if (a.iota) rc.pipeline.iota = *a.iota;
    if (a.threads) rc.pipeline.threads = *a.threads;
    if (!a.out.empty()) rc.output_dir = a.out;
    if (a.legacy_dft) {
        rc.legacy_dft_constant = true;
        rc.pipeline.dft_constant = fosl::kDftNoiseConstantLegacy;
    }
    if (a.stage == "1") rc.pipeline.mode = fosl::StageMode::stage1_only;
    else if (a.stage == "2") rc.pipeline.mode = fosl::StageMode::stage2_only;

    const auto inputs = fosl::load_inputs(rc);
    const fosl::PipelineResult res = fosl::run_pipeline(inputs, rc.pipeline);
    const fosl::json rep = fosl::report_to_json(res, inputs, &rc);

    fs::create_directories(rc.output_dir);
    fosl::write_json_file((rc.output_dir / "report.json").string(), rep);
    fosl::write_figure_csvs(rep, rc.output_dir);
    std::cout << fosl::render_report_table(rep);
    std::cout << "report and plot data written to " << rc.output_dir.string() << "\n";
    return res.all_converged ? kExitOk : kExitNonConvergence;
}

struct ReportArgs {
    std::string path;
    std::string csv_dir;
};

int cmd_report(const ReportArgs& a)
{
    if (!fs::exists(a.path)) throw fosl::ConfigError("report file not found: " + a.path);
    const fosl::json rep = fosl::read_json_file(a.path);
    fosl::validate_report(rep);
    std::cout << fosl::render_report_table(rep);
    if (!a.csv_dir.empty()) fosl::write_figure_csvs(rep, a.csv_dir);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Forced-oscillation source location from generator PMU data"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "simulate a scenario and write PMU CSVs, labels, priors and a run config");
    s->add_option("--config", sim.config, "scenario JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--out", sim.out, "output directory")->capture_default_str();
    s->add_option("--seed", sim.seed, "override the scenario seed");
    s->add_option("--prior-pct", sim.prior_pct, "prior means drawn uniformly within +/- this percentage")->capture_default_str();
    s->add_option("--prior-std", sim.prior_std, "prior standard deviation relative to the prior mean")->capture_default_str();
    s->add_option("--band-half-width", sim.half_width, "half width of the declared FO bands in Hz")->capture_default_str();

    LocateArgs loc;
    auto* l = app.add_subcommand("locate", "run the two-stage estimation and flag FO sources");
    l->add_option("--config", loc.config, "run configuration JSON")->required()->check(CLI::ExistingFile);
    l->add_option("--out", loc.out, "override the output directory");
    l->add_option("--seed", loc.seed, "seed recorded in the report");
    l->add_option("--lambda0", loc.lambda0, "sparsity scale for the default lambda rule");
    l->add_option("--iota", loc.iota, "absolute source threshold on max per-bin |I|");
    l->add_option("--stage", loc.stage, "run both stages or only one (debugging)")
        ->check(CLI::IsMember({"both", "1", "2"}))
        ->capture_default_str();
    l->add_flag("--legacy-dft-constant", loc.legacy_dft, "use the alternative DFT noise constant");
    l->add_option("--threads", loc.threads, "worker threads (0 = hardware concurrency)");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "validate and print a saved report");
    r->add_option("report", rep.path, "report JSON")->required();
    r->add_option("--csv", rep.csv_dir, "also regenerate the plot-data CSVs into this directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*s) return cmd_simulate(sim);
        if (*l) return cmd_locate(loc);
        return cmd_report(rep);
    } catch (const fosl::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
