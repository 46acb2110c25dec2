#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "fosl/experiment.hpp"
#include "fosl/report.hpp"

#ifndef FOSL_FIXTURE_DIR
#define FOSL_FIXTURE_DIR "fixtures"
#endif

using namespace fosl;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinRel;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("fosl_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixture(const char* name) { return std::string(FOSL_FIXTURE_DIR) + "/" + name; }

/// Noise-free linear data with mildly perturbed priors: quick to solve, no sources.
struct SmallRun {
    LabeledDataset ds;
    std::vector<GeneratorInput> inputs;
    PipelineResult result;
};

SmallRun small_run()
{
    SimScenario sc = load_scenario(fixture("four_bus.json"));
    sc.duration = 30.0;
    SmallRun r;
    r.ds = synthesize_small_signal(sc, 1e-3, 2);
    for (std::size_t g = 0; g < r.ds.names.size(); ++g)
        for (int c = 0; c < 4; ++c) r.ds.noise_var[g][c] = deviation_power(r.ds.clean[g].ch[c], nullptr) * 1e-4;
    r.inputs = inputs_from_dataset(r.ds, perturbed_priors(r.ds, PriorRecipe{-20.0, 20.0, 0.5}, 2), false);
    PipelineSettings st;
    st.bands = {{0.5, 0.05}};
    r.result = run_pipeline(r.inputs, st);
    return r;
}

} // namespace

TEST_CASE("scenario fixtures load and malformed configs raise ConfigError")
{
    const SimScenario sc = load_scenario(fixture("ten_generator.json"));
    CHECK(sc.generators.size() == 10);
    CHECK(sc.forcings.size() == 2);
    CHECK(sc.generators[2].params.model == ModelOrder::classical2);
    CHECK_NOTHROW(sc.validate());

    const auto dir = scratch_dir("scenario");
    {
        std::ofstream f(dir / "broken.json");
        f << "{ \"name\": ";
    }
    CHECK_THROWS_AS(load_scenario((dir / "broken.json").string()), ConfigError);

    json j = read_json_file(fixture("four_bus.json"));
    j["generators"][0]["params"]["Xd_primed"] = 0.3;
    CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
    j = read_json_file(fixture("four_bus.json"));
    j["forcings"][0]["channel"] = "governor";
    CHECK_THROWS_AS(scenario_from_json(j), ConfigError);
    CHECK_THROWS_AS(load_scenario((dir / "nope.json").string()), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("priors survive a JSON round trip")
{
    const SimScenario sc = load_scenario(fixture("ten_generator.json"));
    LabeledDataset ds;
    for (const auto& g : sc.generators) {
        ds.names.push_back(g.name);
        ds.truth.push_back(g.params);
    }
    const auto priors = perturbed_priors(ds, PriorRecipe{}, 4);
    const auto back = priors_from_json(priors_to_json(priors));
    REQUIRE(back.size() == priors.size());
    for (std::size_t g = 0; g < priors.size(); ++g) {
        CHECK(back[g].name == priors[g].name);
        CHECK(back[g].mean.model == priors[g].mean.model);
        for (Param k : free_params(priors[g].mean.model)) {
            CHECK(back[g].mean[k] == priors[g].mean[k]);
            CHECK(back[g].variance[k] == priors[g].variance[k]);
        }
    }
}

TEST_CASE("pipeline on noise-free linear data recovers the fit and flags nothing")
{
    const SmallRun r = small_run();
    REQUIRE(r.result.generators.size() == 3);
    CHECK(r.result.all_converged);
    CHECK(r.result.sources.sources.empty());
    for (const auto& g : r.result.generators) {
        CHECK(g.ok);
        const double post = median_of(g.prediction_error(true));
        CHECK(post < 1e-4);
        CHECK(median_of(g.prediction_error(false)) > 100.0 * post);
    }
    const double iota = default_iota(r.result.sources.generators);
    CHECK(iota >= 1e-6);
    CHECK_THAT(r.result.sources.iota, WithinRel(iota, 1e-15));
}

TEST_CASE("reports round trip and figure CSVs regenerate from the saved report")
{
    const SmallRun r = small_run();
    const json rep = report_to_json(r.result, r.inputs, nullptr);
    CHECK_NOTHROW(validate_report(rep));

    const auto dir = scratch_dir("report");
    write_json_file((dir / "report.json").string(), rep);
    const json back = read_json_file((dir / "report.json").string());
    CHECK(back == rep);
    CHECK(render_report_table(back) == render_report_table(rep));
    CHECK_THAT(render_report_table(rep), ContainsSubstring("sources: none"));

    write_figure_csvs(rep, dir / "a");
    write_figure_csvs(back, dir / "b");
    for (const char* f : {"injections.csv", "prediction_error.csv", "spectra_G1.csv", "spectra_G3.csv"}) {
        INFO(f);
        REQUIRE(fs::exists(dir / "a" / f));
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }

    json tampered = rep;
    tampered["generators"][0]["source"] = !tampered["generators"][0]["source"].get<bool>();
    CHECK_THROWS_AS(validate_report(tampered), ConfigError);
    tampered = rep;
    tampered["generators"][1]["inf_norm"] = 123.0;
    CHECK_THROWS_AS(validate_report(tampered), ConfigError);
    tampered = rep;
    tampered["schema_version"] = 99;
    CHECK_THROWS_AS(validate_report(tampered), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("run configs validate their fields")
{
    const fs::path base = "/tmp";
    json j{{"data_dir", "d"}, {"priors", "p.json"}, {"bands", {{{"freq_hz", 0.5}}}}, {"lambda0", 10.0}};
    const RunConfig rc = run_config_from_json(j, base);
    CHECK(rc.data_dir == base / "d");
    CHECK(rc.pipeline.lambda0 == 10.0);
    CHECK(rc.pipeline.bands.at(0).half_width_hz == 0.05);
    CHECK(rc.pipeline.dft_constant == kDftNoiseConstant);

    j["bands"] = {{{"freq_hz", 15.0}}};
    CHECK_THROWS_AS(run_config_from_json(j, base), ConfigError);
    j["bands"] = json::array();
    j["lambda0"] = 0.0;
    CHECK_THROWS_AS(run_config_from_json(j, base), ConfigError);
    j["lambda0"] = 10.0;
    j["dft_constant"] = "other";
    CHECK_THROWS_AS(run_config_from_json(j, base), ConfigError);
    j.erase("dft_constant");
    j.erase("priors");
    CHECK_THROWS_AS(run_config_from_json(j, base), ConfigError);
}

#ifdef FOSL_CLI

namespace {

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string("\"") + FOSL_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("command line tool: exit codes and end-to-end run")
{
    const auto dir = scratch_dir("cli");
    const fs::path log = dir / "log.txt";

    CHECK(run_cli("", log) == 2);
    CHECK(run_cli("frobnicate", log) == 2);
    CHECK(run_cli("report " + (dir / "missing.json").string(), log) == 2);
    CHECK(run_cli("simulate --config " + (dir / "missing.json").string(), log) == 2);
    {
        std::ofstream f(dir / "bad.json");
        f << "{\"buses\": 2}";
    }
    CHECK(run_cli("simulate --config " + (dir / "bad.json").string(), log) == 2);

    json sc = read_json_file(fixture("four_bus.json"));
    sc["timing"]["duration"] = 60.0;
    sc["timing"]["warmup"] = 10.0;
    write_json_file((dir / "scenario.json").string(), sc);
    const fs::path data = dir / "data";
    REQUIRE(run_cli("simulate --config " + (dir / "scenario.json").string() + " --out " + data.string() + " --seed 3", log) == 0);
    for (const char* f : {"G1.csv", "G2.csv", "G3.csv", "labels.json", "priors.json", "locate.json"}) CHECK(fs::exists(data / f));

    CHECK(run_cli("locate --config " + (data / "locate.json").string() + " --stage 7", log) == 2);
    const int rc = run_cli("locate --config " + (data / "locate.json").string(), log);
    CHECK((rc == 0 || rc == 3));
    const fs::path report = data / "out" / "report.json";
    REQUIRE(fs::exists(report));
    const json rep = read_json_file(report.string());
    CHECK_NOTHROW(validate_report(rep));
    CHECK(rep.at("all_converged").get<bool>() == (rc == 0));
    CHECK(rep.at("seed").get<int>() == 3);
    CHECK_THAT(slurp(log), ContainsSubstring("sources:"));

    CHECK(run_cli("report " + report.string() + " --csv " + (dir / "csv").string(), log) == 0);
    CHECK(slurp(dir / "csv" / "injections.csv") == slurp(data / "out" / "injections.csv"));

    {
        std::ofstream f(dir / "garbage.json");
        f << "[1, 2";
    }
    CHECK(run_cli("report " + (dir / "garbage.json").string(), log) == 2);
    fs::remove_all(dir);
}

#endif
