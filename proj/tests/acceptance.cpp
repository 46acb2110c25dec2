// Acceptance suite: one PASS/FAIL line per criterion, detail lines indented.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fosl/experiment.hpp"

#ifndef FOSL_FIXTURE_DIR
#define FOSL_FIXTURE_DIR "fixtures"
#endif

using namespace fosl;

namespace {

struct Verdict {
    bool pass = false;
    std::string summary;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

SimScenario fixture(const char* name) { return load_scenario(std::string(FOSL_FIXTURE_DIR) + "/" + name); }

/// Simulated dataset plus perturbed priors and a full pipeline run.
struct ScenarioRun {
    LabeledDataset ds;
    std::vector<GeneratorInput> inputs;
    PipelineResult result;
};

ScenarioRun run_scenario(const SimScenario& sc, std::uint64_t seed, const PipelineSettings& base)
{
    ScenarioRun r;
    r.ds = simulate_with_noise(sc, seed);
    r.inputs = inputs_from_dataset(r.ds, perturbed_priors(r.ds, PriorRecipe{}, seed));
    PipelineSettings st = base;
    st.bands = bands_from_labels(r.ds);
    r.result = run_pipeline(r.inputs, st);
    return r;
}

std::vector<int> source_indices(const LabeledDataset& ds)
{
    std::vector<int> s;
    for (const auto& l : ds.labels) s.push_back(l.generator);
    return s;
}

bool is_source(const std::vector<int>& s, int g) { return std::find(s.begin(), s.end(), g) != s.end(); }

// ---------------------------------------------------------------------------
// 1 and 3: 4-bus reproduction and stage-1 reconciliation share the runs.

std::vector<ScenarioRun> four_bus_runs;
double four_bus_seconds = 0.0;

Verdict criterion1()
{
    const SimScenario sc = fixture("four_bus.json");
    const auto t0 = std::chrono::steady_clock::now();
    int ok = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        four_bus_runs.push_back(run_scenario(sc, seed, PipelineSettings{}));
        const auto& r = four_bus_runs.back();
        const auto src = source_indices(r.ds);
        double s = 0.0, ns = 0.0;
        for (const auto& g : r.result.sources.generators) {
            double& slot = is_source(src, g.generator) ? s : ns;
            slot = std::max(slot, g.inf_norm);
        }
        const double ratio = ns > 0.0 ? s / ns : std::numeric_limits<double>::infinity();
        const bool pass = ratio >= 100.0 && r.result.all_converged;
        ok += pass;
        worst = std::min(worst, ratio);
        std::printf("  C1 seed %2llu: source max|I| %.4g, non-source max %.3g, ratio %.3g%s%s\n",
                    static_cast<unsigned long long>(seed), s, ns, ratio, r.result.all_converged ? "" : " (not converged)",
                    pass ? "" : "  <-- miss");
    }
    four_bus_seconds = seconds_since(t0);
    const bool pass = ok >= 18 && four_bus_seconds < 300.0;
    return {pass, fmt("4-bus reproduction: %d/20 seeds with source/non-source >= 100x (min ratio %.3g), %.1f s total", ok,
                      worst, four_bus_seconds)};
}

Verdict criterion3()
{
    if (four_bus_runs.empty()) return {false, "stage-1 reconciliation: no criterion-1 runs available"};
    int ok = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < four_bus_runs.size(); ++i) {
        std::vector<double> pre, post;
        for (const auto& g : four_bus_runs[i].result.generators) {
            const auto a = g.prediction_error(false);
            const auto b = g.prediction_error(true);
            pre.insert(pre.end(), a.begin(), a.end());
            post.insert(post.end(), b.begin(), b.end());
        }
        const double q = median_of(post) / median_of(pre);
        worst = std::max(worst, q);
        ok += q <= 1.0 / 3.0;
        std::printf("  C3 seed %2zu: median prediction error %.4f -> %.4f (ratio %.3f)%s\n", i + 1, median_of(pre),
                    median_of(post), q, q <= 1.0 / 3.0 ? "" : "  <-- miss");
    }
    const int n = static_cast<int>(four_bus_runs.size());
    return {ok == n, fmt("stage-1 reconciliation: %d/%d seeds with post/pre median prediction error <= 1/3 (worst %.3f)", ok,
                         n, worst)};
}

// ---------------------------------------------------------------------------

Verdict criterion2()
{
    const SimScenario sc = fixture("ten_generator.json");
    const auto t0 = std::chrono::steady_clock::now();
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto r = run_scenario(sc, seed, PipelineSettings{});
        const auto src = source_indices(r.ds);
        double ns = 0.0;
        for (const auto& g : r.result.sources.generators)
            if (!is_source(src, g.generator)) ns = std::max(ns, g.inf_norm);
        const SourceReport rep = locate_sources(r.result.sources.generators, 10.0 * ns);
        bool pass = r.result.all_converged;
        std::string flagged;
        for (const auto& g : rep.generators) {
            if (g.source != is_source(src, g.generator)) pass = false;
            if (g.source) flagged += " " + r.ds.names[g.generator];
        }
        double smin = std::numeric_limits<double>::infinity();
        for (int g : src) smin = std::min(smin, rep.generators[g].inf_norm);
        ok += pass;
        std::printf("  C2 seed %2llu: flagged {%s } at iota %.3g, min source %.4g%s%s\n",
                    static_cast<unsigned long long>(seed), flagged.c_str(), rep.iota, smin,
                    r.result.all_converged ? "" : " (not converged)", pass ? "" : "  <-- miss");
    }
    return {ok >= 9, fmt("two-FO scenario: %d/10 seeds flag exactly the true sources at iota = 10x max non-source, %.1f s",
                         ok, seconds_since(t0))};
}

// ---------------------------------------------------------------------------

Verdict criterion4()
{
    const auto t0 = std::chrono::steady_clock::now();
    const int K = 6;
    const int N = 2 * K + 1;
    const std::array<double, 4> sigma2{1.0, 0.8, 0.1, 0.15};
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Random Y per bin, redrawn until the N/Q cross-correlation is large
    // enough for a 1e5-sample estimate to resolve 5%.
    Frf Y;
    Y.grid = frequency_grid(K, 20.0);
    Y.Y.resize(K + 1, Eigen::Matrix2cd::Zero());
    const SpectralNoise sn = spectral_noise(sigma2, K);
    for (int w = 1; w <= K; ++w) {
        for (;;) {
            Eigen::Matrix2cd y;
            for (int i = 0; i < 4; ++i) y(i / 2, i % 2) = {u(rng), u(rng)};
            const Eigen::Matrix4d G = covariance_block(y, sn);
            const double rho = std::min(std::abs(G(0, 2)), std::abs(G(0, 3))) / std::sqrt(G(0, 0) * G(2, 2));
            if (rho > 0.3) {
                Y.Y[w] = y;
                break;
            }
        }
    }
    std::vector<std::size_t> bins;
    for (int w = 1; w <= K; ++w) bins.push_back(static_cast<std::size_t>(w));
    const Eigen::MatrixXd analytic = noise_covariance(Y, sigma2, K, bins).dense();

    // Naive DFT of white noise, independent of the FFT path.
    std::vector<std::complex<double>> tw(static_cast<std::size_t>(N * (K + 1)));
    for (int w = 0; w <= K; ++w)
        for (int n = 0; n < N; ++n) tw[w * N + n] = std::polar(1.0, -2.0 * std::numbers::pi * w * n / N);
    const int draws = 100000;
    const int d = 4 * K;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd L(d);
    std::array<std::vector<double>, 4> x;
    for (auto& c : x) c.resize(N);
    for (int it = 0; it < draws; ++it) {
        for (int c = 0; c < 4; ++c)
            for (int n = 0; n < N; ++n) x[c][n] = std::sqrt(sigma2[c]) * normal(rng);
        for (int w = 1; w <= K; ++w) {
            std::array<std::complex<double>, 4> X{};
            for (int c = 0; c < 4; ++c)
                for (int n = 0; n < N; ++n) X[c] += x[c][n] * tw[w * N + n];
            const Eigen::Vector4d r = residual_bin(Y.Y[w], X[kV], X[kTheta], X[kI], X[kPhi]);
            // ResidualVector::stacked() ordering: component-major, bin-minor
            for (int c = 0; c < 4; ++c) L(c * K + (w - 1)) = r(c);
        }
        acc.noalias() += L * L.transpose();
    }
    const Eigen::MatrixXd mc = acc / draws;

    double worst_rel = 0.0, worst_zero = 0.0;
    bool zeros_exact = true;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double scale = std::sqrt(analytic(i, i) * analytic(j, j));
            if (analytic(i, j) != 0.0) {
                worst_rel = std::max(worst_rel, std::abs(mc(i, j) - analytic(i, j)) / std::abs(analytic(i, j)));
            } else {
                worst_zero = std::max(worst_zero, std::abs(mc(i, j)) / scale);
            }
            const bool same_bin = (i % K) == (j % K);
            const bool structural = same_bin && (i / K) / 2 == (j / K) / 2 && i != j;
            if ((!same_bin || structural) && analytic(i, j) != 0.0) zeros_exact = false;
        }
    }
    const double secs = seconds_since(t0);
    std::printf("  C4: %d bins, worst relative error on nonzero entries %.4f, largest MC value on zero entries %.4f of scale\n",
                K, worst_rel, worst_zero);
    const bool pass = worst_rel < 0.05 && zeros_exact && worst_zero < 0.05 && secs < 60.0;
    return {pass, fmt("covariance vs 1e5-draw Monte Carlo: worst rel. err %.4f, zero blocks exact: %s, %.1f s", worst_rel,
                      zeros_exact ? "yes" : "no", secs)};
}

// ---------------------------------------------------------------------------

struct DerivativeCheck {
    double grad = 0.0;
    double hess = 0.0;
};

/// Fourth-order central difference (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h
/// of a scalar or vector function along coordinate i.
template <class F>
auto central_difference(F&& fn, const Eigen::VectorXd& x, Eigen::Index i, double h) -> decltype(fn(x))
{
    auto at = [&](double t) {
        Eigen::VectorXd y = x;
        y(i) += t;
        return fn(y);
    };
    return (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
}

DerivativeCheck check_derivatives(const MapProblem& p, const Eigen::VectorXd& x)
{
    const FrozenCovariance fc = freeze_at(p, x);
    const auto [f, g] = objective_gradient(p, x, fc);
    auto value = [&](const Eigen::VectorXd& y) { return detail::objective_value(p, y, fc); };
    auto gradient = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd { return objective_gradient(p, y, fc).second; };
    Eigen::VectorXd gfd(x.size());
    Eigen::MatrixXd hfd(x.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-4 * std::max(1.0, std::abs(x(i)));
        gfd(i) = central_difference(value, x, i, h);
        hfd.col(i) = central_difference(gradient, x, i, h);
    }
    const Eigen::MatrixXd H = hessian(p, x, fc, true);
    return {(g - gfd).norm() / gfd.norm(), (H - hfd).norm() / hfd.norm()};
}

Verdict criterion5()
{
    const auto t0 = std::chrono::steady_clock::now();
    const SimScenario four = fixture("four_bus.json");
    const SimScenario ten = fixture("ten_generator.json");
    const LabeledDataset d4 = simulate_with_noise(four, 7);
    const LabeledDataset d10 = simulate_with_noise(ten, 7);

    struct Fixture {
        std::string name;
        const LabeledDataset* ds;
        int gen;
        Stage stage;
    };
    const std::vector<Fixture> fixtures{{"fluxdecay3 stage 1", &d4, 1, Stage::stage1},
                                        {"fluxdecay3 stage 2", &d4, 1, Stage::stage2},
                                        {"classical2 stage 1", &d10, 2, Stage::stage1},
                                        {"classical2 stage 2", &d10, 2, Stage::stage2}};
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst_g = 0.0, worst_h = 0.0;
    for (const auto& fx : fixtures) {
        const auto inputs = inputs_from_dataset(*fx.ds, perturbed_priors(*fx.ds, PriorRecipe{}, 7));
        const auto& in = inputs.at(static_cast<std::size_t>(fx.gen));
        auto data = std::make_shared<SpectralDataset>(spectral_dataset(in.window, in.noise_var));
        const OperatingPoint op{in.window.steady_state[kV], in.window.steady_state[kTheta], in.window.steady_state[kI],
                                in.window.steady_state[kPhi]};
        const auto masks = band_masks(data->grid, bands_from_labels(*fx.ds));
        const MapProblem p = assemble(fx.gen, fx.stage, data, op, in.base, in.prior, 3.0, masks);
        double fg = 0.0, fh = 0.0;
        for (int k = 0; k < 10; ++k) {
            Eigen::VectorXd x(p.dim());
            for (Eigen::Index i = 0; i < p.m(); ++i) x(i) = p.prior.mean(i) + 0.2 * normal(rng);
            for (Eigen::Index i = p.m(); i < p.m() + p.n_inj(); ++i) x(i) = 0.5 * normal(rng);
            for (Eigen::Index i = p.m() + p.n_inj(); i < p.dim(); ++i) x(i) = std::abs(x(i - p.n_inj())) + 0.1;
            const auto c = check_derivatives(p, x);
            fg = std::max(fg, c.grad);
            fh = std::max(fh, c.hess);
        }
        std::printf("  C5 %-20s dim %3ld: worst gradient rel. err %.2e, worst Hessian rel. err %.2e\n", fx.name.c_str(),
                    static_cast<long>(p.dim()), fg, fh);
        worst_g = std::max(worst_g, fg);
        worst_h = std::max(worst_h, fh);
    }
    return {worst_g < 1e-5 && worst_h < 1e-3,
            fmt("derivatives vs finite differences: gradient %.2e (< 1e-5), Hessian %.2e (< 1e-3), %.1f s", worst_g,
                worst_h, seconds_since(t0))};
}

// ---------------------------------------------------------------------------

Verdict criterion6()
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int m = 5, bins = 40;
    std::vector<Eigen::Vector4d> data(bins);
    std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>> A(bins);
    std::vector<Eigen::Matrix4d> cov(bins);
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    GaussianPrior prior;
    prior.mean = Eigen::VectorXd::NullaryExpr(m, [&] { return normal(rng); });
    prior.var = Eigen::VectorXd::NullaryExpr(m, [&] { return 0.5 + std::abs(normal(rng)); });
    for (int b = 0; b < bins; ++b) {
        data[b] = Eigen::Vector4d::NullaryExpr([&] { return normal(rng); });
        A[b] = Eigen::MatrixXd::NullaryExpr(4, m, [&] { return normal(rng); });
        const Eigen::Matrix4d R = Eigen::Matrix4d::NullaryExpr([&] { return normal(rng); });
        cov[b] = R * R.transpose() + Eigen::Matrix4d::Identity();
        const Eigen::Matrix4d W = cov[b].inverse();
        lhs += A[b].transpose() * W * A[b];
        rhs += A[b].transpose() * W * data[b];
    }
    lhs.diagonal() += prior.var.cwiseInverse();
    rhs += prior.mean.cwiseQuotient(prior.var);
    const Eigen::VectorXd ridge = lhs.ldlt().solve(rhs);

    MapProblem p;
    p.stage = Stage::stage1;
    p.model = std::make_shared<AffineResidualModel>(data, A, cov, m);
    p.prior = prior;
    const MapSolution s1 = minimize_stage1(p);
    const double ridge_err = (s1.theta - ridge).norm() / ridge.norm();

    // Separable LASSO: one injection bin, diagonal weights, no parameters.
    const Eigen::Vector4d r0(2.0, -0.3, 0.05, -1.2);
    const Eigen::Vector4d sig2(0.5, 1.0, 2.0, 0.25);
    const double lambda = 1.7;
    MapProblem q;
    q.stage = Stage::stage2;
    q.model = std::make_shared<AffineResidualModel>(std::vector<Eigen::Vector4d>{r0},
                                                    std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>>{
                                                        Eigen::Matrix<double, 4, Eigen::Dynamic>(4, 0)},
                                                    std::vector<Eigen::Matrix4d>{Eigen::Matrix4d(sig2.asDiagonal())}, 0);
    q.prior.mean.resize(0);
    q.prior.var.resize(0);
    q.injection_slots = {0};
    q.injection_bins = {1};
    q.lambda = lambda;
    const MapSolution s2 = minimize_stage2(q);
    double lasso_err = 0.0;
    for (int c = 0; c < 4; ++c) {
        // argmin (r - I)^2 / s2 + lambda |I|  =  soft(r, lambda s2 / 2)
        const double t = 0.5 * lambda * sig2(c);
        const double soft = std::copysign(std::max(std::abs(r0(c)) - t, 0.0), r0(c));
        lasso_err = std::max(lasso_err, std::abs(s2.injections(c, 0) - soft));
    }
    std::printf("  C6: ridge rel. err %.2e (stage 1, %d iterations); LASSO abs. err %.2e (stage 2, %d iterations)\n",
                ridge_err, s1.iterations, lasso_err, s2.iterations);
    return {ridge_err < 1e-6 && lasso_err < 1e-8 && s1.converged && s2.converged,
            fmt("optimizer oracles: ridge rel. err %.2e (< 1e-6), soft-threshold err %.2e (< 1e-8)", ridge_err, lasso_err)};
}

// ---------------------------------------------------------------------------

Verdict criterion7()
{
    const auto t0 = std::chrono::steady_clock::now();
    const SimScenario sc = fixture("four_bus.json");
    const LabeledDataset ds = simulate_with_noise(sc, 1);
    const auto inputs = inputs_from_dataset(ds, perturbed_priors(ds, PriorRecipe{}, 1));
    PipelineSettings st;
    st.bands = bands_from_labels(ds);
    const double lambda0 = st.lambda0;
    const PipelineResult ref = run_pipeline(inputs, st);
    const double iota = ref.sources.iota;

    auto count_above = [&](const PipelineResult& r, double thr) {
        int n = 0;
        for (const auto& g : r.sources.generators)
            for (double v : g.norms) n += v > thr;
        return n;
    };
    bool monotone = true;
    int prev = std::numeric_limits<int>::max();
    std::string counts;
    for (int k = 0; k < 10; ++k) {
        st.lambda0 = lambda0 * std::pow(10.0, -2.0 + 5.0 * k / 9.0);  // 1e-2 .. 1e3 times the default
        const int n = count_above(run_pipeline(inputs, st), iota);
        counts += " " + std::to_string(n);
        if (n > prev) monotone = false;
        prev = n;
    }
    st.lambda0 = lambda0 * 1e6;
    const PipelineResult big = run_pipeline(inputs, st);
    double largest = 0.0;
    for (const auto& g : big.sources.generators) largest = std::max(largest, g.inf_norm);
    std::printf("  C7: bins above iota = %.4g over the sweep:%s; max |I| at 1e6 x default = %.2e\n", iota, counts.c_str(),
                largest);
    return {monotone && largest < 1e-9,
            fmt("sparsity: counts non-increasing over 10-point sweep: %s, max |I| at 1e6x default lambda %.2e (< 1e-9), %.1f s",
                monotone ? "yes" : "no", largest, seconds_since(t0))};
}

// ---------------------------------------------------------------------------

Verdict criterion8()
{
    const SimScenario sc = fixture("four_bus.json");
    LabeledDataset ds = synthesize_small_signal(sc, 1e-3, 8);
    // Nominal noise level for the covariance: 45 dB below each clean channel.
    for (std::size_t g = 0; g < ds.names.size(); ++g) {
        for (int c = 0; c < 4; ++c) ds.noise_var[g][c] = deviation_power(ds.clean[g].ch[c], nullptr) * std::pow(10.0, -4.5);
    }
    const auto inputs = inputs_from_dataset(ds, perturbed_priors(ds, PriorRecipe{0.0, 0.0, 0.5}, 8), false);
    PipelineSettings st;
    st.bands = {{sc.forcings.front().freq_hz, 0.05}};  // the fixture's band, although nothing is forced
    const PipelineResult r = run_pipeline(inputs, st);
    double worst = 0.0;
    for (const auto& g : r.generators) {
        double num = 0.0, den = 0.0;
        for (const auto& c : g.spectra) {
            if (c.in_band) continue;
            num += (c.measured - c.predicted_post).squaredNorm();
            den += c.measured.squaredNorm();
        }
        worst = std::max(worst, std::sqrt(num / den));
        std::printf("  C8 %s: out-of-band relative residual RMS %.2e, max|I| %.2e\n", g.name.c_str(), std::sqrt(num / den),
                    g.summary.inf_norm);
    }
    const bool pass = r.sources.sources.empty() && worst < 1e-8 && r.all_converged;
    return {pass, fmt("null test: %zu sources flagged, worst relative residual RMS %.2e (< 1e-8)", r.sources.sources.size(),
                      worst)};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<int, std::function<Verdict()>>> all{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
        {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8}};
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    if (!only.empty() && std::find(only.begin(), only.end(), 3) != only.end() &&
        std::find(only.begin(), only.end(), 1) == only.end()) {
        only.push_back(1);  // criterion 3 reuses the criterion-1 runs
    }

    std::vector<std::string> lines;
    int failures = 0;
    for (const auto& [id, fn] : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        lines.push_back(fmt("%s criterion %d: %s", v.pass ? "PASS" : "FAIL", id, v.summary.c_str()));
        std::printf("%s\n", lines.back().c_str());
        std::fflush(stdout);
    }
    std::printf("\nsummary\n");
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
    return failures == 0 ? 0 : 1;
}
