#pragma once

// The two-stage location procedure for a set of generators: spectra, priors,
// stage 1 on out-of-band data, posterior update, stage 2 with injections on
// the declared bands, then the threshold verdict.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fosl/bayes.hpp"
#include "fosl/solver.hpp"
#include "fosl/spectra.hpp"

namespace fosl {

/// FO band declaration in Hz.
struct BandSpec {
    double freq_hz = 0.0;
    double half_width_hz = 0.05;
};

struct GeneratorInput {
    std::string name;
    PmuWindow window;                 // steady_state must be set
    std::array<double, 4> noise_var{};
    GeneratorParams base;             // model order plus values of non-free parameters
    GaussianPrior prior;              // log-space prior on the free parameters
};

enum class StageMode { both, stage1_only, stage2_only };

struct PipelineSettings {
    SolverSettings solver;
    std::vector<BandSpec> bands;
    double lambda0 = 60.0;
    std::optional<double> lambda;     // absolute override of the default rule
    std::optional<double> iota;       // absolute threshold; default rule otherwise
    double dft_constant = kDftNoiseConstant;
    StageMode mode = StageMode::both;
    unsigned threads = 0;
};

/// Measured and predicted current spectra on one bin.
struct BinComparison {
    std::size_t bin = 0;
    double freq_hz = 0.0;
    Eigen::Vector2cd measured;
    Eigen::Vector2cd predicted_prior;
    Eigen::Vector2cd predicted_post;
    bool in_band = false;
};

struct GeneratorResult {
    int index = 0;
    std::string name;
    bool ok = false;
    std::string error;
    MapSolution stage1;
    GaussianPrior posterior;
    MapSolution stage2;
    double lambda = 0.0;
    InjectionSummary summary;
    std::vector<BinComparison> spectra;
    GeneratorParams params_prior;     // natural units at the prior mean
    GeneratorParams params_map;       // natural units at the final estimate
    double seconds_stage1 = 0.0;
    double seconds_stage2 = 0.0;

    /// Prediction error over out-of-band bins, before and after estimation.
    std::vector<double> prediction_error(bool after) const
    {
        std::vector<double> out;
        for (const auto& c : spectra) {
            if (c.in_band) continue;
            out.push_back(prediction_error_pct(c.measured, after ? c.predicted_post : c.predicted_prior));
        }
        return out;
    }
};

struct PipelineResult {
    std::vector<GeneratorResult> generators;
    SourceReport sources;
    std::vector<BandMask> masks;
    bool all_converged = true;
    double seconds_total = 0.0;
};

inline double median_of(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

/// Default threshold: 10x the median over generators of ||I_g||_inf, floored.
inline double default_iota(const std::vector<InjectionSummary>& s)
{
    std::vector<double> v;
    for (const auto& g : s) v.push_back(g.inf_norm);
    if (v.empty()) return 1e-6;
    return std::max(10.0 * median_of(v), 1e-6);
}

inline std::vector<BandMask> band_masks(const std::vector<double>& grid, const std::vector<BandSpec>& bands)
{
    std::vector<BandMask> masks;
    for (const auto& b : bands) {
        masks.push_back(band_mask(grid, 2.0 * std::numbers::pi * b.freq_hz, 2.0 * std::numbers::pi * b.half_width_hz));
    }
    return masks;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Eigen::Vector2cd predicted_current(const Eigen::Matrix2cd& Y, const SpectralDataset& ds, std::size_t w)
{
    return Y * Eigen::Vector2cd(ds.X[kV][w], ds.X[kTheta][w]);
}

inline GeneratorResult run_generator(int index, const GeneratorInput& in, const PipelineSettings& st)
{
    GeneratorResult res;
    res.index = index;
    res.name = in.name;
    try {
        auto ds = std::make_shared<SpectralDataset>(spectral_dataset(in.window, in.noise_var));
        const auto masks = band_masks(ds->grid, st.bands);
        const auto masked = masked_bins(masks);
        const OperatingPoint op{in.window.steady_state[kV], in.window.steady_state[kTheta],
                                in.window.steady_state[kI], in.window.steady_state[kPhi]};

        MapProblem p1 = assemble(index, Stage::stage1, ds, op, in.base, in.prior, 0.0, masks, st.dft_constant);
        const auto* model = static_cast<const GeneratorResidualModel*>(p1.model.get());
        res.params_prior = model->params_from_theta(in.prior.mean);

        GaussianPrior prior2 = in.prior;
        const auto t1 = std::chrono::steady_clock::now();
        if (st.mode != StageMode::stage2_only) {
            res.stage1 = minimize_stage1(p1, st.solver);
            res.posterior = posterior_update(res.stage1.theta, 0.5 * res.stage1.H);
            prior2 = res.posterior;
        } else {
            res.stage1.theta = in.prior.mean;
            res.stage1.converged = true;
            res.stage1.status = "skipped";
            res.posterior = in.prior;
        }
        res.seconds_stage1 = seconds_since(t1);

        const Frf Yprior = model->frf_full(in.prior.mean);
        const Frf Ypost = model->frf_full(res.stage1.theta);
        for (std::size_t w = 1; w < ds->grid.size(); ++w) {
            BinComparison c;
            c.bin = w;
            c.freq_hz = ds->grid[w] / (2.0 * std::numbers::pi);
            c.measured = Eigen::Vector2cd(ds->X[kI][w], ds->X[kPhi][w]);
            c.predicted_prior = predicted_current(Yprior.Y[w], *ds, w);
            c.predicted_post = predicted_current(Ypost.Y[w], *ds, w);
            c.in_band = std::binary_search(masked.begin(), masked.end(), w);
            res.spectra.push_back(c);
        }
        res.params_map = model->params_from_theta(res.stage1.theta);

        if (st.mode != StageMode::stage1_only) {
            const auto t2 = std::chrono::steady_clock::now();
            MapProblem p2 = assemble(index, Stage::stage2, ds, op, in.base, prior2, 0.0, masks, st.dft_constant);
            if (st.lambda) {
                p2.lambda = *st.lambda;
            } else {
                // Gamma_L at the stage-2 starting point, injection bins included
                p2.lambda = default_lambda(st.lambda0, p2.model->evaluate(prior2.mean, false).cov);
            }
            res.lambda = p2.lambda;
            res.stage2 = minimize_stage2(p2, st.solver);
            res.summary = summarize_injections(index, res.stage2);
            res.params_map = model->params_from_theta(res.stage2.theta);
            res.seconds_stage2 = seconds_since(t2);
        }
        res.summary.generator = index;
        res.ok = true;
    } catch (const Error& e) {
        res.ok = false;
        res.error = e.what();
        res.summary.generator = index;
    }
    return res;
}

} // namespace detail

inline PipelineResult run_pipeline(const std::vector<GeneratorInput>& inputs, const PipelineSettings& st)
{
    const auto t0 = std::chrono::steady_clock::now();
    PipelineResult out;
    out.generators = parallel_map(
        inputs.size(), [&](std::size_t i) { return detail::run_generator(static_cast<int>(i), inputs[i], st); },
        st.threads);
    std::vector<InjectionSummary> sums;
    for (const auto& g : out.generators) {
        sums.push_back(g.summary);
        if (!g.ok) out.all_converged = false;
        if (g.ok && st.mode != StageMode::stage2_only && !g.stage1.converged) out.all_converged = false;
        if (g.ok && st.mode != StageMode::stage1_only && !g.stage2.converged) out.all_converged = false;
    }
    const double iota = st.iota ? *st.iota : default_iota(sums);
    out.sources = locate_sources(std::move(sums), iota);
    if (!inputs.empty() && !st.bands.empty()) {
        const int K = static_cast<int>(inputs.front().window.size() - 1) / 2;
        out.masks = band_masks(frequency_grid(K, inputs.front().window.fs), st.bands);
    }
    out.seconds_total = detail::seconds_since(t0);
    return out;
}

} // namespace fosl
