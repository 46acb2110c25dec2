#pragma once

// Glue between a simulated LabeledDataset and the location pipeline: prior
// perturbation, band declarations from the FO labels and the per-generator
// inputs. The CLI `simulate` path and the test programs share these so the
// files on disk and the in-memory runs agree.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fosl/io.hpp"

namespace fosl {

struct PriorRecipe {
    double lo_pct = -75.0;
    double hi_pct = 75.0;
    double relative_std = 0.5;
};

/// Derived RNG streams so that one scenario seed fixes the whole experiment.
inline std::uint64_t noise_seed(std::uint64_t seed) { return 1000 + seed; }
inline std::uint64_t prior_seed(std::uint64_t seed, std::size_t g) { return seed * 100 + g; }

inline std::vector<PriorEntry> perturbed_priors(const LabeledDataset& ds, const PriorRecipe& r, std::uint64_t seed)
{
    std::vector<PriorEntry> out;
    for (std::size_t g = 0; g < ds.truth.size(); ++g) {
        PriorEntry e;
        e.name = ds.names[g];
        e.mean = perturb_params(ds.truth[g], r.lo_pct, r.hi_pct, prior_seed(seed, g));
        e.variance = e.mean;
        for (Param k : free_params(e.mean.model)) e.variance[k] = std::pow(r.relative_std * e.mean[k], 2);
        out.push_back(e);
    }
    return out;
}

inline std::vector<BandSpec> bands_from_labels(const LabeledDataset& ds, double half_width_hz = 0.05)
{
    std::vector<BandSpec> out;
    for (const auto& l : ds.labels) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const BandSpec& b) { return b.freq_hz == l.freq_hz; });
        if (!dup) out.push_back({l.freq_hz, half_width_hz});
    }
    return out;
}

/// One pipeline input per generator. The steady state is the window mean, as
/// it would be for field data; noise variances come from the dataset.
inline std::vector<GeneratorInput> inputs_from_dataset(const LabeledDataset& ds, const std::vector<PriorEntry>& priors,
                                                       bool use_noisy = true)
{
    if (priors.size() != ds.names.size()) throw ConfigError("one prior per generator required");
    std::vector<GeneratorInput> out;
    for (std::size_t g = 0; g < ds.names.size(); ++g) {
        GeneratorInput in;
        in.name = ds.names[g];
        in.window = use_noisy ? ds.noisy[g] : ds.clean[g];
        in.window.steady_state = window_means(in.window);
        in.noise_var = ds.noise_var[g];
        in.base = priors[g].mean;
        in.prior = log_prior(priors[g].mean.model, priors[g].mean, priors[g].variance);
        out.push_back(std::move(in));
    }
    return out;
}

/// Simulates a scenario under `seed` and adds PMU noise at the scenario SNR.
inline LabeledDataset simulate_with_noise(SimScenario sc, std::uint64_t seed)
{
    sc.seed = seed;
    LabeledDataset ds = simulate(sc);
    add_pmu_noise(ds, sc.snr_db, noise_seed(seed));
    return ds;
}

} // namespace fosl
