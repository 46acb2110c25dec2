#pragma once

// PMU windows, deviation signals, single-sided DFT spectra on the
// (2K+1)-point grid, FO band masks and DFT-domain noise variances.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <fftw3.h>

#include "fosl/errors.hpp"

namespace fosl {

enum Channel : int { kV = 0, kTheta = 1, kI = 2, kPhi = 3 };

struct PmuWindow {
    double fs = 20.0;
    std::vector<double> t;
    std::array<std::vector<double>, 4> ch;  // V, theta, I, phi
    std::array<double, 4> steady_state{};

    std::size_t size() const { return t.size(); }

    void validate() const
    {
        if (!(fs > 0.0)) throw IngestionError("sample rate must be positive");
        const std::size_t n = t.size();
        for (const auto& c : ch) {
            if (c.size() != n) throw IngestionError("channel length mismatch");
        }
        if (n < 3 || n % 2 == 0) throw IngestionError("PMU window needs an odd sample count 2K+1 >= 3");
    }
};

/// Per-channel mean over the window (used when no ground truth is supplied).
inline std::array<double, 4> window_means(const PmuWindow& w)
{
    std::array<double, 4> m{};
    for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (double v : w.ch[c]) acc += v;
        m[c] = w.ch[c].empty() ? 0.0 : acc / static_cast<double>(w.ch[c].size());
    }
    return m;
}

/// Sample minus the steady-state value, channel by channel.
inline std::array<std::vector<double>, 4> deviations(const PmuWindow& w)
{
    std::array<std::vector<double>, 4> out;
    for (int c = 0; c < 4; ++c) {
        out[c].resize(w.ch[c].size());
        std::transform(w.ch[c].begin(), w.ch[c].end(), out[c].begin(),
                       [s = w.steady_state[c]](double v) { return v - s; });
    }
    return out;
}

namespace detail {
inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}
} // namespace detail

/// Single-sided DFT X[w] = sum_n x[n] e^{-j 2 pi w n / (2K+1)}, w = 0..K.
inline std::vector<std::complex<double>> dft(const std::vector<double>& x)
{
    const int N = static_cast<int>(x.size());
    if (N % 2 == 0) throw Error("dft expects an odd-length input");
    const int K = (N - 1) / 2;
    std::vector<double> in(x);
    std::vector<std::complex<double>> out(static_cast<std::size_t>(K) + 1);
    fftw_plan plan;
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(N, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                    FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    return out;
}

/// Omega_w = 2 pi [0, fs/(2K+1), ..., K fs/(2K+1)] in rad/s.
inline std::vector<double> frequency_grid(int K, double fs)
{
    if (K < 1 || !(fs > 0.0)) throw Error("frequency_grid needs K >= 1 and fs > 0");
    std::vector<double> g(static_cast<std::size_t>(K) + 1);
    const double N = 2.0 * K + 1.0;
    for (int w = 0; w <= K; ++w) g[w] = 2.0 * std::numbers::pi * (w * fs / N);
    return g;
}

struct BandMask {
    double omega_d = 0.0;
    double omega_r = 0.0;
    std::vector<std::size_t> bins;
};

/// Grid bins with Omega in [omega_d - omega_r, omega_d + omega_r].
inline BandMask band_mask(const std::vector<double>& grid, double omega_d, double omega_r)
{
    if (grid.empty() || !(omega_d > 0.0) || omega_d > grid.back() * (1.0 + 1e-12)) {
        throw EmptyBand("forcing frequency outside (0, max grid]");
    }
    BandMask m{omega_d, omega_r, {}};
    const double lo = omega_d - omega_r;
    const double hi = omega_d + omega_r;
    const double slack = 1e-12 * std::max(1.0, grid.back());
    for (std::size_t w = 0; w < grid.size(); ++w) {
        if (grid[w] >= lo - slack && grid[w] <= hi + slack) m.bins.push_back(w);
    }
    if (m.bins.empty()) throw EmptyBand("no grid bin inside the FO band");
    return m;
}

/// Sorted union of the bins of several masks.
inline std::vector<std::size_t> masked_bins(const std::vector<BandMask>& masks)
{
    std::vector<std::size_t> all;
    for (const auto& m : masks) all.insert(all.end(), m.bins.begin(), m.bins.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
}

/// Variance scale of the real and imaginary DFT noise components relative to
/// (2K+1) E[eps^2]. The Monte-Carlo-consistent value is 1/2.
inline constexpr double kDftNoiseConstant = 0.5;
/// The constant 4/2 printed in the original derivation; kept as an opt-in mode.
inline constexpr double kDftNoiseConstantLegacy = 2.0;

inline double noise_spectral_variance(double sigma2, int K, double constant = kDftNoiseConstant)
{
    if (sigma2 < 0.0) throw Error("noise variance must be nonnegative");
    return constant * (2.0 * K + 1.0) * sigma2;
}

struct SpectralDataset {
    std::vector<double> grid;
    std::array<std::vector<std::complex<double>>, 4> X;  // V~, theta~, I~, phi~
    std::array<double, 4> noise_var{};                     // time-domain E[eps_X^2]

    int K() const { return static_cast<int>(grid.size()) - 1; }
    const std::vector<std::complex<double>>& Vt() const { return X[kV]; }
    const std::vector<std::complex<double>>& tht() const { return X[kTheta]; }
    const std::vector<std::complex<double>>& It() const { return X[kI]; }
    const std::vector<std::complex<double>>& pht() const { return X[kPhi]; }
};

inline SpectralDataset spectral_dataset(const PmuWindow& w, const std::array<double, 4>& noise_var)
{
    w.validate();
    SpectralDataset ds;
    const int K = static_cast<int>(w.size() - 1) / 2;
    ds.grid = frequency_grid(K, w.fs);
    const auto dev = deviations(w);
    for (int c = 0; c < 4; ++c) ds.X[c] = dft(dev[c]);
    ds.noise_var = noise_var;
    return ds;
}

// --- CSV ingestion: header t,V,theta,I,phi ---

inline PmuWindow read_pmu_csv(const std::string& path, double fs)
{
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open PMU file " + path);
    std::string line;
    if (!std::getline(in, line)) throw IngestionError("empty PMU file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,V,theta,I,phi") throw IngestionError("unexpected PMU header in " + path + ": " + line);
    PmuWindow w;
    w.fs = fs;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        std::array<double, 5> v{};
        std::stringstream ss(line);
        std::string cell;
        for (int k = 0; k < 5; ++k) {
            if (!std::getline(ss, cell, ',')) {
                throw IngestionError(path + ": missing field on row " + std::to_string(row));
            }
            try {
                std::size_t used = 0;
                v[k] = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw IngestionError(path + ": bad number on row " + std::to_string(row));
            }
            if (!std::isfinite(v[k])) throw IngestionError(path + ": non-finite sample on row " + std::to_string(row));
        }
        w.t.push_back(v[0]);
        for (int c = 0; c < 4; ++c) w.ch[c].push_back(v[c + 1]);
    }
    const double dt = 1.0 / fs;
    for (std::size_t i = 1; i < w.t.size(); ++i) {
        if (std::abs((w.t[i] - w.t[i - 1]) - dt) > 1e-6 * std::max(1.0, dt) + 1e-9) {
            throw IngestionError(path + ": sample gap or rate mismatch near t=" + std::to_string(w.t[i]));
        }
    }
    w.validate();
    w.steady_state = window_means(w);
    return w;
}

inline void write_pmu_csv(const std::string& path, const PmuWindow& w)
{
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "t,V,theta,I,phi\n");
    for (std::size_t i = 0; i < w.size(); ++i) {
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g\n", w.t[i], w.ch[0][i], w.ch[1][i], w.ch[2][i], w.ch[3][i]);
    }
    std::fclose(f);
}

} // namespace fosl
