#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "fosl/likelihood.hpp"
#include "fosl/spectra.hpp"

using namespace fosl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<std::complex<double>> naive_dft(const std::vector<double>& x)
{
    const std::size_t N = x.size();
    std::vector<std::complex<double>> X((N - 1) / 2 + 1);
    for (std::size_t w = 0; w < X.size(); ++w)
        for (std::size_t n = 0; n < N; ++n) X[w] += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(w * n) / double(N));
    return X;
}

std::filesystem::path scratch_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("fosl_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

PmuWindow ramp_window(std::size_t N, double fs)
{
    PmuWindow w;
    w.fs = fs;
    for (std::size_t k = 0; k < N; ++k) {
        const double t = static_cast<double>(k) / fs;
        w.t.push_back(t);
        w.ch[kV].push_back(1.0 + 0.01 * std::sin(1.3 * t));
        w.ch[kTheta].push_back(0.2 + 0.003 * std::cos(2.1 * t));
        w.ch[kI].push_back(0.8 - 0.02 * std::sin(0.7 * t + 0.4));
        w.ch[kPhi].push_back(-0.1 + 1e-3 * t);
    }
    w.steady_state = window_means(w);
    return w;
}

} // namespace

TEST_CASE("FFT-based DFT matches the defining sum")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t N : {3u, 17u, 101u, 2401u}) {
        std::vector<double> x(N);
        for (double& v : x) v = normal(rng);
        const auto fast = dft(x);
        const auto slow = naive_dft(x);
        REQUIRE(fast.size() == slow.size());
        double err = 0.0, scale = 0.0;
        for (std::size_t w = 0; w < fast.size(); ++w) {
            err = std::max(err, std::abs(fast[w] - slow[w]));
            scale = std::max(scale, std::abs(slow[w]));
        }
        CHECK(err < 1e-11 * scale);
    }
    CHECK_THROWS_AS(dft(std::vector<double>(10, 0.0)), Error);
}

TEST_CASE("frequency grid and band masks")
{
    const auto g = frequency_grid(1200, 20.0);
    REQUIRE(g.size() == 1201);
    CHECK(g[0] == 0.0);
    CHECK_THAT(g[1], WithinRel(2.0 * std::numbers::pi * 20.0 / 2401.0, 1e-15));
    CHECK_THAT(g.back(), WithinRel(2.0 * std::numbers::pi * 20.0 * 1200.0 / 2401.0, 1e-15));

    const double d = 2.0 * std::numbers::pi;
    const BandMask m = band_mask(g, d * 0.5, d * 0.05);
    for (std::size_t w : m.bins) CHECK(std::abs(g[w] - d * 0.5) <= d * 0.05 + 1e-12);
    std::size_t expected = 0;
    for (double w : g) expected += std::abs(w - d * 0.5) <= d * 0.05;
    CHECK(m.bins.size() == expected);
    CHECK_THROWS_AS(band_mask(g, d * 0.5, 0.0), EmptyBand);

    const BandMask other = band_mask(g, d * 0.53, d * 0.05);
    const auto all = masked_bins({m, other});
    CHECK(std::is_sorted(all.begin(), all.end()));
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("white noise spectra have the modelled variance")
{
    const int K = 8, N = 2 * K + 1;
    const double sigma2 = 0.3;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
    const int draws = 20000;
    double re2 = 0.0, im2 = 0.0, reim = 0.0;
    for (int d = 0; d < draws; ++d) {
        std::vector<double> x(N);
        for (double& v : x) v = normal(rng);
        const auto X = dft(x);
        re2 += X[3].real() * X[3].real();
        im2 += X[3].imag() * X[3].imag();
        reim += X[3].real() * X[3].imag();
    }
    const double s = noise_spectral_variance(sigma2, K);
    CHECK_THAT(re2 / draws, WithinRel(s, 0.05));
    CHECK_THAT(im2 / draws, WithinRel(s, 0.05));
    CHECK(std::abs(reim / draws) < 0.05 * s);
    CHECK(noise_spectral_variance(sigma2, K, kDftNoiseConstantLegacy) == 4.0 * s);
}

TEST_CASE("residual covariance blocks match Monte Carlo on one bin")
{
    const int K = 4, N = 2 * K + 1;
    const std::array<double, 4> sigma2{0.5, 0.7, 0.2, 0.1};
    Eigen::Matrix2cd Y;
    Y << std::complex<double>(0.8, -0.4), std::complex<double>(-0.3, 1.1), std::complex<double>(0.5, 0.2),
        std::complex<double>(0.9, -0.6);
    const Eigen::Matrix4d G = covariance_block(Y, spectral_noise(sigma2, K));
    REQUIRE(G.llt().info() == Eigen::Success);

    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int draws = 40000;
    Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
    for (int d = 0; d < draws; ++d) {
        std::array<std::complex<double>, 4> X;
        for (int c = 0; c < 4; ++c) {
            std::vector<double> x(N);
            for (double& v : x) v = std::sqrt(sigma2[c]) * normal(rng);
            X[c] = dft(x)[2];
        }
        const Eigen::Vector4d r = residual_bin(Y, X[kV], X[kTheta], X[kI], X[kPhi]);
        acc += r * r.transpose();
    }
    const Eigen::Matrix4d mc = acc / draws;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const double scale = std::sqrt(G(i, i) * G(j, j));
            CHECK(std::abs(mc(i, j) - G(i, j)) < 0.04 * scale);
        }
    }
}

TEST_CASE("residuals vanish for data generated by the model and respect injections")
{
    const int K = 5;
    SpectralDataset ds;
    ds.grid = frequency_grid(K, 20.0);
    Frf frf;
    frf.grid = ds.grid;
    for (auto& c : ds.X) c.assign(K + 1, {0.0, 0.0});
    for (int w = 0; w <= K; ++w) {
        Eigen::Matrix2cd Y;
        Y << std::complex<double>(1.0, w), std::complex<double>(0.2, -0.1), std::complex<double>(-0.4, 0.3),
            std::complex<double>(0.7, 0.1 * w);
        frf.Y.push_back(Y);
        const Eigen::Vector2cd u(std::complex<double>(0.1 * w, -0.2), std::complex<double>(0.05, 0.3));
        const Eigen::Vector2cd i = Y * u;
        ds.X[kV][w] = u(0);
        ds.X[kTheta][w] = u(1);
        ds.X[kI][w] = i(0);
        ds.X[kPhi][w] = i(1);
    }
    const std::vector<std::size_t> bins{1, 2, 3, 4, 5};
    const ResidualVector R = residuals(ds, frf, InjectionVariables::zeros({2, 4}), bins);
    CHECK(R.per_bin.cwiseAbs().maxCoeff() < 1e-14);

    InjectionVariables inj = InjectionVariables::zeros({3});
    inj.values.col(0) << 0.1, -0.2, 0.3, -0.4;
    const ResidualVector R2 = residuals(ds, frf, inj, bins);
    CHECK_THAT(R2.per_bin(1, 2), WithinAbs(0.2, 1e-14));  // bin 3 is column 2; residual is minus the injection
    CHECK(R2.per_bin.col(1).cwiseAbs().maxCoeff() < 1e-14);

    const Eigen::VectorXd st = R2.stacked();
    CHECK(st(1 * 5 + 2) == R2.per_bin(1, 2));

    Frf shorter = frf;
    shorter.grid.pop_back();
    CHECK_THROWS_AS(residuals(ds, shorter, InjectionVariables::zeros({}), bins), GridMismatch);

    const NoiseCovariance G = noise_covariance(frf, {1.0, 1.0, 1.0, 1.0}, K, bins);
    CHECK(neg_log_likelihood(R, G) < 1e-25);
    CHECK_THAT(neg_log_likelihood(R2, G), WithinRel(R2.per_bin.col(2).dot(G.blocks[2].inverse() * R2.per_bin.col(2)), 1e-12));
}

TEST_CASE("PMU CSV round trip and ingestion errors")
{
    const auto dir = scratch_dir("csv");
    const PmuWindow w = ramp_window(201, 20.0);
    write_pmu_csv((dir / "g.csv").string(), w);
    const PmuWindow r = read_pmu_csv((dir / "g.csv").string(), 20.0);
    REQUIRE(r.size() == w.size());
    for (int c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < w.size(); ++k) CHECK(r.ch[c][k] == w.ch[c][k]);
    for (int c = 0; c < 4; ++c) CHECK_THAT(r.steady_state[c], WithinRel(w.steady_state[c], 1e-14));

    CHECK_THROWS_AS(read_pmu_csv((dir / "missing.csv").string(), 20.0), IngestionError);
    CHECK_THROWS_AS(read_pmu_csv((dir / "g.csv").string(), 10.0), IngestionError);  // rate mismatch

    {
        std::ofstream f(dir / "bad_header.csv");
        f << "time,V,theta,I,phi\n0,1,0,1,0\n";
    }
    CHECK_THROWS_AS(read_pmu_csv((dir / "bad_header.csv").string(), 20.0), IngestionError);
    {
        std::ofstream f(dir / "even.csv");
        f << "t,V,theta,I,phi\n0,1,0,1,0\n0.05,1,0,1,0\n";
    }
    CHECK_THROWS_AS(read_pmu_csv((dir / "even.csv").string(), 20.0), IngestionError);
    {
        std::ofstream f(dir / "nan.csv");
        f << "t,V,theta,I,phi\n0,1,0,1,0\n0.05,nan,0,1,0\n0.1,1,0,1,0\n";
    }
    CHECK_THROWS_AS(read_pmu_csv((dir / "nan.csv").string(), 20.0), IngestionError);
    std::filesystem::remove_all(dir);
}
