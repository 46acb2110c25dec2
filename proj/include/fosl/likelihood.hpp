#pragma once

// Residual vector R = [M_r; M_i; P_r; P_i], the noise covariance Gamma_L and
// the quadratic form R^T Gamma_L^{-1} R. Everything is stored per bin: the
// covariance has no cross-bin terms, so each bin is a 4x4 block.

#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fosl/dynamics.hpp"
#include "fosl/errors.hpp"
#include "fosl/spectra.hpp"

namespace fosl {

using Matrix4Xd = Eigen::Matrix<double, 4, Eigen::Dynamic>;

/// Injection values [I_Ir, I_Ii, I_phr, I_phi] on the masked bins.
struct InjectionVariables {
    std::vector<std::size_t> bins;
    Matrix4Xd values;

    static InjectionVariables zeros(std::vector<std::size_t> bins)
    {
        InjectionVariables inj;
        inj.values = Matrix4Xd::Zero(4, static_cast<Eigen::Index>(bins.size()));
        inj.bins = std::move(bins);
        return inj;
    }
    std::size_t size() const { return 4 * bins.size(); }
};

struct ResidualVector {
    std::vector<std::size_t> bins;
    Matrix4Xd per_bin;  // rows M_r, M_i, P_r, P_i

    /// Block-ordered stacking [M_r^T M_i^T P_r^T P_i^T]^T.
    Eigen::VectorXd stacked() const
    {
        const auto b = per_bin.cols();
        Eigen::VectorXd out(4 * b);
        for (int r = 0; r < 4; ++r) out.segment(r * b, b) = per_bin.row(r).transpose();
        return out;
    }
};

/// Residual of one bin for complex spectra and injection (I_I, I_phi).
inline Eigen::Vector4d residual_bin(const Eigen::Matrix2cd& Y, std::complex<double> V, std::complex<double> th,
                                    std::complex<double> I, std::complex<double> ph,
                                    const Eigen::Vector4d& inj = Eigen::Vector4d::Zero())
{
    const double y11r = Y(0, 0).real(), y11i = Y(0, 0).imag();
    const double y12r = Y(0, 1).real(), y12i = Y(0, 1).imag();
    const double y21r = Y(1, 0).real(), y21i = Y(1, 0).imag();
    const double y22r = Y(1, 1).real(), y22i = Y(1, 1).imag();
    Eigen::Vector4d r;
    r(0) = I.real() - y11r * V.real() + y11i * V.imag() - y12r * th.real() + y12i * th.imag() - inj(0);
    r(1) = I.imag() - y11i * V.real() - y11r * V.imag() - y12i * th.real() - y12r * th.imag() - inj(1);
    r(2) = ph.real() - y21r * V.real() + y21i * V.imag() - y22r * th.real() + y22i * th.imag() - inj(2);
    r(3) = ph.imag() - y21i * V.real() - y21r * V.imag() - y22i * th.real() - y22r * th.imag() - inj(3);
    return r;
}

inline void check_grid(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) throw GridMismatch("FRF and spectra grids differ in length");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > 1e-9 * std::max(1.0, std::abs(a[i]))) {
            throw GridMismatch("FRF and spectra grids differ at bin " + std::to_string(i));
        }
    }
}

/// Residuals on `included_bins`; injections count only on their own bins.
inline ResidualVector residuals(const SpectralDataset& ds, const Frf& frf, const InjectionVariables& inj,
                                const std::vector<std::size_t>& included_bins)
{
    check_grid(frf.grid, ds.grid);
    ResidualVector R;
    R.bins = included_bins;
    R.per_bin.resize(4, static_cast<Eigen::Index>(included_bins.size()));
    std::size_t j = 0;
    for (std::size_t k = 0; k < included_bins.size(); ++k) {
        const std::size_t w = included_bins[k];
        Eigen::Vector4d iv = Eigen::Vector4d::Zero();
        // injection bins are sorted; advance a cursor
        while (j < inj.bins.size() && inj.bins[j] < w) ++j;
        if (j < inj.bins.size() && inj.bins[j] == w) iv = inj.values.col(static_cast<Eigen::Index>(j));
        R.per_bin.col(static_cast<Eigen::Index>(k)) =
            residual_bin(frf.Y[w], ds.X[kV][w], ds.X[kTheta][w], ds.X[kI][w], ds.X[kPhi][w], iv);
    }
    return R;
}

/// DFT-domain per-component noise variances for channels V, theta, I, phi.
struct SpectralNoise {
    std::array<double, 4> s{};
};

inline SpectralNoise spectral_noise(const std::array<double, 4>& noise_var, int K,
                                    double constant = kDftNoiseConstant)
{
    SpectralNoise sn;
    for (int c = 0; c < 4; ++c) sn.s[c] = noise_spectral_variance(noise_var[c], K, constant);
    return sn;
}

/// E[L L^T] restricted to one bin, ordering [N_r, N_i, Q_r, Q_i].
/// N_r N_i and Q_r Q_i are exactly zero.
inline Eigen::Matrix4d covariance_block(const Eigen::Matrix2cd& Y, const SpectralNoise& sn)
{
    const double sV = sn.s[kV], sT = sn.s[kTheta], sI = sn.s[kI], sP = sn.s[kPhi];
    const std::complex<double> y11 = Y(0, 0), y12 = Y(0, 1), y21 = Y(1, 0), y22 = Y(1, 1);
    const double varN = sI + std::norm(y11) * sV + std::norm(y12) * sT;
    const double varQ = sP + std::norm(y21) * sV + std::norm(y22) * sT;
    const double re = (y11 * std::conj(y21)).real() * sV + (y12 * std::conj(y22)).real() * sT;
    const double im = (y21 * std::conj(y11)).imag() * sV + (y22 * std::conj(y12)).imag() * sT;
    Eigen::Matrix4d G;
    G << varN, 0.0, re, im,
         0.0, varN, -im, re,
         re, -im, varQ, 0.0,
         im, re, 0.0, varQ;
    return G;
}

struct NoiseCovariance {
    std::vector<std::size_t> bins;
    std::vector<Eigen::Matrix4d> blocks;

    /// Full matrix in the block ordering of ResidualVector::stacked().
    Eigen::MatrixXd dense() const
    {
        const auto b = static_cast<Eigen::Index>(blocks.size());
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(4 * b, 4 * b);
        for (Eigen::Index k = 0; k < b; ++k) {
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) G(r * b + k, c * b + k) = blocks[k](r, c);
        }
        return G;
    }

    double log_det() const
    {
        double acc = 0.0;
        for (const auto& B : blocks) {
            Eigen::LLT<Eigen::Matrix4d> llt(B);
            if (llt.info() != Eigen::Success) throw NotPositiveDefinite("covariance block not positive definite");
            acc += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        }
        return acc;
    }
};

inline NoiseCovariance noise_covariance(const Frf& frf, const std::array<double, 4>& noise_var, int K,
                                        const std::vector<std::size_t>& included_bins,
                                        double constant = kDftNoiseConstant)
{
    const SpectralNoise sn = spectral_noise(noise_var, K, constant);
    NoiseCovariance G;
    G.bins = included_bins;
    G.blocks.reserve(included_bins.size());
    for (std::size_t w : included_bins) G.blocks.push_back(covariance_block(frf.Y.at(w), sn));
    return G;
}

/// R^T Gamma^{-1} R with the normalization constant dropped.
inline double neg_log_likelihood(const ResidualVector& R, const NoiseCovariance& G)
{
    if (R.bins.size() != G.blocks.size()) throw GridMismatch("residual and covariance bin sets differ");
    double acc = 0.0;
    for (std::size_t k = 0; k < G.blocks.size(); ++k) {
        Eigen::LLT<Eigen::Matrix4d> llt(G.blocks[k]);
        if (llt.info() != Eigen::Success) throw NotPositiveDefinite("covariance block not positive definite");
        const Eigen::Vector4d r = R.per_bin.col(static_cast<Eigen::Index>(k));
        acc += r.dot(llt.solve(r));
    }
    return acc;
}

/// Debug dump of the per-bin covariance blocks (one row per bin, 16 entries).
inline void write_covariance_csv(const std::string& path, const NoiseCovariance& G, const std::vector<double>& grid)
{
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "bin,omega");
    const char* names[4] = {"Nr", "Ni", "Qr", "Qi"};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) std::fprintf(f, ",%s_%s", names[r], names[c]);
    std::fprintf(f, "\n");
    for (std::size_t k = 0; k < G.blocks.size(); ++k) {
        std::fprintf(f, "%zu,%.17g", G.bins[k], grid.at(G.bins[k]));
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) std::fprintf(f, ",%.17g", G.blocks[k](r, c));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

} // namespace fosl
