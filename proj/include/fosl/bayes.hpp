#pragma once

// Priors, the per-generator residual model and MAP problem assembly.
//
// Generator parameters are estimated in log space (all of them are
// intrinsically positive). A natural-units prior (mean m, variance v) maps to
// a log-space prior (log m, v / m^2) by the delta method.

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fosl/dual.hpp"
#include "fosl/dynamics.hpp"
#include "fosl/errors.hpp"
#include "fosl/likelihood.hpp"
#include "fosl/spectra.hpp"

namespace fosl {

struct GaussianPrior {
    Eigen::VectorXd mean;
    Eigen::VectorXd var;  // diagonal of Gamma_g

    Eigen::Index size() const { return mean.size(); }
};

/// (theta - mean)^T Gamma^{-1} (theta - mean) for a diagonal covariance.
inline double prior_cost_gaussian(const Eigen::VectorXd& theta, const GaussianPrior& prior)
{
    if (theta.size() != prior.mean.size() || prior.var.size() != prior.mean.size()) {
        throw Error("prior dimension mismatch");
    }
    return ((theta - prior.mean).array().square() / prior.var.array()).sum();
}

struct LaplacePrior {
    double lambda = 0.0;
};

/// lambda * ||theta_I||_1
inline double prior_cost_laplace(const Eigen::VectorXd& theta_I, double lambda)
{
    if (lambda < 0.0) throw Error("lambda must be nonnegative");
    return lambda * theta_I.lpNorm<1>();
}

/// Residual blocks r_b(theta) (injection-free), their parameter Jacobians and
/// the noise covariance blocks evaluated at theta.
struct ModelEvaluation {
    std::vector<Eigen::Vector4d> r;
    std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>> J;
    std::vector<Eigen::Matrix4d> cov;
};

/// A per-bin residual model the MAP solver can minimize.
class ResidualModel {
public:
    virtual ~ResidualModel() = default;
    virtual int param_count() const = 0;
    virtual std::size_t bin_count() const = 0;
    virtual ModelEvaluation evaluate(const Eigen::VectorXd& theta, bool with_jacobian) const = 0;
    /// sum_b sum_c (d^2 r_bc / dtheta_k dtheta_l) v_bc
    virtual Eigen::MatrixXd curvature(const Eigen::VectorXd& theta, const std::vector<Eigen::Vector4d>& v) const = 0;
};

/// r_b = d_b - A_b theta with fixed covariance blocks. Used for synthetic
/// problems with closed-form answers.
class AffineResidualModel final : public ResidualModel {
public:
    AffineResidualModel(std::vector<Eigen::Vector4d> data, std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>> A,
                        std::vector<Eigen::Matrix4d> cov, int params)
        : data_(std::move(data)), A_(std::move(A)), cov_(std::move(cov)), params_(params)
    {
    }

    int param_count() const override { return params_; }
    std::size_t bin_count() const override { return data_.size(); }

    ModelEvaluation evaluate(const Eigen::VectorXd& theta, bool with_jacobian) const override
    {
        ModelEvaluation e;
        e.cov = cov_;
        e.r.reserve(data_.size());
        for (std::size_t b = 0; b < data_.size(); ++b) {
            Eigen::Vector4d r = data_[b];
            if (params_ > 0) r -= A_[b] * theta;
            e.r.push_back(r);
            if (with_jacobian) e.J.emplace_back(-A_[b]);
        }
        return e;
    }

    Eigen::MatrixXd curvature(const Eigen::VectorXd&, const std::vector<Eigen::Vector4d>&) const override
    {
        return Eigen::MatrixXd::Zero(params_, params_);
    }

private:
    std::vector<Eigen::Vector4d> data_;
    std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>> A_;
    std::vector<Eigen::Matrix4d> cov_;
    int params_;
};

/// Residuals of one generator's FRF relation over a set of grid bins, as a
/// function of the log-space free parameters.
class GeneratorResidualModel final : public ResidualModel {
public:
    GeneratorResidualModel(std::shared_ptr<const SpectralDataset> data, OperatingPoint op, GeneratorParams base,
                           std::vector<std::size_t> bins, double dft_constant = kDftNoiseConstant)
        : data_(std::move(data)),
          op_(op),
          base_(base),
          free_(free_params(base.model)),
          bins_(std::move(bins)),
          noise_(spectral_noise(data_->noise_var, data_->K(), dft_constant))
    {
        for (std::size_t w : bins_) {
            if (w >= data_->grid.size()) throw GridMismatch("bin outside the spectral grid");
        }
    }

    int param_count() const override { return static_cast<int>(free_.size()); }
    std::size_t bin_count() const override { return bins_.size(); }
    const std::vector<std::size_t>& bins() const { return bins_; }
    const std::vector<Param>& free() const { return free_; }
    const SpectralDataset& data() const { return *data_; }
    const OperatingPoint& operating_point() const { return op_; }

    Eigen::VectorXd theta_from_params(const GeneratorParams& p) const
    {
        Eigen::VectorXd t(free_.size());
        for (std::size_t k = 0; k < free_.size(); ++k) t(k) = std::log(p[free_[k]]);
        return t;
    }

    template <class S>
    MachineParams<S> params_from_theta(const std::vector<S>& theta) const
    {
        MachineParams<S> p = lift<S>(base_);
        for (std::size_t k = 0; k < free_.size(); ++k) p[free_[k]] = exp(theta[k]);
        return p;
    }

    GeneratorParams params_from_theta(const Eigen::VectorXd& theta) const
    {
        return params_from_theta(std::vector<double>(theta.data(), theta.data() + theta.size()));
    }

    /// Y on the model's bins for any scalar type.
    template <class S>
    std::vector<std::array<Cx<S>, 4>> frf_bins(const std::vector<S>& theta) const
    {
        const MachineParams<S> p = params_from_theta(theta);
        const EquilibriumT<S> eq = equilibrium_from_terminal(p, op_);
        const LinearModelT<S> lm = linearize(p, eq);
        std::vector<std::array<Cx<S>, 4>> out;
        out.reserve(bins_.size());
        for (std::size_t w : bins_) out.push_back(frf_bin(lm, data_->grid[w]));
        return out;
    }

    /// FRF tabulated on the full grid (bin 0 included) at theta.
    Frf frf_full(const Eigen::VectorXd& theta) const
    {
        const GeneratorParams p = params_from_theta(theta);
        const EquilibriumPoint eq = equilibrium_from_terminal(p, op_);
        return frf(linearize(p, eq), data_->grid);
    }

    ModelEvaluation evaluate(const Eigen::VectorXd& theta, bool with_jacobian) const override
    {
        const std::size_t m = free_.size();
        const std::size_t nb = bins_.size();
        ModelEvaluation e;
        e.r.resize(nb);
        e.cov.resize(nb);
        std::vector<Eigen::Matrix2cd> Y(nb);
        if (!with_jacobian || m == 0) {
            auto ys = frf_bins(std::vector<double>(theta.data(), theta.data() + m));
            for (std::size_t b = 0; b < nb; ++b) Y[b] = to_matrix(ys[b], [](double v) { return v; });
        } else {
            e.J.assign(nb, Eigen::Matrix<double, 4, Eigen::Dynamic>::Zero(4, static_cast<Eigen::Index>(m)));
            for (std::size_t k = 0; k < m; ++k) {
                std::vector<Dual<double>> td(m);
                for (std::size_t i = 0; i < m; ++i) td[i] = Dual<double>(theta(i), i == k ? 1.0 : 0.0);
                auto ys = frf_bins(td);
                for (std::size_t b = 0; b < nb; ++b) {
                    if (k == 0) Y[b] = to_matrix(ys[b], [](const Dual<double>& v) { return v.v; });
                    const Eigen::Matrix2cd dY = to_matrix(ys[b], [](const Dual<double>& v) { return v.d; });
                    e.J[b].col(static_cast<Eigen::Index>(k)) = data_jacobian(dY, bins_[b]);
                }
            }
        }
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t w = bins_[b];
            e.r[b] = residual_bin(Y[b], data_->X[kV][w], data_->X[kTheta][w], data_->X[kI][w], data_->X[kPhi][w]);
            e.cov[b] = covariance_block(Y[b], noise_);
        }
        return e;
    }

    Eigen::MatrixXd curvature(const Eigen::VectorXd& theta, const std::vector<Eigen::Vector4d>& v) const override
    {
        using DD = Dual<Dual<double>>;
        const std::size_t m = free_.size();
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t l = k; l < m; ++l) {
                std::vector<DD> td(m);
                for (std::size_t i = 0; i < m; ++i) {
                    td[i] = DD(Dual<double>(theta(i), i == l ? 1.0 : 0.0), Dual<double>(i == k ? 1.0 : 0.0, 0.0));
                }
                auto ys = frf_bins(td);
                double acc = 0.0;
                for (std::size_t b = 0; b < bins_.size(); ++b) {
                    const Eigen::Matrix2cd d2Y = to_matrix(ys[b], [](const DD& x) { return x.d.d; });
                    acc += data_jacobian(d2Y, bins_[b]).dot(v[b]);
                }
                H(k, l) = acc;
                H(l, k) = acc;
            }
        }
        return H;
    }

private:
    template <class S, class F>
    static Eigen::Matrix2cd to_matrix(const std::array<Cx<S>, 4>& y, F&& get)
    {
        Eigen::Matrix2cd Y;
        for (int i = 0; i < 4; ++i) Y(i / 2, i % 2) = {get(y[i].re), get(y[i].im)};
        return Y;
    }

    /// d r / d(param) given the matching derivative of Y.
    Eigen::Vector4d data_jacobian(const Eigen::Matrix2cd& dY, std::size_t w) const
    {
        return residual_bin(dY, data_->X[kV][w], data_->X[kTheta][w], {0.0, 0.0}, {0.0, 0.0});
    }

    std::shared_ptr<const SpectralDataset> data_;
    OperatingPoint op_;
    GeneratorParams base_;
    std::vector<Param> free_;
    std::vector<std::size_t> bins_;
    SpectralNoise noise_;
};

enum class Stage { stage1, stage2 };

/// One generator's MAP problem. Decision vector layout:
///   stage 1: [theta_g]
///   stage 2: [theta_g ; theta_I ; s] with theta_I and s stored bin-major,
///            four entries [I_Ir, I_Ii, I_phr, I_phi] per injection bin.
struct MapProblem {
    int generator = 0;
    Stage stage = Stage::stage1;
    std::shared_ptr<const ResidualModel> model;
    GaussianPrior prior;
    std::vector<std::size_t> injection_slots;  // positions within the model's bins
    std::vector<std::size_t> injection_bins;   // matching grid bin indices
    double lambda = 0.0;

    Eigen::Index m() const { return model->param_count(); }
    Eigen::Index n_inj() const { return static_cast<Eigen::Index>(4 * injection_slots.size()); }
    Eigen::Index dim() const { return stage == Stage::stage1 ? m() : m() + 2 * n_inj(); }
};

/// Log-space prior from natural-unit means and variances of the free parameters.
inline GaussianPrior log_prior(ModelOrder model, const GeneratorParams& means, const GeneratorParams& variances)
{
    const auto fp = free_params(model);
    GaussianPrior g;
    g.mean.resize(static_cast<Eigen::Index>(fp.size()));
    g.var.resize(static_cast<Eigen::Index>(fp.size()));
    for (std::size_t k = 0; k < fp.size(); ++k) {
        const double mu = means[fp[k]];
        const double v = variances[fp[k]];
        if (!(mu > 0.0)) throw ConfigError("prior mean of " + std::string(param_name(fp[k])) + " must be positive");
        if (!(v > 0.0)) throw ConfigError("prior variance of " + std::string(param_name(fp[k])) + " must be positive");
        g.mean(k) = std::log(mu);
        g.var(k) = v / (mu * mu);
    }
    return g;
}

/// Non-DC grid bins for a spectral dataset.
inline std::vector<std::size_t> nondc_bins(const SpectralDataset& ds)
{
    std::vector<std::size_t> b;
    for (std::size_t w = 1; w < ds.grid.size(); ++w) b.push_back(w);
    return b;
}

/// Builds one generator's problem. Stage 1 drops the masked bins and has no
/// injections; stage 2 keeps every non-DC bin and places injections on the
/// masked ones.
inline MapProblem assemble(int generator, Stage stage, std::shared_ptr<const SpectralDataset> data,
                           const OperatingPoint& op, const GeneratorParams& base, GaussianPrior prior, double lambda,
                           const std::vector<BandMask>& masks, double dft_constant = kDftNoiseConstant)
{
    if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
    const auto masked = masked_bins(masks);
    std::vector<std::size_t> bins;
    for (std::size_t w : nondc_bins(*data)) {
        const bool in_band = std::binary_search(masked.begin(), masked.end(), w);
        if (stage == Stage::stage2 || !in_band) bins.push_back(w);
    }
    MapProblem p;
    p.generator = generator;
    p.stage = stage;
    p.prior = std::move(prior);
    p.lambda = lambda;
    if (stage == Stage::stage2) {
        for (std::size_t k = 0; k < bins.size(); ++k) {
            if (std::binary_search(masked.begin(), masked.end(), bins[k])) {
                p.injection_slots.push_back(k);
                p.injection_bins.push_back(bins[k]);
            }
        }
    }
    auto model = std::make_shared<GeneratorResidualModel>(std::move(data), op, base, std::move(bins), dft_constant);
    if (p.prior.size() != model->param_count()) throw ConfigError("prior size does not match the free parameters");
    p.model = std::move(model);
    return p;
}

/// lambda0 * median(diag Gamma_L)^{-1/2}
inline double default_lambda(double lambda0, const std::vector<Eigen::Matrix4d>& cov)
{
    std::vector<double> d;
    d.reserve(4 * cov.size());
    for (const auto& B : cov)
        for (int i = 0; i < 4; ++i) d.push_back(B(i, i));
    if (d.empty()) return lambda0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return lambda0 / std::sqrt(*mid);
}

/// Gaussian posterior from a stage-1 optimum. `H` is the Hessian of the
/// negative log posterior, so the new variances are diag(H^{-1}).
inline GaussianPrior posterior_update(const Eigen::VectorXd& theta_map, const Eigen::MatrixXd& H)
{
    if (H.rows() != theta_map.size() || H.cols() != theta_map.size()) throw Error("Hessian size mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (H + H.transpose()));
    if (llt.info() != Eigen::Success) throw IndefiniteHessian("stage-1 Hessian is not positive definite");
    const Eigen::MatrixXd Hinv = llt.solve(Eigen::MatrixXd::Identity(H.rows(), H.cols()));
    GaussianPrior g;
    g.mean = theta_map;
    g.var = Hinv.diagonal();
    return g;
}

} // namespace fosl
