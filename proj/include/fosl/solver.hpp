#pragma once

// MAP minimization with the frozen-covariance iteration: at every step the
// noise covariance is evaluated at the current parameters and held constant
// while one damped (Gauss-)Newton step is taken on the resulting objective.
// Stage 2 handles the slack box -s <= theta_I <= s with a primal log-barrier.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "fosl/bayes.hpp"
#include "fosl/errors.hpp"

namespace fosl {

struct SolverSettings {
    int max_iterations = 200;        // stage 1 outer iterations
    double step_tol = 1e-8;
    double grad_tol = 1e-6;
    bool full_newton = false;        // keep the d2R term of the Hessian
    int refresh_every = 1;           // covariance refresh cadence (iterations)
    double barrier_init = 1.0;
    double barrier_factor = 0.2;
    double barrier_final = 1e-8;     // stop once the duality measure drops below
    double fraction_to_boundary = 0.995;
    int max_newton_per_barrier = 100;
    double max_log_step = 1.0;       // cap on the parameter step (log units)
};

/// Inverse covariance blocks held constant for one step.
struct FrozenCovariance {
    std::vector<Eigen::Matrix4d> G;
    std::vector<Eigen::Matrix4d> W;
};

inline FrozenCovariance freeze(std::vector<Eigen::Matrix4d> cov)
{
    FrozenCovariance fc;
    fc.W.reserve(cov.size());
    for (const auto& B : cov) {
        Eigen::LLT<Eigen::Matrix4d> llt(B);
        if (llt.info() != Eigen::Success) throw NotPositiveDefinite("covariance block not positive definite");
        fc.W.push_back(llt.solve(Eigen::Matrix4d::Identity()));
    }
    fc.G = std::move(cov);
    return fc;
}

/// Covariance evaluated at the parameter part of x.
inline FrozenCovariance freeze_at(const MapProblem& p, const Eigen::VectorXd& x)
{
    return freeze(p.model->evaluate(x.head(p.m()), false).cov);
}

struct MapSolution {
    Eigen::VectorXd theta;        // parameter part (log space)
    Eigen::VectorXd x;            // full decision vector
    double objective = 0.0;
    Eigen::MatrixXd H;            // Hessian of the objective (GN or full) at the solution
    int iterations = 0;
    bool converged = false;
    std::string status;
    double grad_norm = 0.0;
    std::vector<std::size_t> injection_bins;
    Matrix4Xd injections;         // stage 2: one column per injection bin
    Matrix4Xd slack;
};

namespace detail {

/// Injection vector for each model bin (zero where none is defined).
inline std::vector<int> slot_index(const MapProblem& p)
{
    std::vector<int> idx(p.model->bin_count(), -1);
    for (std::size_t j = 0; j < p.injection_slots.size(); ++j) idx[p.injection_slots[j]] = static_cast<int>(j);
    return idx;
}

inline Eigen::Vector4d injection_of(const MapProblem& p, const Eigen::VectorXd& x, int j)
{
    if (j < 0 || p.stage == Stage::stage1) return Eigen::Vector4d::Zero();
    return x.segment<4>(p.m() + 4 * j);
}

struct LocalModel {
    double f = 0.0;
    Eigen::VectorXd grad;
    std::vector<Eigen::Vector4d> r;  // residuals with injections removed
    ModelEvaluation eval;
};

inline LocalModel local_model(const MapProblem& p, const Eigen::VectorXd& x, const FrozenCovariance& fc,
                              bool with_jacobian, ModelEvaluation eval)
{
    const Eigen::Index m = p.m();
    const auto idx = slot_index(p);
    LocalModel lm;
    lm.grad = Eigen::VectorXd::Zero(p.dim());
    const Eigen::VectorXd theta = x.head(m);
    lm.r.resize(eval.r.size());
    for (std::size_t b = 0; b < eval.r.size(); ++b) {
        const Eigen::Vector4d r = eval.r[b] - injection_of(p, x, idx[b]);
        lm.r[b] = r;
        const Eigen::Vector4d Wr = fc.W[b] * r;
        lm.f += r.dot(Wr);
        if (with_jacobian) {
            if (m > 0) lm.grad.head(m) += 2.0 * eval.J[b].transpose() * Wr;
            if (idx[b] >= 0 && p.stage == Stage::stage2) lm.grad.segment<4>(m + 4 * idx[b]) -= 2.0 * Wr;
        }
    }
    if (m > 0) {
        const Eigen::VectorXd dp = theta - p.prior.mean;
        lm.f += (dp.array().square() / p.prior.var.array()).sum();
        if (with_jacobian) lm.grad.head(m) += 2.0 * (dp.array() / p.prior.var.array()).matrix();
    }
    if (p.stage == Stage::stage2) {
        lm.f += p.lambda * x.tail(p.n_inj()).sum();
        if (with_jacobian) lm.grad.tail(p.n_inj()).setConstant(p.lambda);
    }
    lm.eval = std::move(eval);
    return lm;
}

inline double objective_value(const MapProblem& p, const Eigen::VectorXd& x, const FrozenCovariance& fc)
{
    return local_model(p, x, fc, false, p.model->evaluate(x.head(p.m()), false)).f;
}

/// Parameter block of the Hessian: 2 sum J^T W J + 2 Gamma_g^{-1} (+ curvature).
inline Eigen::MatrixXd theta_hessian(const MapProblem& p, const Eigen::VectorXd& x, const LocalModel& lm,
                                     const FrozenCovariance& fc, bool full)
{
    const Eigen::Index m = p.m();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    if (m == 0) return H;
    for (std::size_t b = 0; b < lm.r.size(); ++b) H += 2.0 * lm.eval.J[b].transpose() * fc.W[b] * lm.eval.J[b];
    H.diagonal() += (2.0 / p.prior.var.array()).matrix();
    if (full) {
        std::vector<Eigen::Vector4d> v(lm.r.size());
        for (std::size_t b = 0; b < lm.r.size(); ++b) v[b] = fc.W[b] * lm.r[b];
        H += 2.0 * p.model->curvature(x.head(m), v);
    }
    return 0.5 * (H + H.transpose());
}

} // namespace detail

/// Objective value and gradient with the covariance frozen at `fc`.
inline std::pair<double, Eigen::VectorXd> objective_gradient(const MapProblem& p, const Eigen::VectorXd& x,
                                                             const FrozenCovariance& fc)
{
    auto lm = detail::local_model(p, x, fc, true, p.model->evaluate(x.head(p.m()), true));
    return {lm.f, lm.grad};
}

/// Dense Hessian of the frozen objective. `full` keeps the second-derivative
/// residual term; otherwise Gauss-Newton.
inline Eigen::MatrixXd hessian(const MapProblem& p, const Eigen::VectorXd& x, const FrozenCovariance& fc,
                               bool full = false)
{
    auto lm = detail::local_model(p, x, fc, true, p.model->evaluate(x.head(p.m()), true));
    const Eigen::Index m = p.m();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p.dim(), p.dim());
    H.topLeftCorner(m, m) = detail::theta_hessian(p, x, lm, fc, full);
    if (p.stage == Stage::stage2) {
        for (std::size_t j = 0; j < p.injection_slots.size(); ++j) {
            const std::size_t b = p.injection_slots[j];
            const Eigen::Index o = m + 4 * static_cast<Eigen::Index>(j);
            H.block<4, 4>(o, o) = 2.0 * fc.W[b];
            if (m > 0) {
                const Eigen::MatrixXd c = -2.0 * lm.eval.J[b].transpose() * fc.W[b];
                H.block(0, o, m, 4) = c;
                H.block(o, 0, 4, m) = c.transpose();
            }
        }
    }
    return H;
}

/// Stage 1: unconstrained frozen-covariance damped Gauss-Newton from the prior mean.
inline MapSolution minimize_stage1(const MapProblem& p, const SolverSettings& s = {},
                                   const Eigen::VectorXd* start = nullptr)
{
    if (p.stage != Stage::stage1) throw Error("minimize_stage1 needs a stage-1 problem");
    const Eigen::Index m = p.m();
    Eigen::VectorXd x = start ? *start : p.prior.mean;
    MapSolution sol;
    double damping = 1e-3;
    FrozenCovariance fc;
    for (int it = 0; it < s.max_iterations; ++it) {
        sol.iterations = it + 1;
        auto eval = p.model->evaluate(x, true);
        if (it % std::max(1, s.refresh_every) == 0) fc = freeze(eval.cov);
        auto lm = detail::local_model(p, x, fc, true, std::move(eval));
        sol.grad_norm = lm.grad.norm();
        if (sol.grad_norm < s.grad_tol) {
            sol.converged = true;
            sol.status = "gradient tolerance";
            break;
        }
        const Eigen::MatrixXd H = detail::theta_hessian(p, x, lm, fc, s.full_newton);
        bool accepted = false;
        Eigen::VectorXd step;
        for (int tries = 0; tries < 60 && !accepted; ++tries) {
            Eigen::MatrixXd A = H;
            A.diagonal() += damping * (H.diagonal().cwiseAbs().array() + 1e-12).matrix();
            Eigen::LLT<Eigen::MatrixXd> llt(A);
            if (llt.info() != Eigen::Success) {
                damping *= 10.0;
                continue;
            }
            step = -llt.solve(lm.grad);
            const double sn = step.norm();
            if (sn > s.max_log_step) step *= s.max_log_step / sn;
            const double ft = detail::objective_value(p, x + step, fc);
            if (std::isfinite(ft) && ft <= lm.f + 1e-4 * lm.grad.dot(step)) {
                accepted = true;
                damping = std::max(damping / 3.0, 1e-9);
            } else {
                damping *= 4.0;
            }
        }
        if (!accepted) {
            sol.status = "no descent step found";
            sol.converged = sol.grad_norm < std::sqrt(s.grad_tol);
            break;
        }
        x += step;
        if (step.norm() < s.step_tol) {
            sol.converged = true;
            sol.status = "step tolerance";
            break;
        }
    }
    if (!sol.converged && sol.status.empty()) sol.status = "max iterations";
    fc = freeze_at(p, x);
    auto lm = detail::local_model(p, x, fc, true, p.model->evaluate(x, true));
    sol.theta = x;
    sol.x = x;
    sol.objective = lm.f;
    sol.grad_norm = lm.grad.norm();
    sol.H = detail::theta_hessian(p, x, lm, fc, s.full_newton);
    (void)m;
    return sol;
}

namespace detail {

struct Barrier {
    double mu = 1.0;
};

inline double barrier_value(const MapProblem& p, const Eigen::VectorXd& x, double mu)
{
    const Eigen::Index n = p.n_inj();
    const auto I = x.segment(p.m(), n);
    const auto s = x.tail(n);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double a = s(j) - I(j);
        const double c = s(j) + I(j);
        if (!(a > 0.0) || !(c > 0.0)) return std::numeric_limits<double>::infinity();
        acc -= mu * (std::log(a) + std::log(c));
    }
    return acc;
}

} // namespace detail

/// Stage 2: min f + lambda 1^T s  s.t. -s <= theta_I <= s, by a primal
/// log-barrier method with geometric barrier reduction. The per-bin (I, s)
/// blocks are eliminated through a Schur complement onto the parameters.
inline MapSolution minimize_stage2(const MapProblem& p, const SolverSettings& s = {},
                                   const Eigen::VectorXd* start_theta = nullptr)
{
    if (p.stage != Stage::stage2) throw Error("minimize_stage2 needs a stage-2 problem");
    // With lambda = 0 the slacks are free and the barrier problem has no minimizer.
    if (!(p.lambda > 0.0)) throw ConfigError("stage 2 needs a positive lambda");
    const Eigen::Index m = p.m();
    const Eigen::Index n = p.n_inj();
    const std::size_t v = p.injection_slots.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(p.dim());
    x.head(m) = start_theta ? *start_theta : p.prior.mean;
    x.tail(n) = x.segment(m, n).cwiseAbs().array() + 1.0;

    MapSolution sol;
    sol.converged = true;
    int total = 0;
    double mu = s.barrier_init;
    FrozenCovariance fc;
    for (;;) {
        bool level_done = false;
        for (int it = 0; it < s.max_newton_per_barrier; ++it) {
            ++total;
            auto eval = p.model->evaluate(x.head(m), true);
            if (total % std::max(1, s.refresh_every) == 1 || s.refresh_every <= 1 || fc.W.empty()) {
                fc = freeze(eval.cov);
            }
            auto lm = detail::local_model(p, x, fc, true, std::move(eval));
            const double phi = lm.f + detail::barrier_value(p, x, mu);

            Eigen::VectorXd g = lm.grad;
            Eigen::MatrixXd S = detail::theta_hessian(p, x, lm, fc, s.full_newton);
            Eigen::VectorXd rhs = -g.head(m);
            std::vector<Eigen::LLT<Eigen::Matrix<double, 8, 8>>> blocks(v);
            std::vector<Eigen::Matrix<double, 8, 1>> gz(v);
            std::vector<Eigen::Matrix<double, Eigen::Dynamic, 8>> Hz(v);
            for (std::size_t j = 0; j < v; ++j) {
                const std::size_t b = p.injection_slots[j];
                const Eigen::Index oi = m + 4 * static_cast<Eigen::Index>(j);
                const Eigen::Index os = m + n + 4 * static_cast<Eigen::Index>(j);
                Eigen::Matrix<double, 8, 8> Hbb = Eigen::Matrix<double, 8, 8>::Zero();
                Hbb.topLeftCorner<4, 4>() = 2.0 * fc.W[b];
                for (int c = 0; c < 4; ++c) {
                    const double a = x(os + c) - x(oi + c);
                    const double d = x(os + c) + x(oi + c);
                    const double ia = mu / (a * a), id = mu / (d * d);
                    Hbb(c, c) += ia + id;
                    Hbb(4 + c, 4 + c) += ia + id;
                    Hbb(c, 4 + c) += -ia + id;
                    Hbb(4 + c, c) += -ia + id;
                    g(oi + c) += mu / a - mu / d;
                    g(os + c) += -mu / a - mu / d;
                }
                gz[j].head<4>() = g.segment<4>(oi);
                gz[j].tail<4>() = g.segment<4>(os);
                blocks[j].compute(Hbb);
                if (blocks[j].info() != Eigen::Success) throw NotPositiveDefinite("barrier block not positive definite");
                if (m > 0) {
                    Hz[j] = Eigen::Matrix<double, Eigen::Dynamic, 8>::Zero(m, 8);
                    Hz[j].leftCols<4>() = -2.0 * lm.eval.J[b].transpose() * fc.W[b];
                    const Eigen::Matrix<double, 8, Eigen::Dynamic> sol_h = blocks[j].solve(Hz[j].transpose());
                    S -= Hz[j] * sol_h;
                    rhs += Hz[j] * blocks[j].solve(gz[j]);
                }
            }
            Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(m);
            if (m > 0) {
                S = 0.5 * (S + S.transpose());
                double damp = 0.0;
                for (int tries = 0; tries < 40; ++tries) {
                    Eigen::MatrixXd A = S;
                    A.diagonal() += damp * (S.diagonal().cwiseAbs().array() + 1e-12).matrix();
                    Eigen::LLT<Eigen::MatrixXd> llt(A);
                    if (llt.info() == Eigen::Success) {
                        dtheta = llt.solve(rhs);
                        break;
                    }
                    damp = damp == 0.0 ? 1e-8 : damp * 10.0;
                }
            }
            Eigen::VectorXd dx = Eigen::VectorXd::Zero(p.dim());
            dx.head(m) = dtheta;
            for (std::size_t j = 0; j < v; ++j) {
                Eigen::Matrix<double, 8, 1> r = -gz[j];
                if (m > 0) r -= Hz[j].transpose() * dtheta;
                const Eigen::Matrix<double, 8, 1> dz = blocks[j].solve(r);
                const Eigen::Index oi = m + 4 * static_cast<Eigen::Index>(j);
                const Eigen::Index os = m + n + 4 * static_cast<Eigen::Index>(j);
                dx.segment<4>(oi) = dz.head<4>();
                dx.segment<4>(os) = dz.tail<4>();
            }
            if (m > 0) {
                const double sn = dx.head(m).norm();
                if (sn > s.max_log_step) dx *= s.max_log_step / sn;
            }
            const double decrement = -g.dot(dx);
            if (decrement < 1e-11 * (1.0 + std::abs(phi)) || dx.norm() < 1e-14 * (1.0 + x.norm())) {
                level_done = true;
                break;
            }
            // fraction to the boundary of -s <= I <= s
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double a = x(m + n + j) - x(m + j);
                const double c = x(m + n + j) + x(m + j);
                const double da = dx(m + n + j) - dx(m + j);
                const double dc = dx(m + n + j) + dx(m + j);
                if (da < 0.0) alpha = std::min(alpha, -s.fraction_to_boundary * a / da);
                if (dc < 0.0) alpha = std::min(alpha, -s.fraction_to_boundary * c / dc);
            }
            bool accepted = false;
            for (int ls = 0; ls < 60; ++ls) {
                const Eigen::VectorXd xt = x + alpha * dx;
                const double bt = detail::barrier_value(p, xt, mu);
                if (std::isfinite(bt)) {
                    const double ft = detail::objective_value(p, xt, fc) + bt;
                    if (std::isfinite(ft) && ft <= phi - 1e-4 * alpha * decrement) {
                        x = xt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if (!accepted) {
                // no further decrease representable at this barrier level
                level_done = true;
                break;
            }
        }
        if (!level_done) sol.converged = false;
        if (mu < s.barrier_final) break;
        mu *= s.barrier_factor;
    }
    sol.iterations = total;
    sol.status = sol.converged ? "barrier converged" : "max iterations";
    fc = freeze_at(p, x);
    auto lm = detail::local_model(p, x, fc, true, p.model->evaluate(x.head(m), true));
    sol.x = x;
    sol.theta = x.head(m);
    sol.objective = lm.f;
    sol.grad_norm = lm.grad.head(m).norm();
    sol.H = hessian(p, x, fc, s.full_newton);
    sol.injection_bins = p.injection_bins;
    sol.injections.resize(4, static_cast<Eigen::Index>(v));
    sol.slack.resize(4, static_cast<Eigen::Index>(v));
    for (std::size_t j = 0; j < v; ++j) {
        sol.injections.col(static_cast<Eigen::Index>(j)) = x.segment<4>(m + 4 * static_cast<Eigen::Index>(j));
        sol.slack.col(static_cast<Eigen::Index>(j)) = x.segment<4>(m + n + 4 * static_cast<Eigen::Index>(j));
    }
    return sol;
}

/// Per-bin injection norms and the infinity-norm test of one generator.
struct InjectionSummary {
    int generator = 0;
    std::vector<std::size_t> bins;
    std::vector<double> norms;
    double inf_norm = 0.0;
    bool source = false;
};

struct SourceReport {
    double iota = 0.0;
    std::vector<InjectionSummary> generators;
    std::vector<int> sources;  // flagged generators, largest ||I||_inf first
};

/// sqrt(I_Ir^2 + I_Ii^2 + I_phr^2 + I_phi^2)
inline double injection_norm(const Eigen::Vector4d& inj) { return inj.norm(); }

inline InjectionSummary summarize_injections(int generator, const MapSolution& sol)
{
    InjectionSummary s;
    s.generator = generator;
    s.bins = sol.injection_bins;
    for (Eigen::Index j = 0; j < sol.injections.cols(); ++j) {
        const double nrm = injection_norm(sol.injections.col(j));
        s.norms.push_back(nrm);
        s.inf_norm = std::max(s.inf_norm, nrm);
    }
    return s;
}

/// Flags every generator whose largest per-bin injection norm exceeds iota.
inline SourceReport locate_sources(std::vector<InjectionSummary> summaries, double iota)
{
    SourceReport rep;
    rep.iota = iota;
    for (auto& g : summaries) g.source = g.inf_norm > iota;
    rep.generators = std::move(summaries);
    std::vector<const InjectionSummary*> flagged;
    for (const auto& g : rep.generators)
        if (g.source) flagged.push_back(&g);
    std::stable_sort(flagged.begin(), flagged.end(),
                     [](const InjectionSummary* a, const InjectionSummary* b) { return a->inf_norm > b->inf_norm; });
    for (const auto* g : flagged) rep.sources.push_back(g->generator);
    return rep;
}

/// ||I - YV|| / (||I||/2 + ||YV||/2); zero when both vanish.
inline double prediction_error_pct(const Eigen::Vector2cd& measured, const Eigen::Vector2cd& predicted)
{
    const double den = 0.5 * measured.norm() + 0.5 * predicted.norm();
    if (den == 0.0) return 0.0;
    return (measured - predicted).norm() / den;
}

/// Runs fn(0..n-1) on a small pool of worker threads; results keep index order.
template <class F>
auto parallel_map(std::size_t n, F&& fn, unsigned threads = 0) -> std::vector<decltype(fn(std::size_t{}))>
{
    using R = decltype(fn(std::size_t{}));
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<R> out(n);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::future<void>> workers;
    std::atomic<std::size_t> next{0};
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) {
        workers.push_back(std::async(std::launch::async, [&] {
            for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
        }));
    }
    for (auto& w : workers) w.get();
    return out;
}

} // namespace fosl
