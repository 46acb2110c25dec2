#pragma once

// Generator + AVR machine models, equilibria, small-signal linearization and
// the terminal admittance FRF  [I~; phi~] = Y(Omega) [V~; theta~].
//
// Conventions: per-unit on the machine base, angles in rad, omega in pu with
// synchronous speed 1. The stator is lossless; the dq frame is aligned so that
// v_d + j v_q = V e^{j(theta - delta + pi/2)}.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fosl/dual.hpp"
#include "fosl/errors.hpp"
#include "fosl/linalg.hpp"

namespace fosl {

inline constexpr double kOmegaBase = 2.0 * std::numbers::pi * 60.0;

enum class ModelOrder { classical2, fluxdecay3 };

enum class Param : int { H = 0, D, Xd, Xdp, Xq, Td0p, KA, TA, Ep };
inline constexpr int kParamCount = 9;

inline constexpr std::array<std::string_view, kParamCount> kParamNames = {
    "H", "D", "Xd", "Xd_prime", "Xq", "Td0_prime", "KA", "TA", "E_prime"};

inline std::string_view param_name(Param p) { return kParamNames[static_cast<int>(p)]; }

inline std::optional<Param> param_from_name(std::string_view name)
{
    for (int i = 0; i < kParamCount; ++i) {
        if (kParamNames[i] == name) return static_cast<Param>(i);
    }
    return std::nullopt;
}

inline std::string_view model_name(ModelOrder m)
{
    return m == ModelOrder::classical2 ? "classical2" : "fluxdecay3";
}

inline ModelOrder model_from_name(std::string_view name)
{
    if (name == "classical2") return ModelOrder::classical2;
    if (name == "fluxdecay3") return ModelOrder::fluxdecay3;
    throw ConfigError("unknown model order '" + std::string(name) + "'");
}

/// Parameters that enter the estimation for a given model order. E' of the
/// classical machine is fixed by the measured operating point, so it is not free.
inline std::vector<Param> free_params(ModelOrder m)
{
    if (m == ModelOrder::classical2) return {Param::H, Param::D, Param::Xdp};
    return {Param::H, Param::D, Param::Xd, Param::Xdp, Param::Xq, Param::Td0p, Param::KA, Param::TA};
}

inline int state_count(ModelOrder m) { return m == ModelOrder::classical2 ? 2 : 4; }

template <class S>
struct MachineParams {
    ModelOrder model = ModelOrder::fluxdecay3;
    S H{5.0};
    S D{2.0};
    S Xd{1.0};
    S Xdp{0.3};
    S Xq{0.8};
    S Td0p{6.0};
    S KA{20.0};
    S TA{0.2};
    S Ep{1.0};

    S& operator[](Param p)
    {
        switch (p) {
        case Param::H: return H;
        case Param::D: return D;
        case Param::Xd: return Xd;
        case Param::Xdp: return Xdp;
        case Param::Xq: return Xq;
        case Param::Td0p: return Td0p;
        case Param::KA: return KA;
        case Param::TA: return TA;
        case Param::Ep: return Ep;
        }
        return H;
    }
    const S& operator[](Param p) const { return const_cast<MachineParams&>(*this)[p]; }

    /// Reactance seen on the q axis by the stator algebra (round rotor when classical).
    S q_reactance() const { return model == ModelOrder::classical2 ? Xdp : Xq; }
};

using GeneratorParams = MachineParams<double>;

template <class To, class From>
MachineParams<To> lift(const MachineParams<From>& p)
{
    MachineParams<To> out;
    out.model = p.model;
    for (int i = 0; i < kParamCount; ++i) out[static_cast<Param>(i)] = To(p[static_cast<Param>(i)]);
    return out;
}

/// Throws ConfigError when the physical invariants are violated.
inline void validate(const GeneratorParams& p)
{
    if (!(p.H > 0.0)) throw ConfigError("H must be positive");
    if (!(p.Xdp > 0.0)) throw ConfigError("Xd' must be positive");
    if (p.model == ModelOrder::fluxdecay3) {
        if (!(p.Xd >= p.Xdp)) throw ConfigError("Xd must be >= Xd'");
        if (!(p.Xq > 0.0)) throw ConfigError("Xq must be positive");
        if (!(p.Td0p > 0.0)) throw ConfigError("Td0' must be positive");
        if (!(p.TA > 0.0)) throw ConfigError("TA must be positive");
        if (!(p.KA > 0.0)) throw ConfigError("KA must be positive");
    }
}

/// Steady terminal phasors (pu, rad).
struct OperatingPoint {
    double V0 = 1.0;
    double theta0 = 0.0;
    double I0 = 0.0;
    double phi0 = 0.0;
};

/// Terminal voltage plus complex power delivered to the network.
struct TerminalCondition {
    double V0 = 1.0;
    double theta0 = 0.0;
    std::complex<double> S{0.0, 0.0};
};

template <class S>
struct EquilibriumT {
    OperatingPoint terminal;
    S delta{};
    S omega{1.0};
    S Eqp{};  // E_q' (flux-decay) or E' (classical)
    S Efd{};  // AVR state; unused by the classical model
    S Tm{};
    S Vref{};
    S id{};
    S iq{};
};

using EquilibriumPoint = EquilibriumT<double>;

/// Exogenous machine inputs that are constant at equilibrium.
template <class S>
struct Setpoints {
    S Tm{};
    S Vref{};
};

template <class S>
struct MachineResidual {
    std::array<S, 4> f{};  // state derivatives
    std::array<S, 2> g{};  // stator algebra
    std::array<S, 2> h{};  // outputs I, phi
};

/// Machine DAE: x' = f(x, y, u), 0 = g(x, y, u), out = h(x, y, u) with
/// x = [delta, omega, Eq', Efd] (first two only when classical),
/// y = [i_d, i_q], u = [V, theta].
template <class S>
MachineResidual<S> machine_dae(const MachineParams<S>& p, const Setpoints<S>& sp, const S* x, const S* y,
                               const S* u)
{
    const bool classical = p.model == ModelOrder::classical2;
    const S& delta = x[0];
    const S& omega = x[1];
    const S Eqp = classical ? p.Ep : x[2];
    const S& id = y[0];
    const S& iq = y[1];
    const S& V = u[0];
    const S& theta = u[1];

    S ang = delta - theta;
    S vd = V * sin(ang);
    S vq = V * cos(ang);
    S Pe = vd * id + vq * iq;

    MachineResidual<S> r;
    r.f[0] = kOmegaBase * (omega - 1.0);
    r.f[1] = (sp.Tm - Pe - p.D * (omega - 1.0)) / (2.0 * p.H);
    if (!classical) {
        const S& Efd = x[3];
        r.f[2] = (Efd - Eqp - (p.Xd - p.Xdp) * id) / p.Td0p;
        r.f[3] = (p.KA * (sp.Vref - V) - Efd) / p.TA;
    }
    r.g[0] = p.Xdp * id - Eqp + vq;
    r.g[1] = p.q_reactance() * iq - vd;
    r.h[0] = sqrt(id * id + iq * iq);
    r.h[1] = delta - std::numbers::pi / 2.0 + atan2(iq, id);
    return r;
}

/// Closed-form equilibrium consistent with a measured terminal operating point.
/// Differentiable in the parameters; the classical E' is an output here.
template <class S>
EquilibriumT<S> equilibrium_from_terminal(const MachineParams<S>& p, const OperatingPoint& op)
{
    EquilibriumT<S> eq;
    eq.terminal = op;
    const double vr = op.V0 * std::cos(op.theta0);
    const double vi = op.V0 * std::sin(op.theta0);
    const double ir = op.I0 * std::cos(op.phi0);
    const double ii = op.I0 * std::sin(op.phi0);
    // E = V + j Xq I
    S xq = p.q_reactance();
    S er = vr - xq * ii;
    S ei = vi + xq * ir;
    eq.delta = atan2(ei, er);
    S vd = op.V0 * sin(eq.delta - op.theta0);
    S vq = op.V0 * cos(eq.delta - op.theta0);
    eq.id = op.I0 * sin(eq.delta - op.phi0);
    eq.iq = op.I0 * cos(eq.delta - op.phi0);
    eq.Eqp = vq + p.Xdp * eq.id;
    eq.Tm = vd * eq.id + vq * eq.iq;
    if (p.model == ModelOrder::fluxdecay3) {
        eq.Efd = eq.Eqp + (p.Xd - p.Xdp) * eq.id;
        eq.Vref = op.V0 + eq.Efd / p.KA;
    } else {
        eq.Efd = S(0.0);
        eq.Vref = S(op.V0);
    }
    return eq;
}

namespace detail {

template <class S>
std::array<S, 4> equilibrium_state(const EquilibriumT<S>& eq)
{
    return {eq.delta, eq.omega, eq.Eqp, eq.Efd};
}

} // namespace detail

/// Damped Newton solve of the machine equilibrium for a terminal voltage and
/// delivered complex power. Jacobian by forward-mode differentiation.
inline EquilibriumPoint solve_equilibrium(const GeneratorParams& params, const TerminalCondition& tc,
                                          int max_iter = 50, double tol = 1e-10)
{
    const bool classical = params.model == ModelOrder::classical2;
    const std::complex<double> Vbar = std::polar(tc.V0, tc.theta0);
    const std::complex<double> Ibar = std::conj(tc.S / Vbar);

    // classical unknowns: delta, E', id, iq, Tm
    // flux-decay unknowns: delta, Eq', Efd, id, iq, Tm, Vref
    const int n = classical ? 5 : 7;

    auto residual = [&]<class T>(const std::vector<T>& z) {
        MachineParams<T> p = lift<T>(params);
        std::array<T, 4> x{};
        std::array<T, 2> y{};
        Setpoints<T> sp;
        x[0] = z[0];
        x[1] = T(1.0);
        if (classical) {
            p.Ep = z[1];
            y = {z[2], z[3]};
            sp.Tm = z[4];
        } else {
            x[2] = z[1];
            x[3] = z[2];
            y = {z[3], z[4]};
            sp.Tm = z[5];
            sp.Vref = z[6];
        }
        std::array<T, 2> u{T(tc.V0), T(tc.theta0)};
        auto r = machine_dae(p, sp, x.data(), y.data(), u.data());
        // terminal current in the network frame must match the dispatch
        T s = sin(x[0]);
        T c = cos(x[0]);
        T Ix = y[0] * s + y[1] * c;
        T Iy = -y[0] * c + y[1] * s;
        std::vector<T> out;
        out.push_back(r.f[1] * (2.0 * p.H));
        if (!classical) {
            out.push_back(r.f[2] * p.Td0p);
            out.push_back(r.f[3] * p.TA);
        }
        out.push_back(r.g[0]);
        out.push_back(r.g[1]);
        out.push_back(Ix - Ibar.real());
        out.push_back(Iy - Ibar.imag());
        return out;
    };

    std::vector<double> z(n, 0.0);
    z[0] = tc.theta0;
    z[1] = tc.V0;
    if (classical) {
        z[4] = tc.S.real();
    } else {
        z[2] = tc.V0;
        z[5] = tc.S.real();
        z[6] = tc.V0;
    }

    auto rnorm = [&](const std::vector<double>& zz) {
        auto r = residual(zz);
        double acc = 0.0;
        for (double v : r) acc += v * v;
        return std::sqrt(acc);
    };

    double norm = rnorm(z);
    bool converged = norm < tol;
    for (int it = 0; it < max_iter && !converged; ++it) {
        Eigen::MatrixXd J(n, n);
        Eigen::VectorXd r0(n);
        for (int k = 0; k < n; ++k) {
            std::vector<Dual<double>> zd(z.begin(), z.end());
            zd[k].d = 1.0;
            auto rd = residual(zd);
            for (int i = 0; i < n; ++i) {
                J(i, k) = rd[i].d;
                r0(i) = rd[i].v;
            }
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) throw NoEquilibrium("singular equilibrium Jacobian");
        Eigen::VectorXd step = lu.solve(-r0);
        double alpha = 1.0;
        std::vector<double> trial(n);
        double tnorm = norm;
        for (int ls = 0; ls < 30; ++ls) {
            for (int i = 0; i < n; ++i) trial[i] = z[i] + alpha * step(i);
            tnorm = rnorm(trial);
            if (tnorm < (1.0 - 1e-4 * alpha) * norm) break;
            alpha *= 0.5;
        }
        z = trial;
        norm = tnorm;
        converged = norm < tol;
    }
    if (!converged) throw NoEquilibrium("equilibrium Newton did not converge");

    EquilibriumPoint eq;
    eq.terminal.V0 = tc.V0;
    eq.terminal.theta0 = tc.theta0;
    eq.terminal.I0 = std::abs(Ibar);
    eq.terminal.phi0 = std::arg(Ibar);
    eq.delta = z[0];
    eq.omega = 1.0;
    if (classical) {
        eq.Eqp = z[1];
        eq.id = z[2];
        eq.iq = z[3];
        eq.Tm = z[4];
        eq.Vref = tc.V0;
    } else {
        eq.Eqp = z[1];
        eq.Efd = z[2];
        eq.id = z[3];
        eq.iq = z[4];
        eq.Tm = z[5];
        eq.Vref = z[6];
    }
    return eq;
}

/// Small-signal model: dx = A x + B [dV; dtheta], [dI; dphi] = C x + D [dV; dtheta].
template <class S>
struct LinearModelT {
    int n = 0;
    Dense<S> A;
    Dense<S> B;
    Dense<S> C;
    Dense<S> D;
};

using LinearModel = LinearModelT<double>;

inline Eigen::MatrixXd to_eigen(const Dense<double>& m)
{
    Eigen::MatrixXd out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
    return out;
}

/// Jacobian linearization of the machine DAE at `eq` with the stator algebra
/// eliminated. Works for any scalar (parameter sensitivities ride along).
template <class S>
LinearModelT<S> linearize(const MachineParams<S>& params, const EquilibriumT<S>& eq)
{
    using T = Dual<S>;
    const int n = state_count(params.model);
    MachineParams<T> p = lift<T>(params);
    if (params.model == ModelOrder::classical2) p.Ep = T(eq.Eqp);
    const Setpoints<T> sp{T(eq.Tm), T(eq.Vref)};
    const auto x0 = detail::equilibrium_state(eq);
    const std::array<S, 2> y0{eq.id, eq.iq};
    const std::array<S, 2> u0{S(eq.terminal.V0), S(eq.terminal.theta0)};

    // columns: n states, 2 algebraic, 2 inputs
    const int nv = n + 4;
    Dense<S> jf(n, nv), jg(2, nv), jh(2, nv);
    for (int k = 0; k < nv; ++k) {
        std::array<T, 4> x{};
        std::array<T, 2> y{};
        std::array<T, 2> u{};
        for (int i = 0; i < 4; ++i) x[i] = T(x0[i]);
        for (int i = 0; i < 2; ++i) {
            y[i] = T(y0[i]);
            u[i] = T(u0[i]);
        }
        if (k < n) x[k].d = S(1.0);
        else if (k < n + 2) y[k - n].d = S(1.0);
        else u[k - n - 2].d = S(1.0);
        auto r = machine_dae(p, sp, x.data(), y.data(), u.data());
        for (int i = 0; i < n; ++i) jf(i, k) = r.f[i].d;
        for (int i = 0; i < 2; ++i) {
            jg(i, k) = r.g[i].d;
            jh(i, k) = r.h[i].d;
        }
    }

    // gy^{-1} explicitly (2x2)
    S a = jg(0, n), b = jg(0, n + 1), c = jg(1, n), d = jg(1, n + 1);
    S det = a * d - b * c;
    const double scale = std::abs(value_of(a) * value_of(d)) + std::abs(value_of(b) * value_of(c));
    if (!(std::abs(value_of(det)) > 1e-12 * std::max(scale, 1e-300)) || value_of(det) == 0.0) {
        throw SingularAlgebraicBlock("stator algebraic Jacobian is singular");
    }
    S gi00 = d / det, gi01 = -b / det, gi10 = -c / det, gi11 = a / det;

    // K = gy^{-1} [gx gu]  (2 x (n+2))
    Dense<S> K(2, n + 2);
    for (int j = 0; j < n + 2; ++j) {
        int col = j < n ? j : j + 2;
        K(0, j) = gi00 * jg(0, col) + gi01 * jg(1, col);
        K(1, j) = gi10 * jg(0, col) + gi11 * jg(1, col);
    }

    LinearModelT<S> m;
    m.n = n;
    m.A = Dense<S>(n, n);
    m.B = Dense<S>(n, 2);
    m.C = Dense<S>(2, n);
    m.D = Dense<S>(2, 2);
    auto reduce = [&](const Dense<S>& J, int row, int j) {
        int col = j < n ? j : j + 2;
        return J(row, col) - (J(row, n) * K(0, j) + J(row, n + 1) * K(1, j));
    };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) m.A(i, j) = reduce(jf, i, j);
        for (int j = 0; j < 2; ++j) m.B(i, j) = reduce(jf, i, n + j);
    }
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < n; ++j) m.C(i, j) = reduce(jh, i, j);
        for (int j = 0; j < 2; ++j) m.D(i, j) = reduce(jh, i, n + j);
    }
    return m;
}

/// Y(Omega) entries in order Y11, Y12, Y21, Y22 for one frequency.
template <class S>
std::array<Cx<S>, 4> frf_bin(const LinearModelT<S>& m, double omega)
{
    const auto n = static_cast<std::size_t>(m.n);
    std::array<Cx<S>, 4> Y;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) Y[2 * i + j] = Cx<S>{m.D(i, j), S(0.0)};
    if (n == 0) return Y;

    Dense<Cx<S>> M(n, n), R(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) M(i, j) = Cx<S>{-m.A(i, j), S(0.0)};
        M(i, i).im = M(i, i).im + omega;
        for (std::size_t j = 0; j < 2; ++j) R(i, j) = Cx<S>{m.B(i, j), S(0.0)};
    }
    gauss_solve<ResonantBin>(std::move(M), R);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            Cx<S> acc = Y[2 * i + j];
            for (std::size_t k = 0; k < n; ++k) acc = acc + R(k, j) * m.C(i, k);
            Y[2 * i + j] = acc;
        }
    }
    return Y;
}

/// Frequency response tabulated on a grid (rad/s).
struct Frf {
    std::vector<double> grid;
    std::vector<Eigen::Matrix2cd> Y;
};

/// Y(Omega) = C (j Omega I - A)^{-1} B + D on every grid bin.
/// Throws ResonantBin when the resolvent's condition number exceeds 1e12.
inline Frf frf(const LinearModel& model, const std::vector<double>& grid)
{
    Frf out;
    out.grid = grid;
    out.Y.reserve(grid.size());
    const int n = model.n;
    const Eigen::MatrixXd A = n ? to_eigen(model.A) : Eigen::MatrixXd();
    const Eigen::MatrixXd B = n ? to_eigen(model.B) : Eigen::MatrixXd();
    const Eigen::MatrixXd C = n ? to_eigen(model.C) : Eigen::MatrixXd();
    const Eigen::Matrix2d D = to_eigen(model.D);
    for (double w : grid) {
        Eigen::Matrix2cd Y = D.cast<std::complex<double>>();
        if (n > 0) {
            Eigen::MatrixXcd M = -A.cast<std::complex<double>>();
            M.diagonal().array() += std::complex<double>(0.0, w);
            Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
            const double rc = lu.rcond();
            if (!(rc > 1e-12)) throw ResonantBin("resolvent ill-conditioned at omega=" + std::to_string(w));
            Y += C.cast<std::complex<double>>() * lu.solve(B.cast<std::complex<double>>());
        }
        out.Y.push_back(Y);
    }
    return out;
}

// --- time-domain helpers shared by the simulator and probe tests ---

struct MachineState {
    std::array<double, 4> x{};  // delta, omega, Eq', Efd
};

inline MachineState state_from_equilibrium(const EquilibriumPoint& eq)
{
    return MachineState{{eq.delta, eq.omega, eq.Eqp, eq.Efd}};
}

/// Stator currents (i_d, i_q) for a network-frame terminal voltage.
inline std::array<double, 2> stator_currents(const GeneratorParams& p, const MachineState& s,
                                             std::complex<double> Vbar)
{
    const double delta = s.x[0];
    const double Eqp = p.model == ModelOrder::classical2 ? p.Ep : s.x[2];
    const double vd = Vbar.real() * std::sin(delta) - Vbar.imag() * std::cos(delta);
    const double vq = Vbar.real() * std::cos(delta) + Vbar.imag() * std::sin(delta);
    return {(Eqp - vq) / p.Xdp, vd / p.q_reactance()};
}

/// Network-frame current delivered by the machine, I = a + M [Vx; Vy].
struct NortonMap {
    Eigen::Vector2d a;
    Eigen::Matrix2d M;
};

inline Eigen::Vector2d dq_to_network(double delta, double id, double iq)
{
    const double s = std::sin(delta), c = std::cos(delta);
    return {id * s + iq * c, -id * c + iq * s};
}

inline NortonMap norton_map(const GeneratorParams& p, const MachineState& s)
{
    NortonMap nm;
    auto i0 = stator_currents(p, s, {0.0, 0.0});
    nm.a = dq_to_network(s.x[0], i0[0], i0[1]);
    auto i1 = stator_currents(p, s, {1.0, 0.0});
    auto i2 = stator_currents(p, s, {0.0, 1.0});
    nm.M.col(0) = dq_to_network(s.x[0], i1[0], i1[1]) - nm.a;
    nm.M.col(1) = dq_to_network(s.x[0], i2[0], i2[1]) - nm.a;
    return nm;
}

/// State derivative given the terminal voltage phasor.
inline MachineState machine_rhs(const GeneratorParams& p, const MachineState& s, std::complex<double> Vbar,
                                double Tm, double Vref)
{
    const auto cur = stator_currents(p, s, Vbar);
    const std::array<double, 2> u{std::abs(Vbar), std::arg(Vbar)};
    auto r = machine_dae(p, Setpoints<double>{Tm, Vref}, s.x.data(), cur.data(), u.data());
    MachineState d;
    d.x = r.f;
    return d;
}

/// Terminal current magnitude and phase for the given voltage.
inline std::array<double, 2> terminal_current(const GeneratorParams& p, const MachineState& s,
                                              std::complex<double> Vbar)
{
    const auto cur = stator_currents(p, s, Vbar);
    const Eigen::Vector2d I = dq_to_network(s.x[0], cur[0], cur[1]);
    return {std::hypot(I(0), I(1)), std::atan2(I(1), I(0))};
}

} // namespace fosl
