#pragma once

// Per-unit network description, bus admittance matrix and a polar
// Newton-Raphson power flow.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fosl/errors.hpp"

namespace fosl {

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.1;
    double b = 0.0;  // total line charging susceptance
};

enum class BusType { pq, pv, slack };

struct PowerFlowCase {
    int n_bus = 0;
    std::vector<Branch> branches;
    std::vector<BusType> type;
    std::vector<double> P;      // net injection (generation - load)
    std::vector<double> Q;      // net injection, PQ buses only
    std::vector<double> Vset;   // PV and slack buses
    double slack_angle = 0.0;
};

struct PowerFlowResult {
    Eigen::VectorXd V;
    Eigen::VectorXd theta;
    Eigen::VectorXcd S;  // net complex injection at every bus
    int iterations = 0;
    double mismatch = 0.0;
};

inline Eigen::MatrixXcd ybus(int n_bus, const std::vector<Branch>& branches)
{
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n_bus, n_bus);
    for (const auto& br : branches) {
        if (br.from < 0 || br.to < 0 || br.from >= n_bus || br.to >= n_bus || br.from == br.to) {
            throw ConfigError("branch endpoints out of range");
        }
        if (br.r == 0.0 && br.x == 0.0) throw ConfigError("branch with zero impedance");
        const std::complex<double> y = 1.0 / std::complex<double>(br.r, br.x);
        const std::complex<double> ysh(0.0, 0.5 * br.b);
        Y(br.from, br.from) += y + ysh;
        Y(br.to, br.to) += y + ysh;
        Y(br.from, br.to) -= y;
        Y(br.to, br.from) -= y;
    }
    return Y;
}

/// Newton-Raphson in polar coordinates with the usual complex-power
/// sensitivities dS/dtheta and dS/d|V|.
inline PowerFlowResult solve_power_flow(const PowerFlowCase& pf, double tol = 1e-11, int max_iter = 30)
{
    const int n = pf.n_bus;
    if (static_cast<int>(pf.type.size()) != n || static_cast<int>(pf.P.size()) != n ||
        static_cast<int>(pf.Q.size()) != n || static_cast<int>(pf.Vset.size()) != n) {
        throw ConfigError("power flow case vectors must have one entry per bus");
    }
    int slack = -1;
    for (int i = 0; i < n; ++i)
        if (pf.type[i] == BusType::slack) {
            if (slack >= 0) throw ConfigError("more than one slack bus");
            slack = i;
        }
    if (slack < 0) throw ConfigError("power flow needs a slack bus");

    const Eigen::MatrixXcd Y = ybus(n, pf.branches);
    Eigen::VectorXd Vm = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd Va = Eigen::VectorXd::Constant(n, pf.slack_angle);
    for (int i = 0; i < n; ++i)
        if (pf.type[i] != BusType::pq) Vm(i) = pf.Vset[i];

    std::vector<int> ang, mag;  // unknown angle and magnitude buses
    for (int i = 0; i < n; ++i) {
        if (pf.type[i] != BusType::slack) ang.push_back(i);
        if (pf.type[i] == BusType::pq) mag.push_back(i);
    }
    const int na = static_cast<int>(ang.size());
    const int nm = static_cast<int>(mag.size());

    auto phasors = [&] {
        Eigen::VectorXcd V(n);
        for (int i = 0; i < n; ++i) V(i) = std::polar(Vm(i), Va(i));
        return V;
    };

    PowerFlowResult res;
    for (int it = 0; it <= max_iter; ++it) {
        const Eigen::VectorXcd V = phasors();
        const Eigen::VectorXcd Ib = Y * V;
        const Eigen::VectorXcd S = V.array() * Ib.conjugate().array();
        Eigen::VectorXd F(na + nm);
        for (int k = 0; k < na; ++k) F(k) = S(ang[k]).real() - pf.P[ang[k]];
        for (int k = 0; k < nm; ++k) F(na + k) = S(mag[k]).imag() - pf.Q[mag[k]];
        res.mismatch = F.size() ? F.lpNorm<Eigen::Infinity>() : 0.0;
        res.iterations = it;
        if (res.mismatch < tol) {
            res.V = Vm;
            res.theta = Va;
            res.S = S;
            return res;
        }
        if (it == max_iter) break;
        // dS/dVa = j diag(V) conj(diag(Ib) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(Ib)) diag(V/|V|)
        const Eigen::VectorXcd Vn = V.array() / Vm.array().cast<std::complex<double>>();
        Eigen::MatrixXcd dSa = -(Y * V.asDiagonal());
        dSa.diagonal() += Ib;
        dSa = std::complex<double>(0.0, 1.0) * (V.asDiagonal() * dSa.conjugate());
        Eigen::MatrixXcd dSm = V.asDiagonal() * (Y * Vn.asDiagonal()).conjugate();
        dSm.diagonal() += (Ib.conjugate().array() * Vn.array()).matrix();
        Eigen::MatrixXd J(na + nm, na + nm);
        for (int r = 0; r < na; ++r) {
            for (int c = 0; c < na; ++c) J(r, c) = dSa(ang[r], ang[c]).real();
            for (int c = 0; c < nm; ++c) J(r, na + c) = dSm(ang[r], mag[c]).real();
        }
        for (int r = 0; r < nm; ++r) {
            for (int c = 0; c < na; ++c) J(na + r, c) = dSa(mag[r], ang[c]).imag();
            for (int c = 0; c < nm; ++c) J(na + r, na + c) = dSm(mag[r], mag[c]).imag();
        }
        const Eigen::VectorXd dx = J.fullPivLu().solve(-F);
        if (!dx.allFinite()) break;
        for (int k = 0; k < na; ++k) Va(ang[k]) += dx(k);
        for (int k = 0; k < nm; ++k) Vm(mag[k]) += dx(na + k);
    }
    throw NoEquilibrium("power flow did not converge (mismatch " + std::to_string(res.mismatch) + ")");
}

/// Real 2n x 2n form of a complex admittance matrix acting on [Vx; Vy]
/// interleaved per bus: rows (2i, 2i+1) hold the real and imaginary current.
inline Eigen::MatrixXd realify(const Eigen::MatrixXcd& Y)
{
    const auto n = Y.rows();
    Eigen::MatrixXd R(2 * n, 2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < n; ++k) {
            const double g = Y(i, k).real(), b = Y(i, k).imag();
            R(2 * i, 2 * k) = g;
            R(2 * i, 2 * k + 1) = -b;
            R(2 * i + 1, 2 * k) = b;
            R(2 * i + 1, 2 * k + 1) = g;
        }
    }
    return R;
}

} // namespace fosl
