#pragma once

// Labeled synthetic PMU data: a multi-machine time-domain simulation with an
// infinite bus behind a source reactance, constant-impedance loads modulated
// by Ornstein-Uhlenbeck noise, and torque / AVR-reference forcing. Signals are
// low-pass filtered and decimated to the PMU rate. A periodic small-signal
// synthesis mode produces spectra that satisfy I = Y V exactly.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fosl/dynamics.hpp"
#include "fosl/errors.hpp"
#include "fosl/network.hpp"
#include "fosl/spectra.hpp"

namespace fosl {

enum class ForcingChannel { torque, avr_ref };

inline std::string_view forcing_name(ForcingChannel c) { return c == ForcingChannel::torque ? "torque" : "avr_ref"; }

inline ForcingChannel forcing_from_name(std::string_view s)
{
    if (s == "torque") return ForcingChannel::torque;
    if (s == "avr_ref") return ForcingChannel::avr_ref;
    throw ConfigError("unknown forcing channel '" + std::string(s) + "'");
}

/// Torque forcing: Tm = Tm0 (1 + amplitude sin(2 pi f t)).
/// AVR forcing:    Vref = Vref0 + amplitude sin(2 pi f t).
struct ForcingSpec {
    int generator = 0;
    ForcingChannel channel = ForcingChannel::torque;
    double amplitude = 0.05;
    double freq_hz = 0.5;
};

/// Constant-impedance load; its admittance is scaled by (1 + u(t)) with u an
/// OU process of stationary std `ou_sigma` and mean-reversion rate `ou_theta`.
struct LoadSpec {
    int bus = 0;
    std::complex<double> S{0.0, 0.0};
    double ou_sigma = 0.01;
    double ou_theta = 0.5;
};

struct GeneratorSpec {
    std::string name;
    int bus = 0;
    double P = 0.5;
    double V = 1.0;
    GeneratorParams params;
};

struct SimScenario {
    std::string name = "scenario";
    int n_bus = 0;
    std::vector<Branch> branches;
    bool has_infinite_bus = true;
    int infinite_bus = 0;
    double infinite_bus_V = 1.0;
    double source_reactance = 0.05;
    double infinite_noise_std = 0.005;   // relative std of the source EMF magnitude
    double infinite_noise_hold = 0.05;   // s; the noise is held constant over this interval
    std::vector<GeneratorSpec> generators;
    std::vector<LoadSpec> loads;
    std::vector<ForcingSpec> forcings;
    double snr_db = 45.0;
    double duration = 120.0;
    double dt = 1e-3;
    double fs = 20.0;
    double warmup = 30.0;
    double antialias_cutoff_hz = 8.8;
    int antialias_taps = 2401;
    std::uint64_t seed = 1;

    /// PMU samples in the recorded window.
    std::size_t sample_count() const { return static_cast<std::size_t>(std::llround(duration * fs)) + 1; }

    void validate() const
    {
        if (n_bus < 1) throw ConfigError("scenario needs at least one bus");
        if (!has_infinite_bus) throw ConfigError("scenarios without an infinite bus are not supported");
        if (infinite_bus < 0 || infinite_bus >= n_bus) throw ConfigError("infinite bus index out of range");
        if (!(source_reactance > 0.0)) throw ConfigError("source reactance must be positive");
        if (generators.empty()) throw ConfigError("scenario has no generators");
        std::vector<int> used(static_cast<std::size_t>(n_bus), 0);
        for (const auto& g : generators) {
            if (g.bus < 0 || g.bus >= n_bus || g.bus == infinite_bus) throw ConfigError("bad generator bus for " + g.name);
            if (used[g.bus]++) throw ConfigError("two generators on bus " + std::to_string(g.bus));
            validate_params(g.params);
        }
        for (const auto& l : loads) {
            if (l.bus < 0 || l.bus >= n_bus) throw ConfigError("load bus out of range");
            if (l.ou_sigma < 0.0 || !(l.ou_theta > 0.0)) throw ConfigError("bad OU parameters");
        }
        const double nyq = 0.5 * fs;
        for (const auto& f : forcings) {
            if (f.generator < 0 || f.generator >= static_cast<int>(generators.size())) {
                throw ConfigError("forcing targets an unknown generator");
            }
            if (!(f.freq_hz > 0.0) || f.freq_hz >= nyq) throw ConfigError("forcing frequency must lie in (0, Nyquist)");
        }
        if (!(dt > 0.0) || !(fs > 0.0) || !(duration > 0.0) || warmup < 0.0) throw ConfigError("bad timing");
        const double ratio = 1.0 / (fs * dt);
        if (std::abs(ratio - std::round(ratio)) > 1e-9) throw ConfigError("1/(fs*dt) must be an integer");
        const double n = duration * fs;
        if (std::abs(n - std::round(n)) > 1e-9 || std::llround(n) % 2 != 0) {
            throw ConfigError("duration*fs must be an even integer (odd PMU sample count)");
        }
        if (!(antialias_cutoff_hz > 0.0) || antialias_cutoff_hz >= nyq) throw ConfigError("anti-alias cutoff must be below Nyquist");
        if (antialias_taps < 1 || antialias_taps % 2 == 0) throw ConfigError("anti-alias filter needs an odd tap count");
    }

private:
    static void validate_params(const GeneratorParams& p) { fosl::validate(p); }
};

struct FoLabel {
    int generator = 0;
    ForcingChannel channel = ForcingChannel::torque;
    double freq_hz = 0.0;
    double amplitude = 0.0;
};

struct LabeledDataset {
    std::vector<std::string> names;
    std::vector<PmuWindow> clean;
    std::vector<PmuWindow> noisy;
    std::vector<std::array<double, 4>> noise_var;  // time-domain PMU noise variance per channel
    std::vector<GeneratorParams> truth;             // classical E' holds the equilibrium value
    std::vector<OperatingPoint> operating_points;
    std::vector<FoLabel> labels;
    std::vector<double> coi_angle;                  // sum H delta / sum H at each PMU sample
    double fs = 20.0;
};

// --------------------------------------------------------------------------

/// Steady state of the scenario: power flow plus machine equilibria.
struct ScenarioEquilibrium {
    PowerFlowResult pf;
    std::vector<EquilibriumPoint> machines;
    std::vector<GeneratorParams> params;   // classical E' set from the equilibrium
    std::vector<std::complex<double>> load_admittance;
    std::complex<double> source_emf;
};

inline ScenarioEquilibrium scenario_equilibrium(const SimScenario& sc)
{
    sc.validate();
    PowerFlowCase pc;
    pc.n_bus = sc.n_bus;
    pc.branches = sc.branches;
    pc.type.assign(sc.n_bus, BusType::pq);
    pc.P.assign(sc.n_bus, 0.0);
    pc.Q.assign(sc.n_bus, 0.0);
    pc.Vset.assign(sc.n_bus, 1.0);
    pc.type[sc.infinite_bus] = BusType::slack;
    pc.Vset[sc.infinite_bus] = sc.infinite_bus_V;
    for (const auto& g : sc.generators) {
        pc.type[g.bus] = BusType::pv;
        pc.P[g.bus] += g.P;
        pc.Vset[g.bus] = g.V;
    }
    for (const auto& l : sc.loads) {
        pc.P[l.bus] -= l.S.real();
        pc.Q[l.bus] -= l.S.imag();
    }
    ScenarioEquilibrium se;
    se.pf = solve_power_flow(pc);
    for (const auto& g : sc.generators) {
        TerminalCondition tc;
        tc.V0 = se.pf.V(g.bus);
        tc.theta0 = se.pf.theta(g.bus);
        // net injection at a generator bus includes any co-located load
        std::complex<double> load{0.0, 0.0};
        for (const auto& l : sc.loads)
            if (l.bus == g.bus) load += l.S;
        tc.S = se.pf.S(g.bus) + load;
        const EquilibriumPoint eq = solve_equilibrium(g.params, tc);
        GeneratorParams p = g.params;
        if (p.model == ModelOrder::classical2) p.Ep = eq.Eqp;
        se.machines.push_back(eq);
        se.params.push_back(p);
    }
    for (const auto& l : sc.loads) {
        const double V = se.pf.V(l.bus);
        se.load_admittance.push_back(std::conj(l.S) / (V * V));
    }
    const std::complex<double> Vs = std::polar(se.pf.V(sc.infinite_bus), se.pf.theta(sc.infinite_bus));
    const std::complex<double> Is = std::conj(se.pf.S(sc.infinite_bus) / Vs);
    se.source_emf = Vs + std::complex<double>(0.0, sc.source_reactance) * Is;
    return se;
}

/// Windowed-sinc low-pass (Blackman window), unit DC gain.
inline std::vector<double> lowpass_fir(double cutoff_hz, double fs_hz, int taps)
{
    std::vector<double> h(static_cast<std::size_t>(taps));
    const int M = (taps - 1) / 2;
    const double fc = cutoff_hz / fs_hz;
    double sum = 0.0;
    for (int n = 0; n < taps; ++n) {
        const int k = n - M;
        const double sinc = k == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * k) / (std::numbers::pi * k);
        const double w = taps == 1 ? 1.0
                                   : 0.42 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (taps - 1)) +
                                         0.08 * std::cos(4.0 * std::numbers::pi * n / (taps - 1));
        h[n] = sinc * w;
        sum += h[n];
    }
    for (double& v : h) v /= sum;
    return h;
}

/// Euler-Maruyama step of du = -theta u dt + sigma sqrt(2 theta) dW, whose
/// stationary standard deviation is sigma. `z` is a standard normal draw.
inline double ou_step(double u, double theta, double sigma, double dt, double z)
{
    return u + (-theta * u * dt + sigma * std::sqrt(2.0 * theta * dt) * z);
}

namespace detail {

inline double unwrap_near(double value, double previous)
{
    const double twopi = 2.0 * std::numbers::pi;
    return value - twopi * std::round((value - previous) / twopi);
}

/// Per-generator fine-rate records.
struct FineRecord {
    std::array<std::vector<double>, 4> ch;
};

} // namespace detail

/// Integrates the scenario (Heun for the machines, Euler-Maruyama for the OU
/// load processes) and returns clean PMU windows. Noise is added separately
/// by add_pmu_noise; `noisy` is left equal to `clean` here.
inline LabeledDataset simulate(const SimScenario& sc)
{
    const ScenarioEquilibrium se = scenario_equilibrium(sc);
    const int nb = sc.n_bus;
    const std::size_t ng = sc.generators.size();
    const std::size_t nl = sc.loads.size();

    // branches plus the source admittance
    Eigen::MatrixXcd Yc = ybus(nb, sc.branches);
    const std::complex<double> ys = 1.0 / std::complex<double>(0.0, sc.source_reactance);
    Yc(sc.infinite_bus, sc.infinite_bus) += ys;
    const Eigen::MatrixXd Ybase = realify(Yc);

    std::vector<MachineState> x(ng);
    std::vector<double> Tm0(ng), Vref0(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        x[g] = state_from_equilibrium(se.machines[g]);
        Tm0[g] = se.machines[g].Tm;
        Vref0[g] = se.machines[g].Vref;
    }

    std::mt19937_64 rng(sc.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> ou(nl, 0.0);
    for (std::size_t l = 0; l < nl; ++l) ou[l] = sc.loads[l].ou_sigma * normal(rng);  // stationary start
    double emf_scale = 1.0;

    auto setpoints = [&](double t, std::vector<double>& Tm, std::vector<double>& Vref) {
        Tm = Tm0;
        Vref = Vref0;
        for (const auto& f : sc.forcings) {
            const double s = std::sin(2.0 * std::numbers::pi * f.freq_hz * t);
            if (f.channel == ForcingChannel::torque) Tm[f.generator] = Tm0[f.generator] * (1.0 + f.amplitude * s);
            else Vref[f.generator] = Vref0[f.generator] + f.amplitude * s;
        }
    };

    Eigen::MatrixXd G(2 * nb, 2 * nb);
    Eigen::VectorXd rhs(2 * nb);
    auto network = [&](const std::vector<MachineState>& xs) {
        G = Ybase;
        rhs.setZero();
        for (std::size_t l = 0; l < nl; ++l) {
            const std::complex<double> y = se.load_admittance[l] * (1.0 + ou[l]);
            const int b = sc.loads[l].bus;
            G(2 * b, 2 * b) += y.real();
            G(2 * b, 2 * b + 1) -= y.imag();
            G(2 * b + 1, 2 * b) += y.imag();
            G(2 * b + 1, 2 * b + 1) += y.real();
        }
        for (std::size_t g = 0; g < ng; ++g) {
            const NortonMap nm = norton_map(se.params[g], xs[g]);
            const int b = sc.generators[g].bus;
            G.block<2, 2>(2 * b, 2 * b) -= nm.M;
            rhs.segment<2>(2 * b) += nm.a;
        }
        const std::complex<double> Is = ys * se.source_emf * emf_scale;
        rhs(2 * sc.infinite_bus) += Is.real();
        rhs(2 * sc.infinite_bus + 1) += Is.imag();
        const Eigen::VectorXd v = G.partialPivLu().solve(rhs);
        std::vector<std::complex<double>> V(static_cast<std::size_t>(nb));
        for (int b = 0; b < nb; ++b) V[b] = {v(2 * b), v(2 * b + 1)};
        return V;
    };

    const int decim = static_cast<int>(std::llround(1.0 / (sc.fs * sc.dt)));
    const int half = (sc.antialias_taps - 1) / 2;
    const std::size_t N = sc.sample_count();
    const long long warm_steps = std::llround(sc.warmup / sc.dt);
    const long long first_rec = warm_steps - half;  // first fine step kept
    const long long last_rec = warm_steps + static_cast<long long>(N - 1) * decim + half;
    if (first_rec < 0) throw ConfigError("warm-up shorter than half the anti-alias filter");
    const long long hold_steps = std::max<long long>(1, std::llround(sc.infinite_noise_hold / sc.dt));

    std::vector<detail::FineRecord> rec(ng);
    for (auto& r : rec)
        for (auto& c : r.ch) c.reserve(static_cast<std::size_t>(last_rec - first_rec + 1));
    std::vector<double> coi_fine;
    coi_fine.reserve(static_cast<std::size_t>(last_rec - first_rec + 1));
    std::vector<double> prev_theta(ng), prev_phi(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        prev_theta[g] = se.machines[g].terminal.theta0;
        prev_phi[g] = se.machines[g].terminal.phi0;
    }
    double Hsum = 0.0;
    for (std::size_t g = 0; g < ng; ++g) Hsum += se.params[g].H;

    std::vector<double> Tm, Vref, Tm2, Vref2;
    std::vector<MachineState> k1(ng), xp(ng);
    const double dt = sc.dt;
    for (long long step = 0; step <= last_rec; ++step) {
        const double t = static_cast<double>(step) * dt;
        if (step % hold_steps == 0) emf_scale = 1.0 + sc.infinite_noise_std * normal(rng);
        setpoints(t, Tm, Vref);
        const auto V1 = network(x);
        if (step >= first_rec) {
            double coi = 0.0;
            for (std::size_t g = 0; g < ng; ++g) {
                const std::complex<double> Vb = V1[sc.generators[g].bus];
                const auto Ip = terminal_current(se.params[g], x[g], Vb);
                const double th = detail::unwrap_near(std::arg(Vb), prev_theta[g]);
                const double ph = detail::unwrap_near(Ip[1], prev_phi[g]);
                prev_theta[g] = th;
                prev_phi[g] = ph;
                rec[g].ch[kV].push_back(std::abs(Vb));
                rec[g].ch[kTheta].push_back(th);
                rec[g].ch[kI].push_back(Ip[0]);
                rec[g].ch[kPhi].push_back(ph);
                coi += se.params[g].H * x[g].x[0];
            }
            coi_fine.push_back(coi / Hsum);
        }
        if (step == last_rec) break;
        for (std::size_t g = 0; g < ng; ++g) {
            k1[g] = machine_rhs(se.params[g], x[g], V1[sc.generators[g].bus], Tm[g], Vref[g]);
            for (int i = 0; i < 4; ++i) xp[g].x[i] = x[g].x[i] + dt * k1[g].x[i];
        }
        setpoints(t + dt, Tm2, Vref2);
        const auto V2 = network(xp);
        for (std::size_t g = 0; g < ng; ++g) {
            const MachineState k2 = machine_rhs(se.params[g], xp[g], V2[sc.generators[g].bus], Tm2[g], Vref2[g]);
            for (int i = 0; i < 4; ++i) x[g].x[i] += 0.5 * dt * (k1[g].x[i] + k2.x[i]);
            for (int i = 0; i < 4; ++i) {
                if (!std::isfinite(x[g].x[i])) throw IntegrationDiverged("non-finite state at t=" + std::to_string(t));
            }
            if (std::abs(x[g].x[1] - 1.0) > 0.2) throw IntegrationDiverged("speed excursion at t=" + std::to_string(t));
        }
        for (std::size_t l = 0; l < nl; ++l) {
            const auto& L = sc.loads[l];
            ou[l] = ou_step(ou[l], L.ou_theta, L.ou_sigma, dt, normal(rng));
        }
    }

    const std::vector<double> h = lowpass_fir(sc.antialias_cutoff_hz, 1.0 / dt, sc.antialias_taps);
    auto decimate = [&](const std::vector<double>& fine) {
        std::vector<double> out(N);
        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t c = static_cast<std::size_t>(half) + k * static_cast<std::size_t>(decim);
            double acc = 0.0;
            for (int j = 0; j < sc.antialias_taps; ++j) acc += h[j] * fine[c + j - half];
            out[k] = acc;
        }
        return out;
    };

    LabeledDataset ds;
    ds.fs = sc.fs;
    std::vector<double> t(N);
    for (std::size_t k = 0; k < N; ++k) t[k] = static_cast<double>(k) / sc.fs;
    for (std::size_t g = 0; g < ng; ++g) {
        PmuWindow w;
        w.fs = sc.fs;
        w.t = t;
        for (int c = 0; c < 4; ++c) w.ch[c] = decimate(rec[g].ch[c]);
        const auto& op = se.machines[g].terminal;
        w.steady_state = {op.V0, op.theta0, op.I0, op.phi0};
        ds.names.push_back(sc.generators[g].name);
        ds.clean.push_back(w);
        ds.truth.push_back(se.params[g]);
        ds.operating_points.push_back(op);
    }
    ds.coi_angle = decimate(coi_fine);
    ds.noisy = ds.clean;
    ds.noise_var.assign(ng, {0.0, 0.0, 0.0, 0.0});
    for (const auto& f : sc.forcings) ds.labels.push_back({f.generator, f.channel, f.freq_hz, f.amplitude});
    return ds;
}

inline bool angle_channel(int c) { return c == kTheta || c == kPhi; }

/// Mean-square deviation of a channel from its window mean. Angles are first
/// referenced to the COI angle when `coi` is given.
inline double deviation_power(const std::vector<double>& x, const std::vector<double>* coi)
{
    const std::size_t n = x.size();
    std::vector<double> v(x);
    if (coi && coi->size() == n)
        for (std::size_t k = 0; k < n; ++k) v[k] -= (*coi)[k];
    double mean = 0.0;
    for (double e : v) mean += e;
    mean /= static_cast<double>(n);
    double p = 0.0;
    for (double e : v) p += (e - mean) * (e - mean);
    return p / static_cast<double>(n);
}

/// Adds IID Gaussian noise per channel so that signal power / noise power
/// equals 10^(snr_db/10). The signal is the deviation from steady state, with
/// angle channels referenced to the COI angle before their power is measured.
/// An infinite SNR leaves the data untouched.
inline void add_pmu_noise(LabeledDataset& ds, double snr_db, std::uint64_t seed)
{
    ds.noisy = ds.clean;
    ds.noise_var.assign(ds.clean.size(), {0.0, 0.0, 0.0, 0.0});
    if (std::isinf(snr_db) && snr_db > 0.0) return;
    if (!std::isfinite(snr_db)) throw ConfigError("SNR must be finite or +inf");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x504d55u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double ratio = std::pow(10.0, snr_db / 10.0);
    for (std::size_t g = 0; g < ds.clean.size(); ++g) {
        const PmuWindow& w = ds.clean[g];
        for (int c = 0; c < 4; ++c) {
            const double p = deviation_power(w.ch[c], angle_channel(c) ? &ds.coi_angle : nullptr);
            const double var = p / ratio;
            ds.noise_var[g][c] = var;
            const double sd = std::sqrt(var);
            for (double& v : ds.noisy[g].ch[c]) v += sd * normal(rng);
        }
    }
}

/// Empirical SNR (dB) of one channel given clean and noisy samples.
inline double empirical_snr_db(const std::vector<double>& clean, const std::vector<double>& noisy,
                               const std::vector<double>* coi = nullptr)
{
    double pn = 0.0;
    for (std::size_t k = 0; k < clean.size(); ++k) pn += (noisy[k] - clean[k]) * (noisy[k] - clean[k]);
    pn /= static_cast<double>(clean.size());
    return 10.0 * std::log10(deviation_power(clean, coi) / pn);
}

/// Multiplies every free parameter by (1 + u/100), u ~ U(lo, hi).
inline GeneratorParams perturb_params(const GeneratorParams& truth, double lo_pct, double hi_pct, std::uint64_t seed)
{
    if (!(lo_pct > -100.0) || hi_pct < lo_pct) throw ConfigError("perturbation range must lie in (-100, inf)");
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x9e37u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> U(lo_pct, hi_pct);
    GeneratorParams p = truth;
    for (Param k : free_params(truth.model)) {
        const double u = lo_pct == hi_pct ? lo_pct : U(rng);
        p[k] = truth[k] * (1.0 + u / 100.0);
    }
    return p;
}

// --------------------------------------------------------------------------
// Periodic small-signal synthesis

namespace detail {

/// d[x; y] / d[mag; ang] at a phasor of magnitude m and angle a.
inline Eigen::Matrix2d polar_to_rect(double m, double a)
{
    Eigen::Matrix2d R;
    R << std::cos(a), -m * std::sin(a), std::sin(a), m * std::cos(a);
    return R;
}

/// Real samples whose single-sided DFT on bins 0..K equals X.
inline std::vector<double> periodic_samples(const std::vector<std::complex<double>>& X, double offset)
{
    const std::size_t K = X.size() - 1;
    const std::size_t N = 2 * K + 1;
    std::vector<std::complex<double>> full(N);
    full[0] = X[0];
    for (std::size_t w = 1; w <= K; ++w) {
        full[w] = X[w];
        full[N - w] = std::conj(X[w]);
    }
    std::vector<double> x(N);
    fftw_plan plan;
    std::vector<std::complex<double>> in(full);
    std::vector<std::complex<double>> out(N);
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_1d(static_cast<int>(N), reinterpret_cast<fftw_complex*>(in.data()),
                                reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    for (std::size_t n = 0; n < N; ++n) x[n] = out[n].real() / static_cast<double>(N) + offset;
    return x;
}

} // namespace detail

/// Noise-free linear data: the source EMF magnitude is excited with random
/// spectra of per-bin std `amplitude` and the linearized network is solved bin
/// by bin, so every generator satisfies I~ = Y V~ to rounding. No forcing.
inline LabeledDataset synthesize_small_signal(const SimScenario& sc, double amplitude, std::uint64_t seed)
{
    const ScenarioEquilibrium se = scenario_equilibrium(sc);
    const int nb = sc.n_bus;
    const std::size_t ng = sc.generators.size();
    const std::size_t N = sc.sample_count();
    const int K = static_cast<int>(N - 1) / 2;
    const std::vector<double> grid = frequency_grid(K, sc.fs);

    Eigen::MatrixXcd Yc = ybus(nb, sc.branches);
    const std::complex<double> ys = 1.0 / std::complex<double>(0.0, sc.source_reactance);
    Yc(sc.infinite_bus, sc.infinite_bus) += ys;
    for (std::size_t l = 0; l < sc.loads.size(); ++l) Yc(sc.loads[l].bus, sc.loads[l].bus) += se.load_admittance[l];
    const Eigen::MatrixXcd Ybase = realify(Yc).cast<std::complex<double>>();

    std::vector<Frf> Y(ng);
    std::vector<Eigen::Matrix2d> RV(ng), RI(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        Y[g] = frf(linearize(se.params[g], se.machines[g]), grid);
        const auto& op = se.machines[g].terminal;
        RV[g] = detail::polar_to_rect(op.V0, op.theta0);
        RI[g] = detail::polar_to_rect(op.I0, op.phi0);
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double ea = std::arg(se.source_emf);
    const Eigen::Vector2d edir(std::cos(ea), std::sin(ea));
    const Eigen::Matrix2d ys_r = realify(Eigen::MatrixXcd::Constant(1, 1, ys));

    std::vector<std::array<std::vector<std::complex<double>>, 4>> X(ng);
    for (auto& a : X)
        for (auto& c : a) c.assign(static_cast<std::size_t>(K) + 1, {0.0, 0.0});
    for (int w = 1; w <= K; ++w) {
        const std::complex<double> dE(amplitude * normal(rng), amplitude * normal(rng));
        Eigen::MatrixXcd A = Ybase;
        std::vector<Eigen::Matrix2cd> Yrect(ng);
        for (std::size_t g = 0; g < ng; ++g) {
            const Eigen::Matrix2cd Rv = RV[g].cast<std::complex<double>>();
            Yrect[g] = RI[g].cast<std::complex<double>>() * Y[g].Y[w] * Rv.inverse();
            const int b = sc.generators[g].bus;
            A.block<2, 2>(2 * b, 2 * b) -= Yrect[g];
        }
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(2 * nb);
        rhs.segment<2>(2 * sc.infinite_bus) = (ys_r * edir).cast<std::complex<double>>() * (dE * std::abs(se.source_emf));
        const Eigen::VectorXcd dV = A.partialPivLu().solve(rhs);
        for (std::size_t g = 0; g < ng; ++g) {
            const int b = sc.generators[g].bus;
            const Eigen::Vector2cd vp = RV[g].cast<std::complex<double>>().inverse() * dV.segment<2>(2 * b);
            const Eigen::Vector2cd ip = Y[g].Y[w] * vp;
            X[g][kV][w] = vp(0);
            X[g][kTheta][w] = vp(1);
            X[g][kI][w] = ip(0);
            X[g][kPhi][w] = ip(1);
        }
    }

    LabeledDataset ds;
    ds.fs = sc.fs;
    std::vector<double> t(N);
    for (std::size_t k = 0; k < N; ++k) t[k] = static_cast<double>(k) / sc.fs;
    double Hsum = 0.0;
    for (const auto& p : se.params) Hsum += p.H;
    ds.coi_angle.assign(N, 0.0);
    for (std::size_t g = 0; g < ng; ++g) {
        const auto& op = se.machines[g].terminal;
        PmuWindow win;
        win.fs = sc.fs;
        win.t = t;
        const std::array<double, 4> ss{op.V0, op.theta0, op.I0, op.phi0};
        for (int c = 0; c < 4; ++c) win.ch[c] = detail::periodic_samples(X[g][c], ss[c]);
        win.steady_state = ss;
        for (std::size_t k = 0; k < N; ++k) ds.coi_angle[k] += se.params[g].H * se.machines[g].delta / Hsum;
        ds.names.push_back(sc.generators[g].name);
        ds.clean.push_back(win);
        ds.truth.push_back(se.params[g]);
        ds.operating_points.push_back(op);
    }
    ds.noisy = ds.clean;
    ds.noise_var.assign(ng, {0.0, 0.0, 0.0, 0.0});
    return ds;
}

} // namespace fosl
