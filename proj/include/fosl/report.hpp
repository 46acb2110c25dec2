#pragma once

// Human-readable rendering of a location report and the plot-data CSVs.
// Everything here works on the serialized report so that a saved report is
// enough to regenerate the tables and figures.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fosl/io.hpp"

namespace fosl {

namespace detail {

inline Eigen::Vector2cd pair_from_json(const json& a)
{
    return {std::complex<double>(a.at(0).get<double>(), a.at(1).get<double>()),
            std::complex<double>(a.at(2).get<double>(), a.at(3).get<double>())};
}

inline std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace detail

inline std::string render_report_table(const json& rep)
{
    std::ostringstream os;
    os << "iota = " << detail::fmt("%.4g", rep.at("iota").get<double>());
    if (rep.contains("lambda0")) os << "   lambda0 = " << rep.at("lambda0").get<double>();
    os << "   all converged: " << (rep.at("all_converged").get<bool>() ? "yes" : "no") << "\n";
    for (const auto& b : rep.at("bands")) {
        os << "band " << detail::fmt("%.4f", b.at("freq_hz").get<double>()) << " Hz +/- "
           << detail::fmt("%.4f", b.at("half_width_hz").get<double>()) << " Hz (" << b.at("bins").size() << " bins)\n";
    }
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-8s %-10s %-10s %-19s %-12s %s\n", "generator", "status", "stage1", "stage2",
                  "pred.err prior>s1", "max|I|", "source");
    os << line;
    for (const auto& g : rep.at("generators")) {
        const auto& s1 = g.at("stage1");
        const auto& s2 = g.at("stage2");
        const auto& pe = g.at("prediction_error_median");
        auto stage = [](const json& s) {
            return std::string(s.at("converged").get<bool>() ? "ok" : "NC") + "/" + std::to_string(s.at("iterations").get<int>());
        };
        std::snprintf(line, sizeof line, "%-10s %-8s %-10s %-10s %8.3f > %-8.3f %-12.4g %s\n",
                      g.at("name").get<std::string>().c_str(), g.at("ok").get<bool>() ? "ok" : "FAILED", stage(s1).c_str(),
                      stage(s2).c_str(), pe.at("prior").get<double>(), pe.at("stage1").get<double>(),
                      g.at("inf_norm").get<double>(), g.at("source").get<bool>() ? "YES" : "no");
        os << line;
        if (g.contains("error")) os << "    error: " << g.at("error").get<std::string>() << "\n";
    }
    os << "sources:";
    if (rep.at("sources").empty()) os << " none";
    for (const auto& s : rep.at("sources")) os << " " << s.get<std::string>();
    os << "\n";
    return os.str();
}

/// Writes spectra_<gen>.csv (measured vs predicted current spectra),
/// injections.csv (per-bin norms) and prediction_error.csv into `dir`.
inline void write_figure_csvs(const json& rep, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream f(dir / name);
        if (!f) throw Error("cannot write " + (dir / name).string());
        f.precision(10);
        return f;
    };
    auto inj = open("injections.csv");
    inj << "generator,bin,freq_hz,norm,source\n";
    auto pe = open("prediction_error.csv");
    pe << "generator,prior_median_pct,stage1_median_pct\n";
    for (const auto& g : rep.at("generators")) {
        const auto name = g.at("name").get<std::string>();
        std::map<std::size_t, double> freq;
        auto sp = open("spectra_" + name + ".csv");
        sp << "freq_hz,in_band,I_measured,I_prior,I_stage1,phi_measured,phi_prior,phi_stage1,err_prior_pct,err_stage1_pct\n";
        for (const auto& c : g.at("spectra")) {
            const auto m = detail::pair_from_json(c.at("measured"));
            const auto a = detail::pair_from_json(c.at("predicted_prior"));
            const auto b = detail::pair_from_json(c.at("predicted_post"));
            const double f = c.at("freq_hz").get<double>();
            freq[c.at("bin").get<std::size_t>()] = f;
            sp << f << ',' << (c.at("in_band").get<bool>() ? 1 : 0) << ',' << std::abs(m(0)) << ',' << std::abs(a(0)) << ','
               << std::abs(b(0)) << ',' << std::abs(m(1)) << ',' << std::abs(a(1)) << ',' << std::abs(b(1)) << ','
               << prediction_error_pct(m, a) << ',' << prediction_error_pct(m, b) << '\n';
        }
        for (const auto& row : g.at("injections")) {
            const auto bin = row.at("bin").get<std::size_t>();
            const auto it = freq.find(bin);
            inj << name << ',' << bin << ',' << (it == freq.end() ? 0.0 : it->second) << ',' << row.at("norm").get<double>()
                << ',' << (g.at("source").get<bool>() ? 1 : 0) << '\n';
        }
        const auto& med = g.at("prediction_error_median");
        pe << name << ',' << med.at("prior").get<double>() << ',' << med.at("stage1").get<double>() << '\n';
    }
}

} // namespace fosl
