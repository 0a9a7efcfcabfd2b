#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "noqs/vmc.hpp"

namespace noqs {

// Observable trajectory for one protocol: per-site <X>, <Z>, per-bond <ZZ>,
// and energy per site with standard errors (zero for exact rows).
struct TrajectoryRow {
    double t = 0;
    double x = 0, x_err = 0;
    double zz = 0, zz_err = 0;
    double z = 0, z_err = 0;
    double e = 0, e_err = 0;
};

struct TrajectoryReport {
    std::map<std::string, std::string> meta;
    std::vector<TrajectoryRow> rows;

    void sort_rows() {
        std::sort(rows.begin(), rows.end(),
                  [](const TrajectoryRow& a, const TrajectoryRow& b) { return a.t < b.t; });
    }
};

inline void write_report(std::ostream& os, const TrajectoryReport& r) {
    os << "# format=noqs-report-v1\n";
    for (const auto& [k, v] : r.meta) os << "# " << k << "=" << v << "\n";
    os << "# columns=t x x_err zz zz_err z z_err e e_err\n";
    for (const auto& row : r.rows)
        os << detail::fmt17(row.t) << " " << detail::fmt17(row.x) << " " << detail::fmt17(row.x_err)
           << " " << detail::fmt17(row.zz) << " " << detail::fmt17(row.zz_err) << " "
           << detail::fmt17(row.z) << " " << detail::fmt17(row.z_err) << " "
           << detail::fmt17(row.e) << " " << detail::fmt17(row.e_err) << "\n";
}

inline void write_report(const std::string& path, const TrajectoryReport& r) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    write_report(os, r);
    if (!os) throw io_error("write failed: " + path);
}

inline TrajectoryReport read_report(std::istream& is) {
    TrajectoryReport r;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = detail::trim_ws(line.substr(1, eq - 1));
            if (key != "format" && key != "columns") r.meta[key] = line.substr(eq + 1);
            continue;
        }
        std::stringstream ss(line);
        TrajectoryRow row;
        if (!(ss >> row.t >> row.x >> row.x_err >> row.zz >> row.zz_err >> row.z >> row.z_err >>
              row.e >> row.e_err))
            throw io_error("malformed report row: " + line);
        r.rows.push_back(row);
    }
    r.sort_rows();
    return r;
}

inline TrajectoryReport read_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open report file: " + path);
    return read_report(is);
}

// Sampled model trajectory at the given times.
inline TrajectoryReport evaluate_trajectory(const Model& m, const Protocol& protocol,
                                            const std::vector<double>& times, int n_samples,
                                            std::uint64_t seed) {
    TrajectoryReport r;
    r.meta["source"] = "model";
    r.meta["n_samples"] = std::to_string(n_samples);
    r.meta["lattice"] = std::to_string(m.lat.lx) + "x" + std::to_string(m.lat.ly);
    for (std::size_t k = 0; k < times.size(); ++k) {
        Rng rng = Rng::substream(seed, {11, static_cast<std::uint64_t>(k)});
        auto est = estimate_observables(m, protocol, times[k], n_samples, rng);
        TrajectoryRow row;
        row.t = times[k];
        row.x = est.sx;
        row.x_err = est.sx_err;
        row.zz = est.szz;
        row.zz_err = est.szz_err;
        row.z = est.sz;
        row.z_err = est.sz_err;
        row.e = est.energy;
        row.e_err = est.energy_err;
        r.rows.push_back(row);
    }
    r.sort_rows();
    return r;
}

// Exact trajectory from dense propagation (small systems).
inline TrajectoryReport oracle_trajectory(const Lattice& lat, const HamiltonianSpec& ham,
                                          const Protocol& protocol, const StateVector& psi0,
                                          const std::vector<double>& times, double tol = 1e-9) {
    OracleWorkspace ws(lat, ham);
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    auto prop = propagate(ws, protocol, psi0, sorted, tol);
    TrajectoryReport r;
    r.meta["source"] = "oracle";
    r.meta["lattice"] = std::to_string(lat.lx) + "x" + std::to_string(lat.ly);
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        auto obs = measure(ws, prop.states[k], protocol.hx_at(sorted[k]), protocol.hz_at(sorted[k]));
        TrajectoryRow row;
        row.t = sorted[k];
        row.x = obs.sx;
        row.zz = obs.szz;
        row.z = obs.sz;
        row.e = obs.energy;
        r.rows.push_back(row);
    }
    return r;
}

struct ObservableMetrics {
    double mae = 0;
    double max_abs = 0;
};

struct CompareMetrics {
    ObservableMetrics x, zz, z, e;
    int n_shared = 0;

    double worst_mae() const {
        return std::max(std::max(x.mae, zz.mae), std::max(z.mae, e.mae));
    }
};

// Aligns two reports on shared times (within a small tolerance) and computes
// per-observable deviation metrics.
inline CompareMetrics compare_reports(const TrajectoryReport& a, const TrajectoryReport& b,
                                      double t_tol = 1e-9) {
    CompareMetrics m;
    auto acc = [](ObservableMetrics& om, double d) {
        om.mae += std::abs(d);
        om.max_abs = std::max(om.max_abs, std::abs(d));
    };
    for (const auto& ra : a.rows) {
        const TrajectoryRow* match = nullptr;
        for (const auto& rb : b.rows)
            if (std::abs(rb.t - ra.t) <= t_tol) {
                match = &rb;
                break;
            }
        if (!match) continue;
        ++m.n_shared;
        acc(m.x, ra.x - match->x);
        acc(m.zz, ra.zz - match->zz);
        acc(m.z, ra.z - match->z);
        acc(m.e, ra.e - match->e);
    }
    if (m.n_shared == 0) throw config_error("reports share no time points");
    m.x.mae /= m.n_shared;
    m.zz.mae /= m.n_shared;
    m.z.mae /= m.n_shared;
    m.e.mae /= m.n_shared;
    return m;
}

// Fraction of the discrete spectrum energy of a uniformly sampled profile at
// modes above cutoff_mode (DC excluded). Used to detect grid-scale artifacts
// after temporal super-resolution.
inline double high_frequency_energy_fraction(const std::vector<double>& values, int cutoff_mode) {
    const int n = static_cast<int>(values.size());
    if (n < 4) throw config_error("profile too short for a spectral test");
    const int n_half = n / 2;
    auto spec = dft_truncated(values, n_half + 1);
    double total = 0, high = 0;
    for (int k = 1; k <= n_half; ++k) {
        const double w = (k == n_half && n % 2 == 0) ? 1.0 : 2.0;
        const double e = w * std::norm(spec[k]);
        total += e;
        if (k > cutoff_mode) high += e;
    }
    return total > 0 ? high / total : 0.0;
}

inline void write_metrics(std::ostream& os, const CompareMetrics& m) {
    os << "n_shared=" << m.n_shared << "\n";
    os << "x.mae=" << detail::fmt17(m.x.mae) << "\nx.max_abs=" << detail::fmt17(m.x.max_abs) << "\n";
    os << "zz.mae=" << detail::fmt17(m.zz.mae) << "\nzz.max_abs=" << detail::fmt17(m.zz.max_abs)
       << "\n";
    os << "z.mae=" << detail::fmt17(m.z.mae) << "\nz.max_abs=" << detail::fmt17(m.z.max_abs) << "\n";
    os << "e.mae=" << detail::fmt17(m.e.mae) << "\ne.max_abs=" << detail::fmt17(m.e.max_abs) << "\n";
}

} // namespace noqs
