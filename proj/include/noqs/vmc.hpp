#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <vector>

#include "noqs/model.hpp"

namespace noqs {

// Log-ratio clamp for off-diagonal terms exp(log psi(sigma') - log psi(sigma));
// keeps rare tiny-amplitude samples from overflowing the estimator.
inline constexpr double kLogRatioClamp = 30.0;

// Shared evaluation set for a batch of samples: the distinct sampled
// configurations plus all their single-spin flips, each evaluated once.
struct UniqueBatch {
    std::vector<SpinConfig> configs;        // what to evaluate
    std::vector<int> sample_unique;         // sample -> ordinal of its distinct config
    std::vector<int> unique_pos;            // distinct-sample ordinal -> index in configs
    std::vector<std::vector<int>> flip_pos; // distinct-sample ordinal -> flip indices in configs
    std::vector<int> unique_count;          // multiplicity of each distinct sample
};

inline UniqueBatch build_unique_batch(const Lattice& lat, const std::vector<SpinConfig>& samples) {
    UniqueBatch b;
    std::map<std::uint64_t, int> pos;    // encoded config -> index in b.configs
    std::map<std::uint64_t, int> uniq;   // encoded sample -> distinct ordinal
    auto intern = [&](const SpinConfig& s) {
        const auto key = encode_config(s);
        auto it = pos.find(key);
        if (it != pos.end()) return it->second;
        const int idx = static_cast<int>(b.configs.size());
        b.configs.push_back(s);
        pos.emplace(key, idx);
        return idx;
    };
    b.sample_unique.reserve(samples.size());
    for (const auto& s : samples) {
        const auto key = encode_config(s);
        auto it = uniq.find(key);
        if (it == uniq.end()) {
            const int u = static_cast<int>(b.unique_pos.size());
            uniq.emplace(key, u);
            b.unique_pos.push_back(intern(s));
            b.unique_count.push_back(1);
            std::vector<int> flips(lat.n);
            for (int i = 0; i < lat.n; ++i) {
                SpinConfig f = s;
                f[i] = -f[i];
                flips[i] = intern(f);
            }
            b.flip_pos.push_back(std::move(flips));
            b.sample_unique.push_back(u);
        } else {
            b.unique_count[it->second]++;
            b.sample_unique.push_back(it->second);
        }
    }
    return b;
}

struct LocalStats {
    std::vector<std::complex<double>> e_loc;    // per sample
    std::vector<std::complex<double>> residual; // per sample: i dlogpsi/dt - E_loc
    bool has_residual = false;
    long clamp_count = 0;
};

// E_loc(sigma) = E_diag(sigma) + h_x sum_i psi(sigma^i)/psi(sigma), evaluated
// with one network pass over the deduplicated configuration set.
inline LocalStats compute_local_stats(const Model& m, const Protocol& protocol, double t,
                                      const std::vector<SpinConfig>& samples, bool with_dt) {
    const double hx = protocol.hx_at(t), hz = protocol.hz_at(t);
    UniqueBatch b = build_unique_batch(m.lat, samples);
    auto v = m.log_psi(protocol, t, b.configs, with_dt);

    LocalStats out;
    out.has_residual = with_dt;
    const std::complex<double> iu(0.0, 1.0);
    std::vector<std::complex<double>> e_unique(b.unique_pos.size());
    for (std::size_t u = 0; u < b.unique_pos.size(); ++u) {
        const int p = b.unique_pos[u];
        std::complex<double> e = diagonal_energy(m.lat, m.ham, b.configs[p], hz);
        for (int i = 0; i < m.lat.n; ++i) {
            std::complex<double> d = v.log_psi[b.flip_pos[u][i]] - v.log_psi[p];
            if (d.real() > kLogRatioClamp || d.real() < -kLogRatioClamp) {
                d.real(std::clamp(d.real(), -kLogRatioClamp, kLogRatioClamp));
                ++out.clamp_count;
            }
            e += hx * std::exp(d);
        }
        e_unique[u] = e;
    }
    out.e_loc.reserve(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const int u = b.sample_unique[s];
        out.e_loc.push_back(e_unique[u]);
        if (with_dt) out.residual.push_back(iu * v.dlog_psi_dt[b.unique_pos[u]] - e_unique[u]);
    }
    return out;
}

struct EstimatedObservables {
    double sx = 0, sx_err = 0;
    double sy = 0, sy_err = 0;
    double sz = 0, sz_err = 0;
    double szz = 0, szz_err = 0;
    double energy = 0, energy_err = 0;
    double imag_diag = 0; // mean |Im| of the hermitian estimators; should be small
    int n_samples = 0;
};

namespace detail {

inline void mean_err(const std::vector<double>& xs, double& mean, double& err) {
    const double n = static_cast<double>(xs.size());
    mean = 0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    err = n > 1 ? std::sqrt(var / (n * (n - 1))) : 0.0;
}

} // namespace detail

// Monte-Carlo observables from exact i.i.d. samples of |psi|^2.
inline EstimatedObservables estimate_observables(const Model& m, const Protocol& protocol,
                                                 double t, int n_samples, Rng& rng) {
    const double hx = protocol.hx_at(t), hz = protocol.hz_at(t);
    auto samples = m.sample(protocol, t, n_samples, rng);
    UniqueBatch b = build_unique_batch(m.lat, samples);
    auto v = m.log_psi(protocol, t, b.configs, false);

    std::vector<double> sx, sy, sz, szz, en;
    double imag_acc = 0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const int u = b.sample_unique[s];
        const int p = b.unique_pos[u];
        const SpinConfig& sigma = b.configs[p];
        double zsum = 0;
        for (int x : sigma) zsum += x;
        double zzsum = 0;
        for (auto [i, j] : m.lat.bonds) zzsum += sigma[i] * sigma[j];
        std::complex<double> xloc(0, 0), yloc(0, 0);
        for (int i = 0; i < m.lat.n; ++i) {
            std::complex<double> d = v.log_psi[b.flip_pos[u][i]] - v.log_psi[p];
            d.real(std::clamp(d.real(), -kLogRatioClamp, kLogRatioClamp));
            const std::complex<double> ratio = std::exp(d);
            xloc += ratio;
            yloc += std::complex<double>(0, static_cast<double>(sigma[i])) * ratio;
        }
        sx.push_back(xloc.real() / m.lat.n);
        sy.push_back(yloc.real() / m.lat.n);
        sz.push_back(zsum / m.lat.n);
        szz.push_back(zzsum / m.lat.n_bonds());
        en.push_back((m.ham.j * zzsum + hz * zsum + hx * xloc.real()) / m.lat.n);
        imag_acc += std::abs(xloc.imag()) / m.lat.n;
    }
    EstimatedObservables o;
    o.n_samples = n_samples;
    detail::mean_err(sx, o.sx, o.sx_err);
    detail::mean_err(sy, o.sy, o.sy_err);
    detail::mean_err(sz, o.sz, o.sz_err);
    detail::mean_err(szz, o.szz, o.szz_err);
    detail::mean_err(en, o.energy, o.energy_err);
    o.imag_diag = imag_acc / n_samples;
    return o;
}

// Sample variance of the local residual: the Monte-Carlo TDVP objective.
inline double residual_variance(const std::vector<std::complex<double>>& residual) {
    const double n = static_cast<double>(residual.size());
    std::complex<double> mean(0, 0);
    for (const auto& r : residual) mean += r;
    mean /= n;
    double var = 0;
    for (const auto& r : residual) var += std::norm(r - mean);
    return var / n;
}

} // namespace noqs
