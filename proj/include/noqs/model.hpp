#pragma once

#include <complex>

#include "noqs/ansatz.hpp"
#include "noqs/lattice.hpp"
#include "noqs/neural_operator.hpp"
#include "noqs/oracle.hpp"

namespace noqs {

// The full protocol-conditioned wavefunction: operator + ansatz + lattice.
struct Model {
    Lattice lat;
    HamiltonianSpec ham;
    TransformerConfig wf;
    FNOConfig op;
    ParamStore params;

    static Model create(const Lattice& lat, const TransformerConfig& wf_cfg,
                        const FNOConfig& op_cfg, std::uint64_t seed) {
        if (wf_cfg.n_sites != lat.n) throw config_error("ansatz size does not match lattice");
        if (op_cfg.d_e != wf_cfg.d_e)
            throw config_error("operator token width does not match ansatz embedding width");
        Model m;
        m.lat = lat;
        m.wf = wf_cfg;
        m.op = op_cfg;
        Rng wr = Rng::substream(seed, {1});
        init_wavefunction_params(m.params, wf_cfg, wr);
        Rng orr = Rng::substream(seed, {2});
        init_operator_params(m.params, op_cfg, orr);
        return m;
    }

    LogPsiValues log_psi(const Protocol& protocol, double t, const std::vector<SpinConfig>& configs,
                         bool with_dt = false) const {
        TokenValues tok = evaluate_tokens(params, op, protocol, t);
        return evaluate_log_psi(params, wf, tok.m, with_dt ? &tok.m_dot : nullptr, configs);
    }

    std::vector<SpinConfig> sample(const Protocol& protocol, double t, int m, Rng& rng) const {
        TokenValues tok = evaluate_tokens(params, op, protocol, t);
        return sample_configs(params, wf, tok.m, m, rng);
    }
};

// Dense model wavefunction over the full basis (small systems only). The
// autoregressive construction normalizes it by design.
inline StateVector model_state(const Model& m, const Protocol& protocol, double t) {
    if (m.lat.n > kOracleMaxSites) throw config_error("model_state: system too large");
    const Eigen::Index dim = Eigen::Index(1) << m.lat.n;
    std::vector<SpinConfig> configs;
    configs.reserve(dim);
    for (Eigen::Index k = 0; k < dim; ++k) configs.push_back(decode_config(k, m.lat.n));
    auto v = m.log_psi(protocol, t, configs);
    StateVector psi(dim);
    for (Eigen::Index k = 0; k < dim; ++k) psi(k) = std::exp(v.log_psi[k]);
    return psi;
}

inline double fidelity(const StateVector& a, const StateVector& b) {
    return std::norm(a.dot(b)) / (a.squaredNorm() * b.squaredNorm());
}

} // namespace noqs
