#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "noqs/bound_params.hpp"
#include "noqs/errors.hpp"
#include "noqs/fourier.hpp"
#include "noqs/protocol.hpp"
#include "noqs/rng.hpp"
#include "noqs/tape.hpp"

namespace noqs {

// Fourier neural operator mapping a driving protocol (h_x(t), h_z(t)) to
// context tokens M(t) for the wavefunction's cross-attention, together with
// the exact time derivative dM/dt obtained from the band-limited spectral
// representation of the last layer.
//
// Inputs are always resampled to the fixed reference grid the operator was
// built with, so the produced tokens do not depend on the discretization of
// the incoming protocol.
struct FNOConfig {
    int n_t = 100;      // reference grid points on [0, t_max]
    double t_max = 1.0;
    int l_f = 3;        // Fourier layers
    int d_v = 32;       // channel width
    int k_max = 32;     // retained modes
    int n_c = 2;        // context tokens
    int d_e = 32;       // token embedding width (must match the ansatz)

    // the lifted signal is zero-padded by 25% before the transform
    int n_pad() const { return n_t + static_cast<int>(std::ceil(0.25 * n_t)); }

    void validate() const {
        if (n_t < 4 || l_f < 1 || d_v < 1 || k_max < 1 || n_c < 1 || d_e < 1)
            throw config_error("operator dimensions must be positive (n_t >= 4)");
        if (t_max <= 0) throw config_error("t_max must be positive");
        if (k_max > n_pad() / 2)
            throw config_error("k_max must not exceed half the padded grid size");
    }

    TimeGrid grid() const { return TimeGrid{t_max, n_t}; }
    double dt() const { return t_max / (n_t - 1); }
    double padded_period() const { return n_pad() * dt(); }
};

inline void init_operator_params(ParamStore& ps, const FNOConfig& cfg, Rng& rng,
                                 double std_dev = 0.02) {
    cfg.validate();
    const int dv = cfg.d_v;
    ps.add_normal("op.lift.w", 2, dv, rng, std_dev);
    ps.add("op.lift.b", 1, dv);
    // spectral mixing weights scaled down to compensate the mode count
    const double spec_std = 1.0 / static_cast<double>(dv);
    for (int l = 0; l < cfg.l_f; ++l) {
        const std::string p = "op.l" + std::to_string(l) + ".";
        ps.add_normal(p + "rr", dv, dv, rng, spec_std);
        ps.add_normal(p + "ri", dv, dv, rng, spec_std);
        ps.add_normal(p + "ws", dv, dv, rng, std_dev);
        ps.add(p + "b", 1, dv);
    }
    ps.add_normal("op.proj.w1", dv, dv, rng, std_dev);
    ps.add("op.proj.b1", 1, dv);
    ps.add_normal("op.proj.w2", dv, cfg.n_c * cfg.d_e, rng, std_dev);
    ps.add("op.proj.b2", 1, cfg.n_c * cfg.d_e);
    ps.add_normal("op.m0", cfg.n_c, cfg.d_e, rng, std_dev);
}

namespace detail {

// Constant DFT/synthesis matrices on the padded grid, so every transform is
// an ordinary matrix product on the tape.
struct SpectralBasis {
    ad::Mat cfwd, sfwd; // (K x Np): Fr = cfwd * V, Fi = sfwd * V
    ad::Mat cinv, sinv; // (Np x K): grid synthesis X = cinv * Gr + sinv * Gi
    int np = 0;
    int k = 0;

    explicit SpectralBasis(const FNOConfig& cfg) {
        np = cfg.n_pad();
        k = cfg.k_max;
        cfwd.resize(k, np);
        sfwd.resize(k, np);
        cinv.resize(np, k);
        sinv.resize(np, k);
        for (int m = 0; m < k; ++m) {
            const double w = kTwoPi * m / np;
            const double amp = (m == 0 ? 1.0 : 2.0) / np;
            for (int j = 0; j < np; ++j) {
                cfwd(m, j) = std::cos(w * j);
                sfwd(m, j) = -std::sin(w * j);
                cinv(j, m) = amp * std::cos(w * j);
                sinv(j, m) = -amp * std::sin(w * j);
            }
        }
    }

    // synthesis rows for an arbitrary time, and their time derivatives
    void eval_rows(const FNOConfig& cfg, double t, ad::Mat& crow, ad::Mat& srow, ad::Mat& cdrow,
                   ad::Mat& sdrow) const {
        crow.resize(1, k);
        srow.resize(1, k);
        cdrow.resize(1, k);
        sdrow.resize(1, k);
        const double period = cfg.padded_period();
        for (int m = 0; m < k; ++m) {
            const double wk = kTwoPi * m / period;
            const double amp = (m == 0 ? 1.0 : 2.0) / np;
            crow(0, m) = amp * std::cos(wk * t);
            srow(0, m) = -amp * std::sin(wk * t);
            cdrow(0, m) = -amp * wk * std::sin(wk * t);
            sdrow(0, m) = -amp * wk * std::cos(wk * t);
        }
    }
};

// Lift + Fourier layers; returns the truncated spectrum (Ar, Ai) of the last
// layer output, each (K x d_v).
inline std::pair<ad::Node*, ad::Node*> operator_spectrum(ad::Tape& t, const BoundParams& bp,
                                                         const FNOConfig& cfg,
                                                         const SpectralBasis& basis,
                                                         const ad::Mat& fields_on_grid) {
    ad::Node* f = t.constant(fields_on_grid); // (n_t x 2)
    ad::Node* v = ad::add_rowbc(t, ad::matmul(t, f, bp["op.lift.w"]), bp["op.lift.b"]);
    v = ad::vconcat(t, v, t.constant(ad::Mat::Zero(basis.np - cfg.n_t, cfg.d_v)));
    ad::Node* cf = t.constant(basis.cfwd);
    ad::Node* sf = t.constant(basis.sfwd);
    ad::Node* ci = t.constant(basis.cinv);
    ad::Node* si = t.constant(basis.sinv);
    for (int l = 0; l < cfg.l_f; ++l) {
        const std::string p = "op.l" + std::to_string(l) + ".";
        ad::Node* fr = ad::matmul(t, cf, v);
        ad::Node* fi = ad::matmul(t, sf, v);
        ad::Node* gr = ad::sub(t, ad::matmul(t, fr, bp[p + "rr"]), ad::matmul(t, fi, bp[p + "ri"]));
        ad::Node* gi = ad::add(t, ad::matmul(t, fr, bp[p + "ri"]), ad::matmul(t, fi, bp[p + "rr"]));
        ad::Node* x = ad::add(t, ad::matmul(t, ci, gr), ad::matmul(t, si, gi));
        ad::Node* skip = ad::add_rowbc(t, ad::matmul(t, v, bp[p + "ws"]), bp[p + "b"]);
        v = ad::cw(t, ad::add(t, x, skip), ad::Cw::gelu);
    }
    return {ad::matmul(t, t.constant(basis.cfwd), v), ad::matmul(t, t.constant(basis.sfwd), v)};
}

inline ad::Node* project_tokens(ad::Tape& t, const BoundParams& bp, const FNOConfig& cfg,
                                ad::Node* v_at_t) {
    ad::Node* h = ad::cw(
        t, ad::add_rowbc(t, ad::matmul(t, v_at_t, bp["op.proj.w1"]), bp["op.proj.b1"]),
        ad::Cw::gelu);
    ad::Node* flat = ad::add_rowbc(t, ad::matmul(t, h, bp["op.proj.w2"]), bp["op.proj.b2"]);
    return ad::reshape_rowvec(t, flat, cfg.n_c, cfg.d_e);
}

} // namespace detail

// Reusable per-protocol state: the spectrum is built once per tape, then
// tokens can be read out at many times cheaply.
class OperatorContext {
public:
    OperatorContext(ad::Tape& t, const BoundParams& bp, const FNOConfig& cfg,
                    const Protocol& protocol)
        : tape_(&t), bp_(&bp), cfg_(cfg), basis_(cfg) {
        cfg_.validate();
        Protocol on_ref = resample(protocol, cfg_.grid());
        ad::Mat fields(cfg_.n_t, 2);
        for (int j = 0; j < cfg_.n_t; ++j) {
            fields(j, 0) = on_ref.hx[j];
            fields(j, 1) = on_ref.hz[j];
        }
        auto [ar, ai] = detail::operator_spectrum(t, bp, cfg_, basis_, fields);
        ar_ = ar;
        ai_ = ai;
        // the token offset at t = 0, evaluated without a tangent so that the
        // initial-condition correction stays constant in time
        mtilde0_ = detail::project_tokens(t, bp, cfg_, value_row(0.0));
    }

    // Context tokens M(t) = m0 + Mtilde(t) - Mtilde(0); carries dM/dt as
    // tangent when with_dt is set.
    ad::Node* tokens(double t_eval, bool with_dt) {
        ad::Tape& t = *tape_;
        ad::Node* v = value_row(t_eval);
        if (with_dt) v = ad::dualize(t, v, deriv_row(t_eval));
        ad::Node* mt = detail::project_tokens(t, *bp_, cfg_, v);
        return ad::add(t, (*bp_)["op.m0"], ad::sub(t, mt, mtilde0_));
    }

private:
    ad::Node* value_row(double t_eval) {
        ad::Mat c, s, cd, sd;
        basis_.eval_rows(cfg_, t_eval, c, s, cd, sd);
        ad::Tape& t = *tape_;
        return ad::add(t, ad::matmul(t, t.constant(c), ar_), ad::matmul(t, t.constant(s), ai_));
    }
    ad::Node* deriv_row(double t_eval) {
        ad::Mat c, s, cd, sd;
        basis_.eval_rows(cfg_, t_eval, c, s, cd, sd);
        ad::Tape& t = *tape_;
        return ad::add(t, ad::matmul(t, t.constant(cd), ar_), ad::matmul(t, t.constant(sd), ai_));
    }

    ad::Tape* tape_;
    const BoundParams* bp_;
    FNOConfig cfg_;
    detail::SpectralBasis basis_;
    ad::Node* ar_ = nullptr;
    ad::Node* ai_ = nullptr;
    ad::Node* mtilde0_ = nullptr;
};

// Value-only convenience: tokens and (optionally) their time derivative.
struct TokenValues {
    ad::Mat m;
    ad::Mat m_dot;
};

inline TokenValues evaluate_tokens(const ParamStore& ps, const FNOConfig& cfg,
                                   const Protocol& protocol, double t_eval) {
    ad::Tape t;
    t.grad_enabled = false;
    BoundParams bp = bind(t, ps, false);
    OperatorContext ctx(t, bp, cfg, protocol);
    ad::Node* m = ctx.tokens(t_eval, true);
    return TokenValues{m->val, m->dot};
}

} // namespace noqs
