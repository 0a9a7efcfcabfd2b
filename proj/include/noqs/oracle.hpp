#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "noqs/errors.hpp"
#include "noqs/lattice.hpp"
#include "noqs/protocol.hpp"

namespace noqs {

using StateVector = Eigen::VectorXcd;

// Exact reference propagation of the driven transverse-field Ising model.
// Basis index bit i set <=> spin at autoregressive position i is +1, matching
// encode_config. Intended for small systems; the applier is matrix-free.
inline constexpr int kOracleMaxSites = 14;

inline StateVector initial_state_plus(int n) {
    const Eigen::Index dim = Eigen::Index(1) << n;
    return StateVector::Constant(dim, std::complex<double>(std::pow(2.0, -0.5 * n), 0.0));
}

inline StateVector initial_state_up(int n) {
    const Eigen::Index dim = Eigen::Index(1) << n;
    StateVector psi = StateVector::Zero(dim);
    psi(dim - 1) = 1.0;
    return psi;
}

// Precomputed diagonal structure of the lattice Hamiltonian.
struct OracleWorkspace {
    Lattice lat;
    HamiltonianSpec spec;
    Eigen::VectorXd zz;  // sum over bonds of s_i s_j per basis state
    Eigen::VectorXd mag; // sum of s_i per basis state

    OracleWorkspace(const Lattice& lattice, const HamiltonianSpec& hspec)
        : lat(lattice), spec(hspec) {
        if (lat.n > kOracleMaxSites)
            throw config_error("oracle limited to " + std::to_string(kOracleMaxSites) + " sites");
        const Eigen::Index dim = Eigen::Index(1) << lat.n;
        zz.resize(dim);
        mag.resize(dim);
        for (Eigen::Index idx = 0; idx < dim; ++idx) {
            double z = 0, m = 0;
            for (auto [i, j] : lat.bonds)
                z += (((idx >> i) ^ (idx >> j)) & 1) ? -1.0 : 1.0;
            for (int i = 0; i < lat.n; ++i) m += ((idx >> i) & 1) ? 1.0 : -1.0;
            zz(idx) = z;
            mag(idx) = m;
        }
    }

    Eigen::Index dim() const { return Eigen::Index(1) << lat.n; }

    // out = H(hx, hz) in
    void apply(double hx, double hz, const StateVector& in, StateVector& out) const {
        out = ((spec.j * zz.array() + hz * mag.array()) * in.array()).matrix();
        for (int i = 0; i < lat.n; ++i) {
            const Eigen::Index bit = Eigen::Index(1) << i;
            for (Eigen::Index idx = 0; idx < dim(); ++idx) out(idx) += hx * in(idx ^ bit);
        }
    }

    Eigen::MatrixXcd dense(double hx, double hz) const {
        const Eigen::Index d = dim();
        Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(d, d);
        for (Eigen::Index idx = 0; idx < d; ++idx) {
            h(idx, idx) = spec.j * zz(idx) + hz * mag(idx);
            for (int i = 0; i < lat.n; ++i) h(idx ^ (Eigen::Index(1) << i), idx) += hx;
        }
        return h;
    }
};

// Callable field evaluators built once per propagation (interpolant
// construction is costly inside integrator stages).
struct ProtocolEvaluator {
    std::function<double(double)> hx, hz;

    explicit ProtocolEvaluator(const Protocol& p) {
        if (p.has_closed_form && p.fx.kind != FieldKind::raw && p.fz.kind != FieldKind::raw) {
            FieldForm fx = p.fx, fz = p.fz;
            hx = [fx](double t) { return fx.eval(t); };
            hz = [fz](double t) { return fz.eval(t); };
        } else {
            auto ix = TrigInterpolant::span(p.hx, 0.0, p.grid.dt());
            auto iz = TrigInterpolant::span(p.hz, 0.0, p.grid.dt());
            hx = [ix](double t) { return ix.eval(t); };
            hz = [iz](double t) { return iz.eval(t); };
        }
    }
};

namespace detail {

// Dormand-Prince 5(4) coefficients
struct Dp5 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

} // namespace detail

struct PropagationResult {
    std::vector<double> times;
    std::vector<StateVector> states;
};

// Integrates i dpsi/dt = H(t) psi with adaptive Dormand-Prince 5(4),
// emitting the state at each requested output time (must be increasing,
// starting at >= 0).
inline PropagationResult propagate(const OracleWorkspace& ws, const Protocol& protocol,
                                   const StateVector& psi0, std::vector<double> t_out,
                                   double tol = 1e-9) {
    if (t_out.empty()) throw config_error("propagate: no output times requested");
    for (std::size_t i = 1; i < t_out.size(); ++i)
        if (t_out[i] <= t_out[i - 1]) throw config_error("propagate: output times must increase");
    if (t_out.front() < 0) throw config_error("propagate: negative time");

    ProtocolEvaluator fields(protocol);
    const std::complex<double> mi(0.0, -1.0);
    auto rhs = [&](double t, const StateVector& y, StateVector& dy) {
        ws.apply(fields.hx(t), fields.hz(t), y, dy);
        dy *= mi;
    };

    using D = detail::Dp5;
    PropagationResult res;
    StateVector y = psi0;
    StateVector k1(ws.dim()), k2(ws.dim()), k3(ws.dim()), k4(ws.dim()), k5(ws.dim()),
        k6(ws.dim()), k7(ws.dim()), ytmp(ws.dim()), y5(ws.dim()), err(ws.dim());
    double t = 0.0;
    double h = std::min(1e-3, t_out.back() > 0 ? t_out.back() / 10 : 1e-3);
    bool have_k1 = false;
    const double t_end = t_out.back();
    std::size_t next_out = 0;

    // emit t=0 if requested
    if (t_out.front() == 0.0) {
        res.times.push_back(0.0);
        res.states.push_back(y);
        ++next_out;
    }

    int rejects_in_a_row = 0;
    while (next_out < t_out.size()) {
        const double t_target = t_out[next_out];
        if (t + h > t_target) h = t_target - t;
        if (h < 1e-15)
            throw numeric_error("propagate: step size underflow at t=" + std::to_string(t));

        if (!have_k1) rhs(t, y, k1);
        ytmp = y + h * D::a21 * k1;
        rhs(t + D::c2 * h, ytmp, k2);
        ytmp = y + h * (D::a31 * k1 + D::a32 * k2);
        rhs(t + D::c3 * h, ytmp, k3);
        ytmp = y + h * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3);
        rhs(t + D::c4 * h, ytmp, k4);
        ytmp = y + h * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4);
        rhs(t + D::c5 * h, ytmp, k5);
        ytmp = y + h * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5);
        rhs(t + h, ytmp, k6);
        y5 = y + h * (D::b1 * k1 + D::b3 * k3 + D::b4 * k4 + D::b5 * k5 + D::b6 * k6);
        rhs(t + h, y5, k7);
        err = h * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 + D::e7 * k7);

        double err_norm = 0.0;
        for (Eigen::Index i = 0; i < ws.dim(); ++i) {
            const double sc = tol + tol * std::max(std::abs(y(i)), std::abs(y5(i)));
            err_norm = std::max(err_norm, std::abs(err(i)) / sc);
        }

        if (err_norm <= 1.0) {
            t += h;
            y = y5;
            k1 = k7; // FSAL
            have_k1 = true;
            rejects_in_a_row = 0;
            if (std::abs(t - t_target) < 1e-13) {
                const double norm = y.norm();
                if (std::abs(norm - 1.0) > 1e-6)
                    throw numeric_error("propagate: norm drift " + std::to_string(norm - 1.0));
                res.times.push_back(t_target);
                res.states.push_back(y);
                ++next_out;
            }
        } else if (++rejects_in_a_row > 50) {
            throw numeric_error("propagate: repeated step rejection");
        }
        const double fac = std::clamp(0.9 * std::pow(err_norm > 0 ? 1.0 / err_norm : 1e4, 0.2),
                                      0.2, 5.0);
        h = std::min(h * fac, t_end > 0 ? t_end : h * fac);
        if (err_norm > 1.0) have_k1 = false; // k1 no longer matches (t, y)
    }
    return res;
}

// Mean single-site / bond observables of a normalized state.
struct Observables {
    double sx = 0, sy = 0, sz = 0, szz = 0, energy = 0;
};

inline Observables measure(const OracleWorkspace& ws, const StateVector& psi, double hx,
                           double hz) {
    Observables o;
    const Eigen::Index dim = ws.dim();
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        const double w = std::norm(psi(idx));
        o.sz += w * ws.mag(idx);
        o.szz += w * ws.zz(idx);
    }
    for (int i = 0; i < ws.lat.n; ++i) {
        const Eigen::Index bit = Eigen::Index(1) << i;
        std::complex<double> x(0, 0), yv(0, 0);
        for (Eigen::Index idx = 0; idx < dim; ++idx) {
            const std::complex<double> cross = std::conj(psi(idx)) * psi(idx ^ bit);
            x += cross;
            // <idx| Y_i |idx^bit>: +i when flipping down->up at site i
            const double s = ((idx >> i) & 1) ? 1.0 : -1.0;
            yv += std::complex<double>(0, s) * cross;
        }
        o.sx += x.real();
        o.sy += yv.real();
    }
    o.energy = (ws.spec.j * o.szz + hz * o.sz + hx * o.sx) / ws.lat.n;
    o.sx /= ws.lat.n;
    o.sy /= ws.lat.n;
    o.sz /= ws.lat.n;
    o.szz /= ws.lat.n_bonds();
    return o;
}

} // namespace noqs
