// Acceptance gate: nine criteria, one pass/fail line each. Exits nonzero if
// any criterion fails. Tolerances are pinned here as named constants.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <vector>

#include "noqs/checkpoint.hpp"
#include "noqs/finetune.hpp"
#include "noqs/report.hpp"

using namespace noqs;

namespace {

// pinned desk-scale configuration
constexpr int kLx = 2, kLy = 2;
constexpr int kDe = 32, kNh = 4, kDf = 256, kLt = 2;
constexpr int kNt = 100, kLf = 3, kDv = 32, kKmax = 32, kNc = 2;
constexpr double kTmax = 1.0;
constexpr int kTrainSteps = 48000;
constexpr double kLambdaAnchor = 50.0;
constexpr std::uint64_t kSeed = 2024;

// pinned tolerances
constexpr double kNormTol = 1e-8;               // criterion 1a
constexpr double kSigmaFactor = 3.0;            // criterion 1b
constexpr double kVarianceTol = 1e-8;           // criterion 1c
constexpr double kDerivRelTol = 1e-3;           // criterion 2
constexpr double kInDistMae = 0.05;             // criterion 3, per observable
constexpr double kInDistWorst = 0.10;           // criterion 3, single-protocol cap
constexpr double kOodMae = 0.10;                // criterion 4
constexpr double kBaselineFactor = 2.0;         // criterion 4
constexpr double kAnchorTol = 0.01;             // criterion 5
constexpr double kSuperresFactor = 2.0;         // criterion 6
constexpr double kSuperresHf = 0.10;            // criterion 6
constexpr double kFinetuneZFactor = 1.2;        // criterion 7
constexpr double kFinetuneZFloor = 0.05;        // criterion 7: absolute slack when pre-MAE ~ 0
constexpr double kOracleFidelity = 1e-8;        // criterion 8
constexpr double kOracleRoundTrip = 1e-6;       // criterion 8

int failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << "criterion " << idx << " (" << name << "): " << (ok ? "PASS" : "FAIL");
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << std::endl;
    if (!ok) ++failures;
}

template <typename F>
void guarded(int idx, const std::string& name, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(idx, name, false, std::string("exception: ") + e.what());
    }
}

Model desk_model(std::uint64_t seed) {
    auto lat = build_lattice(kLx, kLy);
    TransformerConfig wf;
    wf.n_sites = lat.n;
    wf.d_e = kDe;
    wf.n_h = kNh;
    wf.d_f = kDf;
    wf.l_t = kLt;
    FNOConfig op;
    op.n_t = kNt;
    op.t_max = kTmax;
    op.l_f = kLf;
    op.d_v = kDv;
    op.k_max = kKmax;
    op.n_c = kNc;
    op.d_e = kDe;
    return Model::create(lat, wf, op, seed);
}

void randomize_head(Model& m, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, {90});
    for (Eigen::Index i = 0; i < m.params["wf.head.w2"].rows(); ++i)
        for (int j = 0; j < 4; ++j) m.params["wf.head.w2"](i, j) = 0.3 * rng.normal();
}

std::vector<SpinConfig> all_configs(int n) {
    std::vector<SpinConfig> out;
    for (std::uint64_t k = 0; k < (1ull << n); ++k) out.push_back(decode_config(k, n));
    return out;
}

std::vector<double> linspace(double t_max, int n) {
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = t_max * i / (n - 1);
    return t;
}

// Exact (enumerated) model trajectory; removes sampling noise from the model
// side of every oracle comparison.
TrajectoryReport exact_model_trajectory(const Model& m, const Protocol& p,
                                        const std::vector<double>& times) {
    OracleWorkspace ws(m.lat, m.ham);
    TrajectoryReport r;
    for (double t : times) {
        auto psi = model_state(m, p, t);
        auto obs = measure(ws, psi, p.hx_at(t), p.hz_at(t));
        r.rows.push_back({t, obs.sx, 0, obs.szz, 0, obs.sz, 0, obs.energy, 0});
    }
    return r;
}

TrajectoryReport oracle_traj(const Model& m, const Protocol& p, const std::vector<double>& times,
                             const StateVector& psi0) {
    return oracle_trajectory(m.lat, m.ham, p, psi0, times);
}

struct TdvpGradCheck {
    double rel_err = 0;
};

// shared state across criteria
TrainState trained;
bool trained_ok = false;
Protocol gaussian_ood, tanh_ood;

} // namespace

// ---- criterion 1 ----
void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Model m = desk_model(kSeed + 1);
    randomize_head(m, kSeed + 1);
    auto p = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 314159);
    const double t = 0.6;

    auto psi = model_state(m, p, t);
    const double norm_dev = std::abs(psi.squaredNorm() - 1.0);
    bool ok = norm_dev <= kNormTol;
    std::ostringstream detail;
    detail << "norm dev " << norm_dev;

    OracleWorkspace ws(m.lat, m.ham);
    auto exact = measure(ws, psi, p.hx_at(t), p.hz_at(t));
    Rng rng = Rng::substream(kSeed, {91});
    auto est = estimate_observables(m, p, t, 100000, rng);
    auto within = [&](double e, double v, double err) {
        return std::abs(e - v) <= kSigmaFactor * std::max(err, 1e-4);
    };
    const bool obs_ok = within(exact.sx, est.sx, est.sx_err) &&
                        within(exact.sy, est.sy, est.sy_err) &&
                        within(exact.sz, est.sz, est.sz_err) &&
                        within(exact.szz, est.szz, est.szz_err) &&
                        within(exact.energy, est.energy, est.energy_err);
    ok = ok && obs_ok;
    detail << ", sampled-vs-enumerated " << (obs_ok ? "ok" : "off");

    // enumerated residual variance vs dense quadratic form
    auto configs = all_configs(m.lat.n);
    auto stats = compute_local_stats(m, p, t, configs, true);
    auto v = m.log_psi(p, t, configs, true);
    StateVector hpsi(ws.dim());
    ws.apply(p.hx_at(t), p.hz_at(t), psi, hpsi);
    StateVector phi(ws.dim());
    const std::complex<double> iu(0, 1);
    for (std::size_t s = 0; s < configs.size(); ++s) {
        const auto k = encode_config(configs[s]);
        phi(k) = iu * psi(k) * v.dlog_psi_dt[s] - hpsi(k);
    }
    const double dense = phi.squaredNorm() - std::norm(psi.dot(phi));
    std::complex<double> mean(0, 0);
    double second = 0;
    for (std::size_t s = 0; s < configs.size(); ++s) {
        const double w = std::norm(psi(encode_config(configs[s])));
        mean += w * stats.residual[s];
        second += w * std::norm(stats.residual[s]);
    }
    const double enumerated = second - std::norm(mean);
    const double var_dev = std::abs(enumerated - dense);
    ok = ok && var_dev <= kVarianceTol;
    detail << ", variance dev " << var_dev;

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && secs < 60;
    detail << ", " << secs << " s";
    report(1, "oracle equivalence, enumeration tier", ok, detail.str());
}

// ---- criterion 2 ----
void criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    Model m = desk_model(kSeed + 2);
    randomize_head(m, kSeed + 2);

    // (a) time derivative of log psi vs central differences
    double worst_t = 0;
    Rng rng = Rng::substream(kSeed, {92});
    for (int i = 0; i < 20; ++i) {
        auto p = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 40000 + i);
        const double t = 0.05 + 0.9 * rng.uniform();
        SpinConfig sigma(m.lat.n);
        for (auto& s : sigma) s = rng.bernoulli(0.5) ? 1 : -1;
        const double h = 1e-5;
        auto vm = m.log_psi(p, t - h, {sigma}, false);
        auto vp = m.log_psi(p, t + h, {sigma}, false);
        auto vd = m.log_psi(p, t, {sigma}, true);
        const std::complex<double> fd = (vp.log_psi[0] - vm.log_psi[0]) / (2 * h);
        const double rel =
            std::abs(fd - vd.dlog_psi_dt[0]) / std::max(std::abs(vd.dlog_psi_dt[0]), 1e-6);
        worst_t = std::max(worst_t, rel);
    }

    // (b) loss gradient on a 200-parameter slice vs finite differences
    auto p = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 40100);
    const double t_k = 0.43;
    Rng srng = Rng::substream(kSeed, {93});
    TokenValues tok = evaluate_tokens(m.params, m.op, p, t_k);
    auto samples = sample_configs(m.params, m.wf, tok.m, 16, srng);

    ad::Tape tg;
    BoundParams bp = bind(tg, m.params);
    OperatorContext op_ctx(tg, bp, m.op, p);
    TdvpTermResult term = tdvp_term(tg, bp, m, op_ctx, p, t_k, samples);
    tg.backward(term.objective);
    auto grads = bp.grad();

    auto base_stats = compute_local_stats(m, p, t_k, samples, true);
    const double base_var = residual_variance(base_stats.residual);
    std::complex<double> lbar(0, 0);
    for (auto& r : base_stats.residual) lbar += r;
    lbar /= static_cast<double>(samples.size());
    std::vector<double> w(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s)
        w[s] = std::norm(base_stats.residual[s] - lbar) - base_var;
    auto value = [&](const Model& model) {
        auto stats = compute_local_stats(model, p, t_k, samples, true);
        double vv = residual_variance(stats.residual);
        auto lp = model.log_psi(p, t_k, samples, false);
        for (std::size_t s = 0; s < samples.size(); ++s)
            vv += w[s] * 2.0 * lp.log_psi[s].real() / static_cast<double>(samples.size());
        return vv;
    };

    const double h = 1e-5;
    Model m2 = m;
    double num2 = 0, den2 = 0;
    int checked = 0;
    for (std::size_t pi = 0; pi < m.params.size() && checked < 200; ++pi) {
        Eigen::MatrixXd& mat = m2.params.at(pi);
        for (Eigen::Index r = 0; r < mat.rows() && checked < 200; ++r)
            for (Eigen::Index c = 0; c < mat.cols() && checked < 200; ++c) {
                // spread the slice across matrices: at most 4 entries each
                if (r * mat.cols() + c >= 4) {
                    r = mat.rows();
                    break;
                }
                mat(r, c) += h;
                const double up = value(m2);
                mat(r, c) -= 2 * h;
                const double dn = value(m2);
                mat(r, c) += h;
                const double fd = (up - dn) / (2 * h);
                num2 += (grads[pi](r, c) - fd) * (grads[pi](r, c) - fd);
                den2 += fd * fd;
                ++checked;
            }
    }
    const double rel_g = std::sqrt(num2 / std::max(den2, 1e-30));

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = worst_t < kDerivRelTol && rel_g < kDerivRelTol && checked >= 200 && secs < 300;
    std::ostringstream detail;
    detail << "worst d/dt rel " << worst_t << ", grad slice rel " << rel_g << " over " << checked
           << " params, " << secs << " s";
    report(2, "derivative correctness", ok, detail.str());
}

// ---- criterion 3 ----
void criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    trained.model = desk_model(kSeed);
    trained.seed = kSeed;
    TrainConfig cfg;
    cfg.steps = kTrainSteps;
    cfg.seed = kSeed;
    // at four sites the full basis is enumerable, so each training term can be
    // evaluated exactly instead of by Monte-Carlo sampling
    cfg.exact_expectations = true;
    cfg.lambda_anchor = kLambdaAnchor;
    Trainer tr(trained.model, cfg);
    const double anchor0 = tr.pretrain();
    std::cerr << "[train] pretrain anchor " << anchor0 << "\n";
    double running = 0;
    for (int s = 0; s < cfg.steps; ++s) {
        auto r = tr.step();
        running += r.loss;
        if ((s + 1) % 500 == 0) {
            std::cerr << "[train] step " << s + 1 << " mean loss " << running / 500 << " lr "
                      << r.lr << "\n";
            running = 0;
        }
    }
    trained.adam = tr.adam();
    trained.step = tr.current_step();
    trained_ok = true;

    const auto times = linspace(kTmax, 21);
    auto psi0 = initial_state_plus(trained.model.lat.n);
    bool ok = true;
    double worst = 0;
    double mean_x = 0, mean_zz = 0, mean_e = 0;
    for (int i = 0; i < 5; ++i) {
        auto p = sample_fourier_protocol(FourierProtocolSpec{}, trained.model.op.grid(),
                                         1000001 + i);
        auto mrep = exact_model_trajectory(trained.model, p, times);
        auto orep = oracle_traj(trained.model, p, times, psi0);
        auto met = compare_reports(mrep, orep);
        worst = std::max({worst, met.e.mae, met.x.mae, met.zz.mae});
        mean_x += met.x.mae / 5;
        mean_zz += met.zz.mae / 5;
        mean_e += met.e.mae / 5;
        std::cerr << "[eval] held-out " << i << " mae x " << met.x.mae << " zz " << met.zz.mae
                  << " e " << met.e.mae << "\n";
    }
    // each observable's MAE over the held-out set stays below the bound, and
    // no single protocol may be catastrophically worse
    ok = ok && mean_x < kInDistMae && mean_zz < kInDistMae && mean_e < kInDistMae &&
         worst < kInDistWorst;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && secs < 7200;
    std::ostringstream detail;
    detail << "mean MAE x " << mean_x << " zz " << mean_zz << " e " << mean_e
           << ", worst single-protocol " << worst << ", " << secs << " s";
    report(3, "trained desk model, in-distribution", ok, detail.str());
}

// ---- criterion 4 ----
void criterion4() {
    if (!trained_ok) {
        report(4, "out-of-distribution generalization", false, "no trained model");
        return;
    }
    const auto grid = trained.model.op.grid();
    // both pulses carry a small longitudinal field, within the training
    // ensemble's h_z envelope, so <Z(t)> has nontrivial dynamics
    gaussian_ood = with_hz(make_gaussian_pulse(grid, 0.5, 0.5, 0.15, 1.0),
                           FieldForm::make_constant(0.05));
    tanh_ood = with_hz(make_tanh_ramp(grid, 0.9, 1.3, 0.4, 6.0), FieldForm::make_constant(0.05));
    const auto times = linspace(kTmax, 21);
    auto psi0 = initial_state_plus(trained.model.lat.n);

    bool ok = true;
    std::ostringstream detail;
    for (const auto* pp : {&gaussian_ood, &tanh_ood}) {
        const Protocol& p = *pp;
        auto mrep = exact_model_trajectory(trained.model, p, times);
        auto orep = oracle_traj(trained.model, p, times, psi0);
        auto met = compare_reports(mrep, orep);

        // constant baseline: initial-state observables held for all t
        // constant-prediction baseline: every observable held at its t=0 value
        TrajectoryReport base;
        for (double t : times)
            base.rows.push_back({t, 1.0, 0, 0.0, 0, 0.0, 0, p.hx_at(0.0), 0});
        auto bmet = compare_reports(base, orep);

        const bool this_ok = met.x.mae < kOodMae && met.zz.mae < kOodMae && met.e.mae < kOodMae &&
                             kBaselineFactor * met.x.mae <= bmet.x.mae &&
                             kBaselineFactor * met.zz.mae <= bmet.zz.mae &&
                             kBaselineFactor * met.e.mae <= bmet.e.mae;
        ok = ok && this_ok;
        detail << (pp == &gaussian_ood ? "gaussian" : " tanh") << ": model MAE (x,zz,e)=("
               << met.x.mae << "," << met.zz.mae << "," << met.e.mae << ") baseline=("
               << bmet.x.mae << "," << bmet.zz.mae << "," << bmet.e.mae << ");";
    }
    report(4, "out-of-distribution generalization", ok, detail.str());
}

// ---- criterion 5 ----
void criterion5() {
    if (!trained_ok) {
        report(5, "anchored initial condition", false, "no trained model");
        return;
    }
    OracleWorkspace ws(trained.model.lat, trained.model.ham);
    double worst_plus = 0;
    for (int i = 0; i < 10; ++i) {
        auto p = sample_fourier_protocol(FourierProtocolSpec{}, trained.model.op.grid(),
                                         2000001 + i);
        auto psi = model_state(trained.model, p, 0.0);
        auto obs = measure(ws, psi, p.hx_at(0.0), p.hz_at(0.0));
        worst_plus = std::max({worst_plus, std::abs(obs.sx - 1.0), std::abs(obs.szz)});
    }

    // ferro-pinned model via anchor-only pretraining
    Model fm = desk_model(kSeed + 5);
    TrainConfig fcfg;
    fcfg.seed = kSeed + 5;
    fcfg.initial_state = InitialState::ferro;
    fcfg.pretrain_steps = 800;
    fcfg.pretrain_lr = 1e-2;
    Trainer ftr(fm, fcfg);
    const double fanchor = ftr.pretrain();
    double worst_ferro = 0;
    for (int i = 0; i < 10; ++i) {
        auto p = sample_fourier_protocol(FourierProtocolSpec{}, fm.op.grid(), 3000001 + i);
        auto psi = model_state(fm, p, 0.0);
        auto obs = measure(ws, psi, p.hx_at(0.0), p.hz_at(0.0));
        worst_ferro = std::max({worst_ferro, std::abs(obs.szz - 1.0), std::abs(obs.sx)});
    }
    const bool ok = worst_plus <= kAnchorTol && worst_ferro <= kAnchorTol;
    std::ostringstream detail;
    detail << "plus worst dev " << worst_plus << ", ferro worst dev " << worst_ferro
           << " (ferro anchor " << fanchor << ")";
    report(5, "anchored initial condition", ok, detail.str());
}

// ---- criterion 6 ----
void criterion6() {
    if (!trained_ok) {
        report(6, "zero-shot super-resolution", false, "no trained model");
        return;
    }
    auto p = sample_fourier_protocol(FourierProtocolSpec{}, trained.model.op.grid(), 4000001);
    TimeGrid fine(kTmax, 2 * kNt);
    Protocol pf = resample(p, fine);
    const auto times = fine.points();
    auto psi0 = initial_state_plus(trained.model.lat.n);
    auto mrep = exact_model_trajectory(trained.model, pf, times);
    auto orep = oracle_traj(trained.model, pf, times, psi0);

    const double dt_train = kTmax / (kNt - 1);
    std::vector<double> err_x(times.size());
    double max_old = 0, max_new = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        err_x[i] = std::abs(mrep.rows[i].x - orep.rows[i].x);
        const double frac = std::abs(times[i] / dt_train - std::round(times[i] / dt_train));
        if (frac < 0.25)
            max_old = std::max(max_old, err_x[i]);
        else
            max_new = std::max(max_new, err_x[i]);
    }
    const double hf = high_frequency_energy_fraction(err_x, kNt / 2);
    const bool ok = max_new <= kSuperresFactor * max_old && hf < kSuperresHf;
    std::ostringstream detail;
    detail << "max |dX| old-grid " << max_old << ", new points " << max_new
           << ", high-frequency fraction " << hf;
    report(6, "zero-shot super-resolution", ok, detail.str());
}

// ---- criterion 7 ----
void criterion7() {
    if (!trained_ok) {
        report(7, "fine-tuning on sparse measurements", false, "no trained model");
        return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Protocol& p = gaussian_ood;
    OracleWorkspace ws(trained.model.lat, trained.model.ham);
    auto psi0 = initial_state_plus(trained.model.lat.n);
    const std::vector<double> meas_times = {0.2, 0.4, 0.6, 0.8};
    auto prop = propagate(ws, p, psi0, meas_times);
    MeasurementSet ms;
    for (std::size_t i = 0; i < meas_times.size(); ++i) {
        auto obs = measure(ws, prop.states[i], p.hx_at(meas_times[i]), p.hz_at(meas_times[i]));
        ms.records.push_back({meas_times[i], obs.sx, obs.szz, -1, -1});
    }

    const auto times = linspace(kTmax, 21);
    auto orep = oracle_traj(trained.model, p, times, psi0);
    Model ft_model = trained.model; // fine-tune a copy
    auto pre = compare_reports(exact_model_trajectory(ft_model, p, times), orep);

    FinetuneConfig cfg;
    cfg.steps = 150;
    cfg.lr = 2e-4;
    cfg.n_samples = 1024;
    cfg.seed = kSeed + 7;
    finetune(ft_model, p, ms, cfg);
    auto post = compare_reports(exact_model_trajectory(ft_model, p, times), orep);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = post.e.mae < pre.e.mae &&
                    post.z.mae <= std::max(kFinetuneZFactor * pre.z.mae, kFinetuneZFloor) &&
                    secs < 600;
    std::ostringstream detail;
    detail << "E MAE " << pre.e.mae << " -> " << post.e.mae << ", Z MAE " << pre.z.mae << " -> "
           << post.z.mae << ", " << secs << " s";
    report(7, "fine-tuning on sparse measurements", ok, detail.str());
}

// ---- criterion 8 ----
void criterion8() {
    auto lat = build_lattice(2, 2);
    HamiltonianSpec ham;
    OracleWorkspace ws(lat, ham);
    TimeGrid grid(kTmax, kNt);
    const double hx = 1.0, hz = 0.3;
    Protocol pc = sample_on_grid(grid, FieldForm::make_constant(hx), FieldForm::make_constant(hz));
    auto psi0 = initial_state_plus(lat.n);
    auto prop = propagate(ws, pc, psi0, {kTmax}, 1e-10);
    const double drift = std::abs(prop.states[0].norm() - 1.0);

    // eigendecomposition exponential of the constant Hamiltonian
    Eigen::MatrixXcd hmat = ws.dense(hx, hz);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(hmat);
    const std::complex<double> iu(0, 1);
    Eigen::VectorXcd phases = (-iu * kTmax * es.eigenvalues().cast<std::complex<double>>()).array().exp();
    StateVector exact = es.eigenvectors() * phases.asDiagonal() *
                        (es.eigenvectors().adjoint() * psi0);
    const double fid = fidelity(prop.states[0], exact);

    // forward-backward with a driven protocol: integrate the negated,
    // time-reversed fields back to t=0
    auto pdrv = sample_fourier_protocol(FourierProtocolSpec{}, grid, 5000001);
    auto fwd = propagate(ws, pdrv, psi0, {kTmax}, 1e-10);
    Protocol prev;
    prev.grid = grid;
    prev.has_closed_form = false;
    prev.hx.resize(grid.n_t);
    prev.hz.resize(grid.n_t);
    for (int j = 0; j < grid.n_t; ++j) {
        prev.hx[j] = -pdrv.hx[grid.n_t - 1 - j];
        prev.hz[j] = -pdrv.hz[grid.n_t - 1 - j];
    }
    HamiltonianSpec nham;
    nham.j = -ham.j;
    OracleWorkspace wsn(lat, nham);
    auto back = propagate(wsn, prev, fwd.states[0], {kTmax}, 1e-10);
    const double fid_rt = fidelity(back.states[0], psi0);

    const bool ok = fid > 1 - kOracleFidelity && drift < kNormTol && fid_rt > 1 - kOracleRoundTrip;
    std::ostringstream detail;
    detail << "1-fidelity " << 1 - fid << ", norm drift " << drift << ", 1-roundtrip fidelity "
           << 1 - fid_rt;
    report(8, "oracle exactness tier", ok, detail.str());
}

// ---- criterion 9 ----
void criterion9() {
    // bit-identical loss histories for two runs at equal settings
    TrainConfig cfg;
    cfg.seed = kSeed + 9;
    Model m1 = desk_model(kSeed + 9);
    Model m2 = desk_model(kSeed + 9);
    Trainer t1(m1, cfg), t2(m2, cfg);
    bool det_ok = true;
    for (int s = 0; s < 30; ++s) det_ok = det_ok && t1.step().loss == t2.step().loss;

    // checkpoint round-trip gives bit-identical forward outputs
    bool ckpt_ok = false;
    if (trained_ok) {
        const std::string path = "acceptance_ckpt.noqs";
        save_checkpoint(path, trained);
        TrainState back = load_checkpoint(path);
        auto p = sample_fourier_protocol(FourierProtocolSpec{}, trained.model.op.grid(), 6000001);
        auto configs = all_configs(trained.model.lat.n);
        auto a = trained.model.log_psi(p, 0.62, configs, true);
        auto b = back.model.log_psi(p, 0.62, configs, true);
        ckpt_ok = true;
        for (std::size_t i = 0; i < configs.size(); ++i)
            ckpt_ok = ckpt_ok && a.log_psi[i] == b.log_psi[i] &&
                      a.dlog_psi_dt[i] == b.dlog_psi_dt[i];
        std::remove(path.c_str());
    }
    std::ostringstream detail;
    detail << "30-step loss history " << (det_ok ? "identical" : "diverged")
           << ", checkpoint forward outputs "
           << (ckpt_ok ? "bit-identical" : "mismatch or unavailable");
    report(9, "determinism and persistence", det_ok && ckpt_ok, detail.str());
}

int main() {
    guarded(1, "oracle equivalence, enumeration tier", criterion1);
    guarded(2, "derivative correctness", criterion2);
    guarded(3, "trained desk model, in-distribution", criterion3);
    guarded(4, "out-of-distribution generalization", criterion4);
    guarded(5, "anchored initial condition", criterion5);
    guarded(6, "zero-shot super-resolution", criterion6);
    guarded(7, "fine-tuning on sparse measurements", criterion7);
    guarded(8, "oracle exactness tier", criterion8);
    guarded(9, "determinism and persistence", criterion9);
    std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: " + std::to_string(failures))
              << std::endl;
    return failures == 0 ? 0 : 1;
}
