#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numeric>

#include "noqs/training.hpp"

using namespace noqs;
using ad::Mat;

namespace {

Model tiny_model(std::uint64_t seed, bool random_head = true) {
    auto lat = build_lattice(2, 2);
    TransformerConfig wf;
    wf.n_sites = lat.n;
    wf.d_e = 8;
    wf.n_h = 2;
    wf.d_f = 16;
    wf.l_t = 2;
    FNOConfig op;
    op.n_t = 20;
    op.t_max = 1.0;
    op.l_f = 2;
    op.d_v = 8;
    op.k_max = 10;
    op.n_c = 2;
    op.d_e = 8;
    Model m = Model::create(lat, wf, op, seed);
    if (random_head) {
        Rng rng = Rng::substream(seed, {50});
        for (Eigen::Index i = 0; i < m.params["wf.head.w2"].rows(); ++i)
            for (int j = 0; j < 4; ++j) m.params["wf.head.w2"](i, j) = 0.3 * rng.normal();
    }
    return m;
}

TrainConfig tiny_train_cfg() {
    TrainConfig cfg;
    cfg.batch_protocols = 1;
    cfg.times_per_protocol = 1;
    cfg.samples_per_time = 32;
    cfg.ensemble.n_max = 4;
    cfg.seed = 11;
    return cfg;
}

} // namespace

TEST_CASE("learning-rate schedule decays geometrically with a floor") {
    TrainConfig cfg;
    cfg.lr0 = 4e-4;
    cfg.lr_decay = 0.95;
    cfg.lr_decay_every = 2000;
    cfg.lr_min = 4e-6;
    REQUIRE(cfg.lr_at(0) == 4e-4);
    REQUIRE(cfg.lr_at(1999) == 4e-4);
    REQUIRE_THAT(cfg.lr_at(2000), Catch::Matchers::WithinRel(4e-4 * 0.95, 1e-12));
    REQUIRE_THAT(cfg.lr_at(4000), Catch::Matchers::WithinRel(4e-4 * 0.95 * 0.95, 1e-12));
    REQUIRE(cfg.lr_at(1000000) == 4e-6);
}

TEST_CASE("Adam minimizes a quadratic") {
    ParamStore ps;
    Rng rng = Rng::substream(1, {60});
    ps.add_normal("x", 3, 2, rng, 2.0);
    Adam adam;
    adam.init(ps);
    for (int s = 0; s < 2000; ++s) {
        std::vector<Mat> g = {2.0 * ps["x"]};
        adam.update(ps, g, 0.05);
    }
    REQUIRE(ps["x"].cwiseAbs().maxCoeff() < 1e-4);
    REQUIRE(adam.step_count() == 2000);
}

TEST_CASE("tdvp objective gradient matches finite differences with frozen score weights") {
    Model m = tiny_model(3);
    auto proto = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 5);
    const double t_k = 0.43;
    Rng srng = Rng::substream(3, {61});
    TokenValues tok = evaluate_tokens(m.params, m.op, proto, t_k);
    auto samples = sample_configs(m.params, m.wf, tok.m, 24, srng);

    // base-point evaluation with gradients
    ad::Tape tg;
    BoundParams bp = bind(tg, m.params);
    OperatorContext op_ctx(tg, bp, m.op, proto);
    TdvpTermResult term = tdvp_term(tg, bp, m, op_ctx, proto, t_k, samples);
    tg.backward(term.objective);
    auto grads = bp.grad();

    // frozen score weights w_m = |L_m - Lbar|^2 - Var at the base point
    auto base_stats = compute_local_stats(m, proto, t_k, samples, true);
    const double base_var = residual_variance(base_stats.residual);
    REQUIRE_THAT(term.variance, Catch::Matchers::WithinRel(base_var, 1e-10));
    std::complex<double> lbar(0, 0);
    for (auto& r : base_stats.residual) lbar += r;
    lbar /= static_cast<double>(samples.size());
    std::vector<double> w(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s)
        w[s] = std::norm(base_stats.residual[s] - lbar) - base_var;

    // value of the surrogate-augmented objective at displaced parameters
    auto value = [&](const Model& model) {
        auto stats = compute_local_stats(model, proto, t_k, samples, true);
        double v = residual_variance(stats.residual);
        auto lp = model.log_psi(proto, t_k, samples, false);
        for (std::size_t s = 0; s < samples.size(); ++s)
            v += w[s] * 2.0 * lp.log_psi[s].real() / static_cast<double>(samples.size());
        return v;
    };

    const double h = 1e-5, tol = 2e-5;
    for (const std::string name : {"wf.embed", "wf.l0.sa.wq0", "wf.l1.ffn.w2", "wf.head.w2",
                                   "op.lift.w", "op.l1.rr", "op.proj.w2", "op.m0"}) {
        const std::size_t pi = bp.index.at(name);
        Model m2 = m;
        Mat& mat = m2.params[name];
        // a few entries per matrix keeps the test fast
        const Eigen::Index rmax = std::min<Eigen::Index>(2, mat.rows());
        const Eigen::Index cmax = std::min<Eigen::Index>(3, mat.cols());
        for (Eigen::Index r = 0; r < rmax; ++r)
            for (Eigen::Index c = 0; c < cmax; ++c) {
                mat(r, c) += h;
                const double up = value(m2);
                mat(r, c) -= 2 * h;
                const double dn = value(m2);
                mat(r, c) += h;
                const double fd = (up - dn) / (2 * h);
                INFO(name << "(" << r << "," << c << ")");
                REQUIRE_THAT(grads[pi](r, c),
                             Catch::Matchers::WithinAbs(fd, tol + 1e-4 * std::abs(fd)));
            }
    }
}

TEST_CASE("exact-enumeration objective matches the weighted basis sum and its gradient") {
    Model m = tiny_model(4);
    auto proto = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 8);
    std::vector<SpinConfig> basis;
    for (std::uint64_t k = 0; k < 16; ++k) basis.push_back(decode_config(k, 4));

    // value: weighted residual variance over the full basis
    for (double t_k : {0.13, 0.55, 0.91}) {
        ad::Tape tape;
        BoundParams bp = bind(tape, m.params);
        OperatorContext ctx(tape, bp, m.op, proto);
        auto term = tdvp_term_exact(tape, bp, m, ctx, proto, t_k);

        auto stats = compute_local_stats(m, proto, t_k, basis, true);
        auto psi = model_state(m, proto, t_k);
        std::complex<double> mu(0, 0);
        double second = 0;
        for (int s = 0; s < 16; ++s) {
            const double w = std::norm(psi(encode_config(basis[s])));
            mu += w * stats.residual[s];
            second += w * std::norm(stats.residual[s]);
        }
        const double vref = second - std::norm(mu);
        INFO("t_k " << t_k);
        REQUIRE_THAT(term.variance, Catch::Matchers::WithinRel(vref, 1e-9));
    }

    // gradient: finite differences on the largest-magnitude entry per matrix
    const double t_k = 0.37;
    ad::Tape tape;
    BoundParams bp = bind(tape, m.params);
    OperatorContext ctx(tape, bp, m.op, proto);
    auto term = tdvp_term_exact(tape, bp, m, ctx, proto, t_k);
    tape.backward(term.objective);
    auto grads = bp.grad();

    auto value = [&](void) {
        ad::Tape t2;
        BoundParams b2 = bind(t2, m.params);
        OperatorContext c2(t2, b2, m.op, proto);
        return tdvp_term_exact(t2, b2, m, c2, proto, t_k).variance;
    };
    const double h = 1e-4;
    for (const std::string name : {"wf.embed", "wf.l0.sa.wq0", "wf.l1.ffn.w2", "wf.head.w2",
                                   "op.lift.w", "op.l1.rr", "op.proj.w2", "op.m0"}) {
        const std::size_t pi = bp.index.at(name);
        Mat& mat = m.params[name];
        Eigen::Index r = 0, c = 0;
        grads[pi].cwiseAbs().maxCoeff(&r, &c);
        const double orig = mat(r, c);
        mat(r, c) = orig + h;
        const double up = value();
        mat(r, c) = orig - h;
        const double dn = value();
        mat(r, c) = orig;
        const double fd = (up - dn) / (2 * h);
        INFO(name << "(" << r << "," << c << ")");
        REQUIRE_THAT(grads[pi](r, c), Catch::Matchers::WithinAbs(fd, 1e-6 + 1e-3 * std::abs(fd)));
    }

    // more than 12 sites would need 2^n forward rows; the trainer must refuse
    auto lat3 = build_lattice(4, 4);
    TransformerConfig wf3;
    wf3.n_sites = lat3.n;
    wf3.d_e = 8;
    wf3.n_h = 2;
    wf3.d_f = 16;
    wf3.l_t = 2;
    FNOConfig op3;
    op3.n_t = 20;
    op3.t_max = 1.0;
    op3.l_f = 2;
    op3.d_v = 8;
    op3.k_max = 10;
    op3.n_c = 2;
    op3.d_e = 8;
    Model m3 = Model::create(lat3, wf3, op3, 5);
    auto p3 = sample_fourier_protocol(FourierProtocolSpec{}, m3.op.grid(), 8);
    ad::Tape t3;
    BoundParams b3 = bind(t3, m3.params);
    OperatorContext c3(t3, b3, m3.op, p3);
    REQUIRE_THROWS_AS(tdvp_term_exact(t3, b3, m3, c3, p3, 0.5), config_error);
}

TEST_CASE("exact-expectation training steps are deterministic and reduce the loss") {
    Model m = tiny_model(12, /*random_head=*/false);
    TrainConfig cfg = tiny_train_cfg();
    cfg.exact_expectations = true;
    cfg.lr0 = 2e-3;
    cfg.lr_min = 2e-3;
    Trainer tr(m, cfg);
    std::vector<double> losses;
    for (int s = 0; s < 60; ++s) losses.push_back(tr.step().loss);
    const double early = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
    const double late = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
    INFO("early " << early << " late " << late);
    REQUIRE(late < early);

    Model m2 = tiny_model(12, /*random_head=*/false);
    Trainer tr2(m2, cfg);
    for (int s = 0; s < 3; ++s) REQUIRE(std::isfinite(tr2.step().loss));
    Model m3 = tiny_model(12, /*random_head=*/false);
    Trainer tr3(m3, cfg);
    for (int s = 0; s < 3; ++s) tr3.step();
    for (std::size_t i = 0; i < m2.params.size(); ++i) REQUIRE(m2.params.at(i) == m3.params.at(i));
}

TEST_CASE("anchor loss is zero at initialization for the uniform state") {
    Model m = tiny_model(7, /*random_head=*/false);
    auto proto = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 6);
    ad::Tape t;
    t.grad_enabled = false;
    BoundParams bp = bind(t, m.params, false);
    OperatorContext op_ctx(t, bp, m.op, proto);
    Rng rng = Rng::substream(7, {62});
    double v = -1;
    anchor_term(t, bp, m, op_ctx, InitialState::plus, rng, &v);
    REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.0, 1e-24));
}

TEST_CASE("pretraining reaches the polarized initial state") {
    Model m = tiny_model(8, /*random_head=*/false);
    TrainConfig cfg = tiny_train_cfg();
    cfg.initial_state = InitialState::ferro;
    cfg.pretrain_steps = 400;
    cfg.pretrain_lr = 2e-2;
    Trainer tr(m, cfg);
    const double final_anchor = tr.pretrain();
    REQUIRE(final_anchor < 1e-4);
    // psi(up..up) ~ 1
    auto proto = sample_fourier_protocol(cfg.ensemble, m.op.grid(), 9);
    auto v = m.log_psi(proto, 0.0, {SpinConfig(4, 1)});
    REQUIRE(std::abs(std::exp(v.log_psi[0]) - 1.0) < 2e-2);
}

TEST_CASE("a few tdvp steps reduce the training loss") {
    Model m = tiny_model(9, /*random_head=*/false);
    TrainConfig cfg = tiny_train_cfg();
    cfg.lr0 = 2e-3;
    cfg.lr_min = 2e-3;
    Trainer tr(m, cfg);
    std::vector<double> losses;
    for (int s = 0; s < 60; ++s) losses.push_back(tr.step().loss);
    const double early = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
    const double late = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
    INFO("early " << early << " late " << late);
    REQUIRE(late < early);
    for (double l : losses) REQUIRE(std::isfinite(l));
}

TEST_CASE("training is deterministic for a fixed seed") {
    Model m1 = tiny_model(10, false);
    Model m2 = tiny_model(10, false);
    TrainConfig cfg = tiny_train_cfg();
    Trainer t1(m1, cfg), t2(m2, cfg);
    for (int s = 0; s < 3; ++s) {
        auto r1 = t1.step();
        auto r2 = t2.step();
        REQUIRE(r1.loss == r2.loss);
    }
    for (std::size_t i = 0; i < m1.params.size(); ++i) REQUIRE(m1.params.at(i) == m2.params.at(i));
}
