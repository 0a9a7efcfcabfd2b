#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "noqs/model.hpp"
#include "noqs/vmc.hpp"

namespace noqs {

class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const ParamStore& ps) {
        m_.clear();
        v_.clear();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_.push_back(Eigen::MatrixXd::Zero(ps.at(i).rows(), ps.at(i).cols()));
            v_.push_back(Eigen::MatrixXd::Zero(ps.at(i).rows(), ps.at(i).cols()));
        }
        t_ = 0;
    }

    void update(ParamStore& ps, const std::vector<Eigen::MatrixXd>& grad, double lr) {
        if (m_.size() != ps.size()) throw std::logic_error("Adam not initialized for this store");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_[i] = beta1 * m_[i] + (1 - beta1) * grad[i];
            v_[i] = beta2 * v_[i].array().matrix() + (1 - beta2) * grad[i].cwiseProduct(grad[i]);
            ps.at(i).array() -=
                lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
        }
    }

    long step_count() const { return t_; }
    std::vector<Eigen::MatrixXd>& moments1() { return m_; }
    std::vector<Eigen::MatrixXd>& moments2() { return v_; }
    void set_step_count(long t) { t_ = t; }

private:
    std::vector<Eigen::MatrixXd> m_, v_;
    long t_ = 0;
};

enum class InitialState { plus, ferro };

inline InitialState initial_state_from(const std::string& s) {
    if (s == "plus") return InitialState::plus;
    if (s == "ferro") return InitialState::ferro;
    throw config_error("unknown initial state: " + s);
}

struct TrainConfig {
    int steps = 8000;
    int batch_protocols = 4;  // protocols per step
    int times_per_protocol = 3;
    int samples_per_time = 128;
    double lr0 = 4e-4;
    double lr_min = 4e-6;
    double lr_decay = 0.95;
    int lr_decay_every = 2000;
    double lambda_anchor = 10.0;
    InitialState initial_state = InitialState::plus;
    FourierProtocolSpec ensemble;
    std::uint64_t seed = 1;
    int pretrain_steps = 200;
    double pretrain_lr = 1e-3;
    // Exponent a of the per-term importance weight w = variance^a (held
    // constant during the reverse sweep). a = 0 recovers the plain mean; a = 1
    // minimizes the ensemble mean of variance^2 / 2, which concentrates effort
    // on the hardest protocols and times instead of letting easy draws
    // dominate the average. Reported losses stay unweighted.
    double variance_weighting = 0.0;
    // Replace Monte-Carlo estimation of each (protocol, time) term with exact
    // enumeration over the full basis (possible up to 12 sites). The gradient
    // is then exact for the drawn protocols and times.
    bool exact_expectations = false;

    double lr_at(long step) const {
        return std::max(lr_min, lr0 * std::pow(lr_decay, static_cast<double>(step / lr_decay_every)));
    }

    void validate() const {
        if (steps < 0 || batch_protocols < 1 || times_per_protocol < 1 || samples_per_time < 1)
            throw config_error("training batch sizes must be positive");
        if (lr0 <= 0 || lr_min <= 0 || lr_decay <= 0 || lr_decay > 1 || lr_decay_every < 1)
            throw config_error("invalid learning-rate schedule");
        if (lambda_anchor < 0) throw config_error("lambda_anchor must be non-negative");
        if (variance_weighting < 0) throw config_error("variance_weighting must be non-negative");
    }
};

namespace detail {

// exp(dx) straight through a value clamp at +-kLogRatioClamp: the clamp only
// alters the forward value; gradients follow the unclamped expression.
inline ad::Node* clamped_shift(ad::Tape& t, ad::Node* dx, long& clamp_count) {
    ad::Mat corr = ad::Mat::Zero(dx->val.rows(), dx->val.cols());
    long n = 0;
    for (Eigen::Index i = 0; i < dx->val.rows(); ++i) {
        const double v = dx->val(i, 0);
        if (v > kLogRatioClamp) {
            corr(i, 0) = kLogRatioClamp - v;
            ++n;
        } else if (v < -kLogRatioClamp) {
            corr(i, 0) = -kLogRatioClamp - v;
            ++n;
        }
    }
    clamp_count += n;
    return n ? ad::add(t, dx, t.constant(corr)) : dx;
}

} // namespace detail

// Builds the Monte-Carlo variance objective for one (protocol, time) pair on
// the tape. Returns the variance node; appends the score-function surrogate
// (zero-valued in expectation shift) so one reverse sweep yields the full
// gradient estimate.
struct TdvpTermResult {
    ad::Node* objective = nullptr; // variance + surrogate
    double variance = 0;           // reported loss contribution
    long clamp_count = 0;
};

inline TdvpTermResult tdvp_term(ad::Tape& t, const BoundParams& bp, const Model& model,
                                OperatorContext& op_ctx, const Protocol& protocol, double t_k,
                                const std::vector<SpinConfig>& samples) {
    const double hx = protocol.hx_at(t_k), hz = protocol.hz_at(t_k);
    const int n = model.lat.n;
    const int m_count = static_cast<int>(samples.size());
    UniqueBatch b = build_unique_batch(model.lat, samples);

    ad::Node* ctx = op_ctx.tokens(t_k, true);
    WavefunctionOutput wf = wavefunction_forward(t, bp, model.wf, ctx, b.configs);
    ad::Node* damp = ad::tangent_of(t, wf.log_amp);
    ad::Node* dphase = ad::tangent_of(t, wf.phase);

    // off-diagonal ratios over flattened (distinct sample, flip) pairs
    const int u_count = static_cast<int>(b.unique_pos.size());
    std::vector<int> flip_idx, base_idx;
    flip_idx.reserve(static_cast<std::size_t>(u_count) * n);
    base_idx.reserve(flip_idx.capacity());
    for (int u = 0; u < u_count; ++u)
        for (int i = 0; i < n; ++i) {
            flip_idx.push_back(b.flip_pos[u][i]);
            base_idx.push_back(b.unique_pos[u]);
        }
    TdvpTermResult res;
    ad::Node* dla = ad::sub(t, ad::gather_rows(t, wf.log_amp, flip_idx),
                            ad::gather_rows(t, wf.log_amp, base_idx));
    dla = detail::clamped_shift(t, dla, res.clamp_count);
    ad::Node* dph = ad::sub(t, ad::gather_rows(t, wf.phase, flip_idx),
                            ad::gather_rows(t, wf.phase, base_idx));
    ad::Node* mag = ad::cw(t, dla, ad::Cw::exp);
    ad::Node* ratio_re = ad::hadamard(t, mag, ad::cw(t, dph, ad::Cw::cos));
    ad::Node* ratio_im = ad::hadamard(t, mag, ad::cw(t, dph, ad::Cw::sin));

    ad::Mat diag(u_count, 1);
    for (int u = 0; u < u_count; ++u)
        diag(u, 0) = diagonal_energy(model.lat, model.ham, b.configs[b.unique_pos[u]], hz);
    ad::Node* e_re =
        ad::add(t, t.constant(diag), ad::scale(t, ad::block_rowsum(t, ratio_re, n), hx));
    ad::Node* e_im = ad::scale(t, ad::block_rowsum(t, ratio_im, n), hx);

    // residual L = i dlog psi/dt - E_loc, per distinct sample then per sample
    ad::Node* l_re_u = ad::sub(t, ad::scale(t, ad::gather_rows(t, dphase, b.unique_pos), -1.0), e_re);
    ad::Node* l_im_u = ad::sub(t, ad::gather_rows(t, damp, b.unique_pos), e_im);
    std::vector<int> u_of_sample = b.sample_unique;
    ad::Node* l_re = ad::gather_rows(t, l_re_u, u_of_sample);
    ad::Node* l_im = ad::gather_rows(t, l_im_u, u_of_sample);

    const double inv_m = 1.0 / m_count;
    ad::Node* mean_re = ad::scale(t, ad::total_sum(t, l_re), inv_m);
    ad::Node* mean_im = ad::scale(t, ad::total_sum(t, l_im), inv_m);
    ad::Node* c_re = ad::add_rowbc(t, l_re, ad::scale(t, mean_re, -1.0));
    ad::Node* c_im = ad::add_rowbc(t, l_im, ad::scale(t, mean_im, -1.0));
    ad::Node* var = ad::scale(
        t,
        ad::add(t, ad::total_sum(t, ad::cw(t, c_re, ad::Cw::square)),
                ad::total_sum(t, ad::cw(t, c_im, ad::Cw::square))),
        inv_m);
    res.variance = var->val(0, 0);

    // score-function term: (1/M) sum_m (|L_m - Lbar|^2 - Var) d log p_m
    ad::Mat w(m_count, 1);
    for (int s = 0; s < m_count; ++s)
        w(s, 0) = c_re->val(s, 0) * c_re->val(s, 0) + c_im->val(s, 0) * c_im->val(s, 0) -
                  res.variance;
    std::vector<int> sample_pos(m_count);
    for (int s = 0; s < m_count; ++s) sample_pos[s] = b.unique_pos[b.sample_unique[s]];
    ad::Node* logp = ad::gather_rows(t, wf.log_prob, sample_pos);
    ad::Node* surrogate =
        ad::scale(t, ad::total_sum(t, ad::hadamard(t, logp, t.constant(w))), inv_m);

    res.objective = ad::add(t, var, surrogate);
    return res;
}

// Exact-expectation variant for small systems: enumerates the full basis and
// weights every configuration by its autoregressive probability, which is
// itself a tape quantity. The objective equals the exact residual variance
// and one reverse sweep yields its exact gradient; no sampling and no
// score-function surrogate are involved.
inline TdvpTermResult tdvp_term_exact(ad::Tape& t, const BoundParams& bp, const Model& model,
                                      OperatorContext& op_ctx, const Protocol& protocol,
                                      double t_k) {
    const double hx = protocol.hx_at(t_k), hz = protocol.hz_at(t_k);
    const int n = model.lat.n;
    if (n > 12) throw config_error("exact expectations require at most 12 sites");
    const int dim = 1 << n;
    std::vector<SpinConfig> basis;
    basis.reserve(dim);
    for (std::uint64_t k = 0; k < static_cast<std::uint64_t>(dim); ++k)
        basis.push_back(decode_config(k, n));

    ad::Node* ctx = op_ctx.tokens(t_k, true);
    WavefunctionOutput wf = wavefunction_forward(t, bp, model.wf, ctx, basis);
    ad::Node* damp = ad::tangent_of(t, wf.log_amp);
    ad::Node* dphase = ad::tangent_of(t, wf.phase);

    std::vector<int> flip_idx, base_idx;
    flip_idx.reserve(static_cast<std::size_t>(dim) * n);
    base_idx.reserve(flip_idx.capacity());
    for (int k = 0; k < dim; ++k)
        for (int i = 0; i < n; ++i) {
            SpinConfig c = basis[k];
            c[i] = -c[i];
            flip_idx.push_back(static_cast<int>(encode_config(c)));
            base_idx.push_back(k);
        }
    TdvpTermResult res;
    ad::Node* dla = ad::sub(t, ad::gather_rows(t, wf.log_amp, flip_idx),
                            ad::gather_rows(t, wf.log_amp, base_idx));
    dla = detail::clamped_shift(t, dla, res.clamp_count);
    ad::Node* dph = ad::sub(t, ad::gather_rows(t, wf.phase, flip_idx),
                            ad::gather_rows(t, wf.phase, base_idx));
    ad::Node* mag = ad::cw(t, dla, ad::Cw::exp);
    ad::Node* ratio_re = ad::hadamard(t, mag, ad::cw(t, dph, ad::Cw::cos));
    ad::Node* ratio_im = ad::hadamard(t, mag, ad::cw(t, dph, ad::Cw::sin));

    ad::Mat diag(dim, 1);
    for (int k = 0; k < dim; ++k)
        diag(k, 0) = diagonal_energy(model.lat, model.ham, basis[k], hz);
    ad::Node* e_re =
        ad::add(t, t.constant(diag), ad::scale(t, ad::block_rowsum(t, ratio_re, n), hx));
    ad::Node* e_im = ad::scale(t, ad::block_rowsum(t, ratio_im, n), hx);

    ad::Node* l_re = ad::sub(t, ad::scale(t, dphase, -1.0), e_re);
    ad::Node* l_im = ad::sub(t, damp, e_im);

    // probability weights; normalized by construction of the autoregressive
    // factorization
    ad::Node* w = ad::cw(t, wf.log_prob, ad::Cw::exp);
    ad::Node* mean_re = ad::total_sum(t, ad::hadamard(t, w, l_re));
    ad::Node* mean_im = ad::total_sum(t, ad::hadamard(t, w, l_im));
    ad::Node* c_re = ad::add_rowbc(t, l_re, ad::scale(t, mean_re, -1.0));
    ad::Node* c_im = ad::add_rowbc(t, l_im, ad::scale(t, mean_im, -1.0));
    ad::Node* var = ad::total_sum(
        t, ad::hadamard(t, w,
                        ad::add(t, ad::cw(t, c_re, ad::Cw::square),
                                ad::cw(t, c_im, ad::Cw::square))));
    res.variance = var->val(0, 0);
    res.objective = var;
    return res;
}

// |1 - psi_theta(sigma, 0)/psi_0(sigma)|^2 averaged over |psi_0|^2. For the
// uniform superposition the expectation is taken exactly over the basis when
// small, otherwise over uniform samples; for the polarized state it is a
// single term.
inline ad::Node* anchor_term(ad::Tape& t, const BoundParams& bp, const Model& model,
                             OperatorContext& op_ctx, InitialState init, Rng& rng,
                             double* value_out = nullptr) {
    const int n = model.lat.n;
    std::vector<SpinConfig> configs;
    if (init == InitialState::ferro) {
        configs.push_back(SpinConfig(n, 1));
    } else if (n <= 10) {
        for (std::uint64_t k = 0; k < (1ull << n); ++k) configs.push_back(decode_config(k, n));
    } else {
        for (int s = 0; s < 256; ++s) {
            SpinConfig c(n);
            for (int i = 0; i < n; ++i) c[i] = rng.bernoulli(0.5) ? 1 : -1;
            configs.push_back(c);
        }
    }
    ad::Node* ctx = op_ctx.tokens(0.0, false);
    WavefunctionOutput wf = wavefunction_forward(t, bp, model.wf, ctx, configs);
    // log of psi_theta/psi_0
    ad::Node* la = init == InitialState::ferro
                       ? wf.log_amp
                       : ad::shift(t, wf.log_amp, 0.5 * n * std::log(2.0));
    ad::Node* mag = ad::cw(t, la, ad::Cw::exp);
    ad::Node* re = ad::shift(t, ad::hadamard(t, mag, ad::cw(t, wf.phase, ad::Cw::cos)), -1.0);
    ad::Node* im = ad::hadamard(t, mag, ad::cw(t, wf.phase, ad::Cw::sin));
    ad::Node* loss = ad::scale(
        t,
        ad::add(t, ad::total_sum(t, ad::cw(t, re, ad::Cw::square)),
                ad::total_sum(t, ad::cw(t, im, ad::Cw::square))),
        1.0 / static_cast<double>(configs.size()));
    if (value_out) *value_out = loss->val(0, 0);
    return loss;
}

struct StepResult {
    double loss = 0;     // mean residual variance over the batch
    double anchor = 0;   // anchor loss value
    double lr = 0;
    long clamp_count = 0;
};

class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
        cfg_.validate();
        adam_.init(model_.params);
    }

    // Drives the anchor loss to convergence before time evolution training.
    // Returns the final anchor loss.
    double pretrain() {
        FourierProtocolSpec spec = cfg_.ensemble;
        Protocol proto = sample_fourier_protocol(spec, model_.op.grid(),
                                                 Rng::substream(cfg_.seed, {3}).below(1u << 30));
        double value = 0;
        for (int s = 0; s < cfg_.pretrain_steps; ++s) {
            ad::Tape t;
            BoundParams bp = bind(t, model_.params);
            OperatorContext op_ctx(t, bp, model_.op, proto);
            Rng rng = Rng::substream(cfg_.seed, {4, static_cast<std::uint64_t>(s)});
            ad::Node* loss = anchor_term(t, bp, model_, op_ctx, cfg_.initial_state, rng, &value);
            if (value < 1e-12) return value;
            t.backward(loss);
            adam_.update(model_.params, bp.grad(), cfg_.pretrain_lr);
        }
        ad::Tape t;
        BoundParams bp = bind(t, model_.params, false);
        t.grad_enabled = false;
        OperatorContext op_ctx(t, bp, model_.op, proto);
        Rng rng = Rng::substream(cfg_.seed, {4, 0xffff});
        anchor_term(t, bp, model_, op_ctx, cfg_.initial_state, rng, &value);
        return value;
    }

    StepResult step() {
        StepResult r = try_step(cfg_.lr_at(step_));
        // parameters are never updated from a non-finite objective
        if (!std::isfinite(r.loss) || !std::isfinite(r.anchor))
            throw numeric_error("non-finite loss at step " + std::to_string(step_));
        ++step_;
        return r;
    }

    long current_step() const { return step_; }
    void set_step(long s) { step_ = s; }
    Adam& adam() { return adam_; }

private:
    StepResult try_step(double lr) {
        StepResult r;
        r.lr = lr;
        ad::Tape t;
        BoundParams bp = bind(t, model_.params);
        ad::Node* total = nullptr;
        const double norm = 1.0 / (cfg_.batch_protocols * cfg_.times_per_protocol);
        for (int b = 0; b < cfg_.batch_protocols; ++b) {
            const std::uint64_t pseed =
                Rng::substream(cfg_.seed, {5, static_cast<std::uint64_t>(step_),
                                           static_cast<std::uint64_t>(b)})
                    .below(1u << 30);
            Protocol proto = sample_fourier_protocol(cfg_.ensemble, model_.op.grid(), pseed);
            OperatorContext op_ctx(t, bp, model_.op, proto);
            for (int k = 0; k < cfg_.times_per_protocol; ++k) {
                Rng rng = Rng::substream(cfg_.seed, {6, static_cast<std::uint64_t>(step_),
                                                     static_cast<std::uint64_t>(b),
                                                     static_cast<std::uint64_t>(k)});
                const double t_k = rng.uniform() * model_.op.t_max;
                TdvpTermResult term;
                if (cfg_.exact_expectations) {
                    term = tdvp_term_exact(t, bp, model_, op_ctx, proto, t_k);
                } else {
                    TokenValues tok = evaluate_tokens(model_.params, model_.op, proto, t_k);
                    auto samples = sample_configs(model_.params, model_.wf, tok.m,
                                                  cfg_.samples_per_time, rng);
                    term = tdvp_term(t, bp, model_, op_ctx, proto, t_k, samples);
                }
                r.loss += norm * term.variance;
                r.clamp_count += term.clamp_count;
                double w = norm;
                if (cfg_.variance_weighting > 0 && std::isfinite(term.variance))
                    w *= std::pow(std::max(term.variance, 1e-12), cfg_.variance_weighting);
                ad::Node* scaled = ad::scale(t, term.objective, w);
                total = total ? ad::add(t, total, scaled) : scaled;
            }
            if (b == 0 && cfg_.lambda_anchor > 0) {
                Rng rng = Rng::substream(cfg_.seed, {7, static_cast<std::uint64_t>(step_)});
                ad::Node* anchor =
                    anchor_term(t, bp, model_, op_ctx, cfg_.initial_state, rng, &r.anchor);
                total = ad::add(t, total, ad::scale(t, anchor, cfg_.lambda_anchor));
            }
        }
        if (!std::isfinite(r.loss) || !std::isfinite(r.anchor)) return r;
        t.backward(total);
        adam_.update(model_.params, bp.grad(), lr);
        return r;
    }

    Model& model_;
    TrainConfig cfg_;
    Adam adam_;
    long step_ = 0;
};

} // namespace noqs
