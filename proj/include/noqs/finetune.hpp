#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "noqs/training.hpp"

namespace noqs {

// Sparse observable measurements for one protocol: per-site-averaged <X> and
// per-bond-averaged <ZZ> at a few times, with optional error bars.
struct MeasurementRecord {
    double t = 0;
    double x_mean = 0;
    double zz_mean = 0;
    double x_err = -1;  // < 0 means "not provided"
    double zz_err = -1;
};

struct MeasurementSet {
    std::vector<MeasurementRecord> records;
    std::string protocol_ref;

    void validate(double t_max) const {
        if (records.empty()) throw config_error("measurement set is empty");
        for (const auto& r : records) {
            if (r.t < 0 || r.t > t_max)
                throw config_error("measurement time outside protocol interval");
            if (std::abs(r.x_mean) > 1 || std::abs(r.zz_mean) > 1)
                throw config_error("per-site observable magnitude exceeds 1");
        }
    }
};

inline void write_measurements(std::ostream& os, const MeasurementSet& ms) {
    os << "# format=noqs-measurements-v1\n";
    if (!ms.protocol_ref.empty()) os << "# protocol=" << ms.protocol_ref << "\n";
    for (const auto& r : ms.records) {
        os << detail::fmt17(r.t) << " " << detail::fmt17(r.x_mean) << " "
           << detail::fmt17(r.zz_mean);
        if (r.x_err >= 0 && r.zz_err >= 0)
            os << " " << detail::fmt17(r.x_err) << " " << detail::fmt17(r.zz_err);
        os << "\n";
    }
}

inline void write_measurements(const std::string& path, const MeasurementSet& ms) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    write_measurements(os, ms);
    if (!os) throw io_error("write failed: " + path);
}

inline MeasurementSet read_measurements(std::istream& is) {
    MeasurementSet ms;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq != std::string::npos && line.substr(1, eq - 1).find("protocol") != std::string::npos)
                ms.protocol_ref = line.substr(eq + 1);
            continue;
        }
        std::stringstream ss(line);
        MeasurementRecord r;
        if (!(ss >> r.t >> r.x_mean >> r.zz_mean)) throw io_error("malformed measurement row: " + line);
        double xe, ze;
        if (ss >> xe >> ze) {
            r.x_err = xe;
            r.zz_err = ze;
        }
        ms.records.push_back(r);
    }
    if (ms.records.empty()) throw io_error("measurement file contains no records");
    return ms;
}

inline MeasurementSet read_measurements(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open measurement file: " + path);
    return read_measurements(is);
}

// Sum over records of squared deviations between sampled model expectations
// and the measured values.
inline double data_loss(const Model& m, const Protocol& protocol, const MeasurementSet& ms,
                        int n_samples, std::uint64_t seed) {
    ms.validate(protocol.grid.t_max);
    double loss = 0;
    for (std::size_t r = 0; r < ms.records.size(); ++r) {
        // keyed by the measurement time, not the record position, so the loss
        // is invariant under record permutation
        std::uint64_t tkey;
        std::memcpy(&tkey, &ms.records[r].t, sizeof tkey);
        Rng rng = Rng::substream(seed, {9, tkey});
        auto est = estimate_observables(m, protocol, ms.records[r].t, n_samples, rng);
        const double dx = est.sx - ms.records[r].x_mean;
        const double dz = est.szz - ms.records[r].zz_mean;
        loss += dx * dx + dz * dz;
    }
    return loss;
}

struct FinetuneConfig {
    int steps = 300;
    double lr = 3e-4;
    int n_samples = 1024;
    std::uint64_t seed = 1;
    bool freeze_operator = false;

    void validate() const {
        if (steps < 0 || n_samples < 2) throw config_error("invalid fine-tuning sizes");
        if (lr <= 0) throw config_error("fine-tuning learning rate must be positive");
    }
};

namespace detail {

// Keeps a node's gradient while forcing its forward value to zero, so score
// surrogates do not perturb reported losses.
inline ad::Node* zero_valued(ad::Tape& t, ad::Node* x) {
    return ad::add(t, x, t.constant(-x->val));
}

// Sampled <X> and <ZZ> at one time as 1x1 nodes whose gradients carry both the
// pathwise term (through the flip ratios) and the score term (through log p).
struct SampledPair {
    ad::Node* sx = nullptr;
    ad::Node* szz = nullptr;
    long clamp_count = 0;
};

inline SampledPair sampled_x_zz(ad::Tape& t, const BoundParams& bp, const Model& model,
                                OperatorContext& op_ctx, double t_m,
                                const std::vector<SpinConfig>& samples) {
    const int n = model.lat.n;
    const int m_count = static_cast<int>(samples.size());
    const double inv_m = 1.0 / m_count;
    UniqueBatch b = build_unique_batch(model.lat, samples);

    ad::Node* ctx = op_ctx.tokens(t_m, false);
    WavefunctionOutput wf = wavefunction_forward(t, bp, model.wf, ctx, b.configs);

    SampledPair out;
    const int u_count = static_cast<int>(b.unique_pos.size());
    std::vector<int> flip_idx, base_idx;
    flip_idx.reserve(static_cast<std::size_t>(u_count) * n);
    base_idx.reserve(flip_idx.capacity());
    for (int u = 0; u < u_count; ++u)
        for (int i = 0; i < n; ++i) {
            flip_idx.push_back(b.flip_pos[u][i]);
            base_idx.push_back(b.unique_pos[u]);
        }
    ad::Node* dla = ad::sub(t, ad::gather_rows(t, wf.log_amp, flip_idx),
                            ad::gather_rows(t, wf.log_amp, base_idx));
    dla = clamped_shift(t, dla, out.clamp_count);
    ad::Node* dph = ad::sub(t, ad::gather_rows(t, wf.phase, flip_idx),
                            ad::gather_rows(t, wf.phase, base_idx));
    ad::Node* ratio_re = ad::hadamard(t, ad::cw(t, dla, ad::Cw::exp), ad::cw(t, dph, ad::Cw::cos));
    // per distinct sample: x_loc = (1/n) sum_i Re psi(sigma^i)/psi(sigma)
    ad::Node* xloc_u = ad::scale(t, ad::block_rowsum(t, ratio_re, n), 1.0 / n);
    ad::Node* xloc = ad::gather_rows(t, xloc_u, b.sample_unique);
    ad::Node* x_path = ad::scale(t, ad::total_sum(t, xloc), inv_m);

    std::vector<int> sample_pos(m_count);
    for (int s = 0; s < m_count; ++s) sample_pos[s] = b.unique_pos[b.sample_unique[s]];
    ad::Node* logp = ad::gather_rows(t, wf.log_prob, sample_pos);

    ad::Mat zz(m_count, 1);
    for (int s = 0; s < m_count; ++s) {
        const SpinConfig& sigma = b.configs[sample_pos[s]];
        double acc = 0;
        for (auto [i, j] : model.lat.bonds) acc += sigma[i] * sigma[j];
        zz(s, 0) = acc / model.lat.n_bonds();
    }
    const double x_mean = x_path->val(0, 0);
    const double zz_mean = zz.mean();

    ad::Mat wx(m_count, 1), wz(m_count, 1);
    for (int s = 0; s < m_count; ++s) {
        wx(s, 0) = (xloc->val(s, 0) - x_mean) * inv_m;
        wz(s, 0) = (zz(s, 0) - zz_mean) * inv_m;
    }
    ad::Node* x_score = zero_valued(t, ad::total_sum(t, ad::hadamard(t, logp, t.constant(wx))));
    ad::Node* zz_score = zero_valued(t, ad::total_sum(t, ad::hadamard(t, logp, t.constant(wz))));

    out.sx = ad::add(t, x_path, x_score);
    ad::Mat zm(1, 1);
    zm(0, 0) = zz_mean;
    out.szz = ad::add(t, t.constant(zm), zz_score);
    return out;
}

} // namespace detail

struct FinetuneResult {
    std::vector<double> losses; // data loss per step, before that step's update
    long clamp_count = 0;
};

// Gradient descent on the data loss alone; the time-evolution objective is not
// used here.
inline FinetuneResult finetune(Model& model, const Protocol& protocol, const MeasurementSet& ms,
                               const FinetuneConfig& cfg) {
    cfg.validate();
    ms.validate(protocol.grid.t_max);
    Adam adam;
    adam.init(model.params);
    FinetuneResult res;
    for (int step = 0; step < cfg.steps; ++step) {
        ad::Tape t;
        BoundParams bp = bind(t, model.params);
        OperatorContext op_ctx(t, bp, model.op, protocol);
        ad::Node* total = nullptr;
        double loss_val = 0;
        for (std::size_t r = 0; r < ms.records.size(); ++r) {
            const MeasurementRecord& rec = ms.records[r];
            Rng rng = Rng::substream(cfg.seed, {10, static_cast<std::uint64_t>(step),
                                                static_cast<std::uint64_t>(r)});
            TokenValues tok = evaluate_tokens(model.params, model.op, protocol, rec.t);
            auto samples = sample_configs(model.params, model.wf, tok.m, cfg.n_samples, rng);
            auto pair = detail::sampled_x_zz(t, bp, model, op_ctx, rec.t, samples);
            res.clamp_count += pair.clamp_count;
            ad::Node* dx = ad::shift(t, pair.sx, -rec.x_mean);
            ad::Node* dz = ad::shift(t, pair.szz, -rec.zz_mean);
            ad::Node* term = ad::add(t, ad::cw(t, dx, ad::Cw::square), ad::cw(t, dz, ad::Cw::square));
            loss_val += term->val(0, 0);
            total = total ? ad::add(t, total, term) : term;
        }
        if (!std::isfinite(loss_val))
            throw numeric_error("non-finite data loss at fine-tuning step " + std::to_string(step));
        res.losses.push_back(loss_val);
        t.backward(total);
        auto grads = bp.grad();
        if (cfg.freeze_operator) {
            const auto& names = model.params.names();
            for (std::size_t i = 0; i < names.size(); ++i)
                if (names[i].rfind("op.", 0) == 0) grads[i].setZero();
        }
        adam.update(model.params, grads, cfg.lr);
    }
    return res;
}

} // namespace noqs
