#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "noqs/bound_params.hpp"
#include "noqs/errors.hpp"
#include "noqs/lattice.hpp"
#include "noqs/rng.hpp"
#include "noqs/tape.hpp"

namespace noqs {

// Autoregressive transformer wavefunction. Sites are visited in a fixed
// order; position j predicts the conditional distribution and the phase
// contribution of site j given sites < j, conditioned on external context
// tokens via cross-attention. Decoder blocks are post-norm:
// self-attention -> add&norm -> cross-attention -> add&norm -> FFN -> add&norm.
struct TransformerConfig {
    int n_sites = 0;
    int d_e = 32;
    int n_h = 4;
    int d_f = 128;
    int l_t = 2;

    int d_h() const {
        if (d_e % n_h != 0) throw config_error("d_e must be divisible by n_h");
        return d_e / n_h;
    }
    void validate() const {
        if (n_sites < 1 || d_e < 1 || n_h < 1 || d_f < 1 || l_t < 1)
            throw config_error("transformer dimensions must be positive");
        (void)d_h();
    }
};

// The final projection is zero-initialized, so the fresh model is exactly the
// uniform-superposition product state with zero phase.
inline void init_wavefunction_params(ParamStore& ps, const TransformerConfig& cfg, Rng& rng,
                                     double std_dev = 0.02) {
    cfg.validate();
    const int de = cfg.d_e, dh = cfg.d_h(), df = cfg.d_f;
    ps.add_normal("wf.embed", 2, de, rng, std_dev);
    ps.add_normal("wf.start", 1, de, rng, std_dev);
    ps.add_normal("wf.pos", cfg.n_sites, de, rng, std_dev);
    for (int l = 0; l < cfg.l_t; ++l) {
        const std::string p = "wf.l" + std::to_string(l) + ".";
        for (const char* blk : {"sa.", "ca."}) {
            for (int h = 0; h < cfg.n_h; ++h) {
                const std::string hs = std::to_string(h);
                ps.add_normal(p + blk + "wq" + hs, de, dh, rng, std_dev);
                ps.add_normal(p + blk + "wk" + hs, de, dh, rng, std_dev);
                ps.add_normal(p + blk + "wv" + hs, de, dh, rng, std_dev);
            }
            ps.add_normal(p + blk + "wo", de, de, rng, std_dev);
            ps.add(p + blk + "bo", 1, de);
        }
        ps.add_constant(p + "ln1.g", 1, de, 1.0);
        ps.add(p + "ln1.b", 1, de);
        ps.add_constant(p + "ln2.g", 1, de, 1.0);
        ps.add(p + "ln2.b", 1, de);
        ps.add_normal(p + "ffn.w1", de, df, rng, std_dev);
        ps.add(p + "ffn.b1", 1, df);
        ps.add_normal(p + "ffn.w2", df, de, rng, std_dev);
        ps.add(p + "ffn.b2", 1, de);
        ps.add_constant(p + "ln3.g", 1, de, 1.0);
        ps.add(p + "ln3.b", 1, de);
    }
    ps.add_normal("wf.head.w1", de, de, rng, std_dev);
    ps.add("wf.head.b1", 1, de);
    ps.add("wf.head.w2", de, 4); // zero: logits tie, phase vanishes
    ps.add("wf.head.b2", 1, 4);
}

namespace detail {

// token index into vconcat(start, embed): 0 = start, 1 = spin -1, 2 = spin +1
inline int token_index(int spin) { return spin > 0 ? 2 : 1; }

inline ad::Node* attention(ad::Tape& t, const BoundParams& bp, const std::string& p,
                           ad::Node* x, ad::Node* kv, int n_h, int d_h, int seq_len,
                           const ad::Mat* mask) {
    std::vector<ad::Node*> heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_h));
    for (int h = 0; h < n_h; ++h) {
        const std::string hs = std::to_string(h);
        ad::Node* q = ad::matmul(t, x, bp[p + "wq" + hs]);
        ad::Node* k = ad::matmul(t, kv, bp[p + "wk" + hs]);
        ad::Node* v = ad::matmul(t, kv, bp[p + "wv" + hs]);
        ad::Node* scores;
        ad::Node* out;
        if (mask != nullptr) {
            // blockwise causal self-attention
            scores = ad::scale(t, ad::bmm_nt(t, q, k, seq_len), inv_sqrt);
            scores = ad::add(t, scores, t.constant(*mask));
            out = ad::bmm_nn(t, ad::row_softmax(t, scores), v, seq_len);
        } else {
            // cross-attention to shared context tokens
            scores = ad::scale(t, ad::matmul(t, q, ad::transpose(t, k)), inv_sqrt);
            out = ad::matmul(t, ad::row_softmax(t, scores), v);
        }
        heads.push_back(out);
    }
    ad::Node* cat = n_h == 1 ? heads[0] : ad::hconcat(t, heads);
    return ad::add_rowbc(t, ad::matmul(t, cat, bp[p + "wo"]), bp[p + "bo"]);
}

} // namespace detail

// Runs the decoder on S token sequences of common length T (token indices
// into {start, -1, +1}), returning the (S*T x 4) head output:
// columns 0,1 = logits for next spin in {-1,+1}; columns 2,3 = phase
// contributions for that choice.
inline ad::Node* wavefunction_hidden(ad::Tape& t, const BoundParams& bp,
                                     const TransformerConfig& cfg, ad::Node* context,
                                     const std::vector<std::vector<int>>& token_idx) {
    const int s_count = static_cast<int>(token_idx.size());
    const int seq_len = static_cast<int>(token_idx.front().size());

    ad::Node* table = ad::vconcat(t, bp["wf.start"], bp["wf.embed"]);
    std::vector<int> flat;
    flat.reserve(static_cast<std::size_t>(s_count) * seq_len);
    for (const auto& seq : token_idx)
        for (int id : seq) flat.push_back(id);
    ad::Node* x = ad::gather_rows(t, table, flat);

    std::vector<int> pos_idx;
    pos_idx.reserve(flat.size());
    for (int s = 0; s < s_count; ++s)
        for (int j = 0; j < seq_len; ++j) pos_idx.push_back(j);
    x = ad::add(t, x, ad::gather_rows(t, bp["wf.pos"], pos_idx));

    ad::Mat mask(static_cast<Eigen::Index>(s_count) * seq_len, seq_len);
    for (int s = 0; s < s_count; ++s)
        for (int i = 0; i < seq_len; ++i)
            for (int j = 0; j < seq_len; ++j)
                mask(static_cast<Eigen::Index>(s) * seq_len + i, j) = j > i ? -1e30 : 0.0;

    for (int l = 0; l < cfg.l_t; ++l) {
        const std::string p = "wf.l" + std::to_string(l) + ".";
        ad::Node* sa = detail::attention(t, bp, p + "sa.", x, x, cfg.n_h, cfg.d_h(), seq_len, &mask);
        x = ad::layer_norm(t, ad::add(t, x, sa), bp[p + "ln1.g"], bp[p + "ln1.b"]);
        ad::Node* ca =
            detail::attention(t, bp, p + "ca.", x, context, cfg.n_h, cfg.d_h(), seq_len, nullptr);
        x = ad::layer_norm(t, ad::add(t, x, ca), bp[p + "ln2.g"], bp[p + "ln2.b"]);
        ad::Node* h1 = ad::cw(
            t, ad::add_rowbc(t, ad::matmul(t, x, bp[p + "ffn.w1"]), bp[p + "ffn.b1"]), ad::Cw::gelu);
        ad::Node* ff = ad::add_rowbc(t, ad::matmul(t, h1, bp[p + "ffn.w2"]), bp[p + "ffn.b2"]);
        x = ad::layer_norm(t, ad::add(t, x, ff), bp[p + "ln3.g"], bp[p + "ln3.b"]);
    }

    ad::Node* h = ad::cw(
        t, ad::add_rowbc(t, ad::matmul(t, x, bp["wf.head.w1"]), bp["wf.head.b1"]), ad::Cw::gelu);
    return ad::add_rowbc(t, ad::matmul(t, h, bp["wf.head.w2"]), bp["wf.head.b2"]);
}

struct WavefunctionOutput {
    ad::Node* log_amp = nullptr; // (S x 1)  Re log psi = (1/2) log p
    ad::Node* phase = nullptr;   // (S x 1)  Im log psi
    ad::Node* log_prob = nullptr; // (S x 1) log p(sigma)
};

inline std::vector<std::vector<int>> tokens_for_configs(const std::vector<SpinConfig>& configs) {
    std::vector<std::vector<int>> tok(configs.size());
    for (std::size_t s = 0; s < configs.size(); ++s) {
        const auto& sigma = configs[s];
        tok[s].resize(sigma.size());
        tok[s][0] = 0;
        for (std::size_t j = 1; j < sigma.size(); ++j)
            tok[s][j] = detail::token_index(sigma[j - 1]);
    }
    return tok;
}

inline WavefunctionOutput wavefunction_forward(ad::Tape& t, const BoundParams& bp,
                                               const TransformerConfig& cfg, ad::Node* context,
                                               const std::vector<SpinConfig>& configs) {
    const int n = cfg.n_sites;
    const int s_count = static_cast<int>(configs.size());
    ad::Node* out4 = wavefunction_hidden(t, bp, cfg, context, tokens_for_configs(configs));

    // one-hot selection masks over the (S*N x 2) choice columns
    ad::Mat sel(static_cast<Eigen::Index>(s_count) * n, 2);
    for (int s = 0; s < s_count; ++s)
        for (int j = 0; j < n; ++j) {
            const int c = configs[s][j] > 0 ? 1 : 0;
            sel(static_cast<Eigen::Index>(s) * n + j, 0) = c == 0 ? 1.0 : 0.0;
            sel(static_cast<Eigen::Index>(s) * n + j, 1) = c == 1 ? 1.0 : 0.0;
        }
    ad::Node* sel_c = t.constant(sel);

    ad::Node* logits = ad::slice_cols(t, out4, 0, 2);
    ad::Node* zshift = t.constant(logits->val.rowwise().maxCoeff());
    ad::Node* z = ad::add_colbc(t, logits, zshift, -1.0);
    ad::Node* lse = ad::cw(t, ad::rowsum(t, ad::cw(t, z, ad::Cw::exp)), ad::Cw::log);
    ad::Node* chosen = ad::rowsum(t, ad::hadamard(t, z, sel_c));
    ad::Node* logp_pos = ad::sub(t, chosen, lse); // (S*N x 1)

    ad::Node* phase_pos = ad::rowsum(t, ad::hadamard(t, ad::slice_cols(t, out4, 2, 2), sel_c));

    WavefunctionOutput w;
    w.log_prob = ad::block_rowsum(t, logp_pos, n);
    w.log_amp = ad::scale(t, w.log_prob, 0.5);
    w.phase = ad::block_rowsum(t, phase_pos, n);
    return w;
}

// Value-only evaluation; with `context_dot` the time derivative of log psi
// comes out of the tangent slot.
struct LogPsiValues {
    std::vector<std::complex<double>> log_psi;
    std::vector<std::complex<double>> dlog_psi_dt;
    bool has_dt = false;
};

inline LogPsiValues evaluate_log_psi(const ParamStore& ps, const TransformerConfig& cfg,
                                     const ad::Mat& context_val, const ad::Mat* context_dot,
                                     const std::vector<SpinConfig>& configs) {
    ad::Tape t;
    t.grad_enabled = false;
    BoundParams bp = bind(t, ps, false);
    ad::Node* ctx = context_dot ? t.leaf_dual(context_val, *context_dot, false)
                                : t.leaf(context_val, false);
    WavefunctionOutput w = wavefunction_forward(t, bp, cfg, ctx, configs);
    LogPsiValues out;
    out.has_dt = context_dot != nullptr;
    for (int s = 0; s < static_cast<int>(configs.size()); ++s) {
        out.log_psi.emplace_back(w.log_amp->val(s, 0), w.phase->val(s, 0));
        if (out.has_dt) out.dlog_psi_dt.emplace_back(w.log_amp->dot(s, 0), w.phase->dot(s, 0));
    }
    return out;
}

// Exact ancestral sampling. Identical prefixes are evaluated once per step;
// for small systems the cost is bounded by the number of distinct prefixes,
// not the number of samples.
inline std::vector<SpinConfig> sample_configs(const ParamStore& ps, const TransformerConfig& cfg,
                                              const ad::Mat& context_val, int m, Rng& rng) {
    const int n = cfg.n_sites;
    std::vector<SpinConfig> samples(m, SpinConfig(n, -1));
    for (int j = 0; j < n; ++j) {
        // group samples by their prefix sigma[0..j)
        std::map<std::vector<int>, std::vector<int>> groups;
        for (int s = 0; s < m; ++s)
            groups[std::vector<int>(samples[s].begin(), samples[s].begin() + j)].push_back(s);

        std::vector<std::vector<int>> tok;
        tok.reserve(groups.size());
        for (const auto& [prefix, members] : groups) {
            std::vector<int> seq(j + 1);
            seq[0] = 0;
            for (int i = 0; i < j; ++i) seq[i + 1] = detail::token_index(prefix[i]);
            tok.push_back(std::move(seq));
        }

        ad::Tape t;
        t.grad_enabled = false;
        BoundParams bp = bind(t, ps, false);
        ad::Node* ctx = t.leaf(context_val, false);
        ad::Node* out4 = wavefunction_hidden(t, bp, cfg, ctx, tok);

        int g = 0;
        for (const auto& [prefix, members] : groups) {
            const Eigen::Index row = static_cast<Eigen::Index>(g) * (j + 1) + j;
            const double a = out4->val(row, 0), b = out4->val(row, 1);
            const double mx = std::max(a, b);
            const double p_up = std::exp(b - mx) / (std::exp(a - mx) + std::exp(b - mx));
            for (int s : members) samples[s][j] = rng.uniform() < p_up ? 1 : -1;
            ++g;
        }
    }
    return samples;
}

} // namespace noqs
