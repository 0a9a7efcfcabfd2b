#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace noqs::ad {

using Mat = Eigen::MatrixXd;

// One tape node carries a value and, optionally, a tangent (the directional
// derivative of the value along the time direction). Reverse mode propagates
// adjoints for both slots, so gradients of tangent-derived scalars (e.g.
// d log psi / dt) with respect to upstream parameters come out of the same
// sweep.
struct Node {
    Mat val;
    Mat dot;
    Mat bar;
    Mat dotbar;
    bool has_dot = false;
    bool has_bar = false;
    bool has_dotbar = false;
    bool requires_grad = false;
    std::function<void()> backward;

    void add_bar(const Mat& g) {
        if (!requires_grad) return;
        if (!has_bar) {
            bar = g;
            has_bar = true;
        } else {
            bar += g;
        }
    }
    void add_dotbar(const Mat& g) {
        if (!requires_grad) return;
        if (!has_dotbar) {
            dotbar = g;
            has_dotbar = true;
        } else {
            dotbar += g;
        }
    }
};

class Tape {
public:
    bool grad_enabled = true;

    Node* make(Mat v) {
        nodes_.push_back(std::make_unique<Node>());
        Node* n = nodes_.back().get();
        n->val = std::move(v);
        return n;
    }

    Node* leaf(Mat v, bool requires_grad = true) {
        Node* n = make(std::move(v));
        n->requires_grad = requires_grad && grad_enabled;
        return n;
    }

    Node* constant(Mat v) { return leaf(std::move(v), false); }

    Node* scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    Node* leaf_dual(Mat v, Mat vdot, bool requires_grad = true) {
        Node* n = leaf(std::move(v), requires_grad);
        n->dot = std::move(vdot);
        n->has_dot = true;
        return n;
    }

    // Reverse sweep from a scalar output.
    void backward(Node* out) {
        out->add_bar(Mat::Ones(out->val.rows(), out->val.cols()));
        run_backward();
    }

    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node* n = it->get();
            if ((n->has_bar || n->has_dotbar) && n->backward) n->backward();
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

namespace detail {

inline bool want_grad(const Tape& t, std::initializer_list<const Node*> ins) {
    if (!t.grad_enabled) return false;
    for (const Node* n : ins)
        if (n->requires_grad) return true;
    return false;
}

} // namespace detail

// ---------------- linear / bilinear ops ----------------

inline Node* matmul(Tape& t, Node* a, Node* b) {
    Node* o = t.make(a->val * b->val);
    if (a->has_dot || b->has_dot) {
        o->dot = Mat::Zero(o->val.rows(), o->val.cols());
        if (a->has_dot) o->dot += a->dot * b->val;
        if (b->has_dot) o->dot += a->val * b->dot;
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            if (o->has_bar) {
                a->add_bar(o->bar * b->val.transpose());
                b->add_bar(a->val.transpose() * o->bar);
            }
            if (o->has_dotbar) {
                if (b->has_dot) a->add_bar(o->dotbar * b->dot.transpose());
                if (a->has_dot) b->add_bar(a->dot.transpose() * o->dotbar);
                if (a->has_dot) a->add_dotbar(o->dotbar * b->val.transpose());
                if (b->has_dot) b->add_dotbar(a->val.transpose() * o->dotbar);
            }
        };
    }
    return o;
}

inline Node* add(Tape& t, Node* a, Node* b) {
    Node* o = t.make(a->val + b->val);
    if (a->has_dot || b->has_dot) {
        o->dot = a->has_dot ? a->dot : Mat::Zero(a->val.rows(), a->val.cols());
        if (b->has_dot) o->dot += b->dot;
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            if (o->has_bar) {
                a->add_bar(o->bar);
                b->add_bar(o->bar);
            }
            if (o->has_dotbar) {
                if (a->has_dot) a->add_dotbar(o->dotbar);
                if (b->has_dot) b->add_dotbar(o->dotbar);
            }
        };
    }
    return o;
}

inline Node* sub(Tape& t, Node* a, Node* b) {
    Node* o = t.make(a->val - b->val);
    if (a->has_dot || b->has_dot) {
        o->dot = a->has_dot ? a->dot : Mat::Zero(a->val.rows(), a->val.cols());
        if (b->has_dot) o->dot -= b->dot;
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            if (o->has_bar) {
                a->add_bar(o->bar);
                b->add_bar(-o->bar);
            }
            if (o->has_dotbar) {
                if (a->has_dot) a->add_dotbar(o->dotbar);
                if (b->has_dot) b->add_dotbar(-o->dotbar);
            }
        };
    }
    return o;
}

inline Node* scale(Tape& t, Node* a, double c) {
    Node* o = t.make(a->val * c);
    if (a->has_dot) {
        o->dot = a->dot * c;
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, c] {
            if (o->has_bar) a->add_bar(o->bar * c);
            if (o->has_dotbar && a->has_dot) a->add_dotbar(o->dotbar * c);
        };
    }
    return o;
}

inline Node* shift(Tape& t, Node* a, double c) {
    Node* o = t.make(a->val.array() + c);
    if (a->has_dot) {
        o->dot = a->dot;
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o] {
            if (o->has_bar) a->add_bar(o->bar);
            if (o->has_dotbar && a->has_dot) a->add_dotbar(o->dotbar);
        };
    }
    return o;
}

inline Node* transpose(Tape& t, Node* a) {
    Node* o = t.make(a->val.transpose());
    if (a->has_dot) {
        o->dot = a->dot.transpose();
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o] {
            if (o->has_bar) a->add_bar(o->bar.transpose());
            if (o->has_dotbar && a->has_dot) a->add_dotbar(o->dotbar.transpose());
        };
    }
    return o;
}

inline Node* hadamard(Tape& t, Node* a, Node* b) {
    Node* o = t.make(a->val.cwiseProduct(b->val));
    if (a->has_dot || b->has_dot) {
        o->dot = Mat::Zero(o->val.rows(), o->val.cols());
        if (a->has_dot) o->dot += a->dot.cwiseProduct(b->val);
        if (b->has_dot) o->dot += a->val.cwiseProduct(b->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            if (o->has_bar) {
                a->add_bar(o->bar.cwiseProduct(b->val));
                b->add_bar(o->bar.cwiseProduct(a->val));
            }
            if (o->has_dotbar) {
                if (b->has_dot) a->add_bar(o->dotbar.cwiseProduct(b->dot));
                if (a->has_dot) b->add_bar(o->dotbar.cwiseProduct(a->dot));
                if (a->has_dot) a->add_dotbar(o->dotbar.cwiseProduct(b->val));
                if (b->has_dot) b->add_dotbar(o->dotbar.cwiseProduct(a->val));
            }
        };
    }
    return o;
}

// ---------------- elementwise nonlinearities ----------------

enum class Cw { exp, log, sin, cos, square, rsqrt, recip, gelu };

namespace detail {

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) * 0.3989422804014326779399461; }
inline double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244008444)); }

inline double cw_f(Cw k, double x) {
    switch (k) {
        case Cw::exp: return std::exp(x);
        case Cw::log: return std::log(x);
        case Cw::sin: return std::sin(x);
        case Cw::cos: return std::cos(x);
        case Cw::square: return x * x;
        case Cw::rsqrt: return 1.0 / std::sqrt(x);
        case Cw::recip: return 1.0 / x;
        case Cw::gelu: return x * norm_cdf(x);
    }
    return 0;
}
inline double cw_d1(Cw k, double x) {
    switch (k) {
        case Cw::exp: return std::exp(x);
        case Cw::log: return 1.0 / x;
        case Cw::sin: return std::cos(x);
        case Cw::cos: return -std::sin(x);
        case Cw::square: return 2.0 * x;
        case Cw::rsqrt: return -0.5 / (x * std::sqrt(x));
        case Cw::recip: return -1.0 / (x * x);
        case Cw::gelu: return norm_cdf(x) + x * norm_pdf(x);
    }
    return 0;
}
inline double cw_d2(Cw k, double x) {
    switch (k) {
        case Cw::exp: return std::exp(x);
        case Cw::log: return -1.0 / (x * x);
        case Cw::sin: return -std::sin(x);
        case Cw::cos: return -std::cos(x);
        case Cw::square: return 2.0;
        case Cw::rsqrt: return 0.75 / (x * x * std::sqrt(x));
        case Cw::recip: return 2.0 / (x * x * x);
        case Cw::gelu: return norm_pdf(x) * (2.0 - x * x);
    }
    return 0;
}

} // namespace detail

inline Node* cw(Tape& t, Node* a, Cw kind) {
    Node* o = t.make(a->val.unaryExpr([kind](double x) { return detail::cw_f(kind, x); }));
    Mat d1;
    const bool need_d1 = a->has_dot || detail::want_grad(t, {a});
    if (need_d1) d1 = a->val.unaryExpr([kind](double x) { return detail::cw_d1(kind, x); });
    if (a->has_dot) {
        o->dot = d1.cwiseProduct(a->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, kind, d1] {
            if (o->has_bar) a->add_bar(d1.cwiseProduct(o->bar));
            if (o->has_dotbar && a->has_dot) {
                Mat d2 = a->val.unaryExpr([kind](double x) { return detail::cw_d2(kind, x); });
                a->add_bar(d2.cwiseProduct(a->dot).cwiseProduct(o->dotbar));
                a->add_dotbar(d1.cwiseProduct(o->dotbar));
            }
        };
    }
    return o;
}

// ---------------- structural ops ----------------

inline Node* gather_rows(Tape& t, Node* a, std::vector<int> idx) {
    const auto r = static_cast<Eigen::Index>(idx.size());
    Mat v(r, a->val.cols());
    for (Eigen::Index i = 0; i < r; ++i) v.row(i) = a->val.row(idx[i]);
    Node* o = t.make(std::move(v));
    if (a->has_dot) {
        Mat d(r, a->val.cols());
        for (Eigen::Index i = 0; i < r; ++i) d.row(i) = a->dot.row(idx[i]);
        o->dot = std::move(d);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, idx = std::move(idx)] {
            if (o->has_bar) {
                Mat g = Mat::Zero(a->val.rows(), a->val.cols());
                for (std::size_t i = 0; i < idx.size(); ++i)
                    g.row(idx[i]) += o->bar.row(static_cast<Eigen::Index>(i));
                a->add_bar(g);
            }
            if (o->has_dotbar && a->has_dot) {
                Mat g = Mat::Zero(a->val.rows(), a->val.cols());
                for (std::size_t i = 0; i < idx.size(); ++i)
                    g.row(idx[i]) += o->dotbar.row(static_cast<Eigen::Index>(i));
                a->add_dotbar(g);
            }
        };
    }
    return o;
}

inline Node* vconcat(Tape& t, Node* a, Node* b) {
    Mat v(a->val.rows() + b->val.rows(), a->val.cols());
    v << a->val, b->val;
    Node* o = t.make(std::move(v));
    if (a->has_dot || b->has_dot) {
        Mat d(o->val.rows(), o->val.cols());
        d << (a->has_dot ? a->dot : Mat::Zero(a->val.rows(), a->val.cols())),
            (b->has_dot ? b->dot : Mat::Zero(b->val.rows(), b->val.cols()));
        o->dot = std::move(d);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            const auto ra = a->val.rows(), rb = b->val.rows();
            if (o->has_bar) {
                a->add_bar(o->bar.topRows(ra));
                b->add_bar(o->bar.bottomRows(rb));
            }
            if (o->has_dotbar) {
                if (a->has_dot) a->add_dotbar(o->dotbar.topRows(ra));
                if (b->has_dot) b->add_dotbar(o->dotbar.bottomRows(rb));
            }
        };
    }
    return o;
}

inline Node* hconcat(Tape& t, const std::vector<Node*>& parts) {
    Eigen::Index cols = 0;
    for (Node* p : parts) cols += p->val.cols();
    const Eigen::Index rows = parts.front()->val.rows();
    Mat v(rows, cols);
    bool any_dot = false, any_grad = false;
    for (Node* p : parts) {
        any_dot |= p->has_dot;
        any_grad |= p->requires_grad;
    }
    Eigen::Index c = 0;
    for (Node* p : parts) {
        v.middleCols(c, p->val.cols()) = p->val;
        c += p->val.cols();
    }
    Node* o = t.make(std::move(v));
    if (any_dot) {
        Mat d(rows, cols);
        c = 0;
        for (Node* p : parts) {
            d.middleCols(c, p->val.cols()) =
                p->has_dot ? p->dot : Mat::Zero(rows, p->val.cols());
            c += p->val.cols();
        }
        o->dot = std::move(d);
        o->has_dot = true;
    }
    if (t.grad_enabled && any_grad) {
        o->requires_grad = true;
        o->backward = [parts, o] {
            Eigen::Index c2 = 0;
            for (Node* p : parts) {
                if (o->has_bar) p->add_bar(o->bar.middleCols(c2, p->val.cols()));
                if (o->has_dotbar && p->has_dot)
                    p->add_dotbar(o->dotbar.middleCols(c2, p->val.cols()));
                c2 += p->val.cols();
            }
        };
    }
    return o;
}

inline Node* slice_cols(Tape& t, Node* a, int c0, int nc) {
    Node* o = t.make(a->val.middleCols(c0, nc));
    if (a->has_dot) {
        o->dot = a->dot.middleCols(c0, nc);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, c0, nc] {
            if (o->has_bar) {
                Mat g = Mat::Zero(a->val.rows(), a->val.cols());
                g.middleCols(c0, nc) = o->bar;
                a->add_bar(g);
            }
            if (o->has_dotbar && a->has_dot) {
                Mat g = Mat::Zero(a->val.rows(), a->val.cols());
                g.middleCols(c0, nc) = o->dotbar;
                a->add_dotbar(g);
            }
        };
    }
    return o;
}

inline Node* rowsum(Tape& t, Node* a) {
    Node* o = t.make(a->val.rowwise().sum());
    if (a->has_dot) {
        o->dot = a->dot.rowwise().sum();
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o] {
            if (o->has_bar) a->add_bar(o->bar * Mat::Ones(1, a->val.cols()));
            if (o->has_dotbar && a->has_dot)
                a->add_dotbar(o->dotbar * Mat::Ones(1, a->val.cols()));
        };
    }
    return o;
}

inline Node* total_sum(Tape& t, Node* a) {
    Node* o = t.make(Mat::Constant(1, 1, a->val.sum()));
    if (a->has_dot) {
        o->dot = Mat::Constant(1, 1, a->dot.sum());
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o] {
            if (o->has_bar)
                a->add_bar(Mat::Constant(a->val.rows(), a->val.cols(), o->bar(0, 0)));
            if (o->has_dotbar && a->has_dot)
                a->add_dotbar(Mat::Constant(a->val.rows(), a->val.cols(), o->dotbar(0, 0)));
        };
    }
    return o;
}

// sums each consecutive block of `block` rows
inline Node* block_rowsum(Tape& t, Node* a, int block) {
    const Eigen::Index nb = a->val.rows() / block;
    auto reduce = [&](const Mat& m) {
        Mat r = Mat::Zero(nb, m.cols());
        for (Eigen::Index i = 0; i < nb; ++i) r.row(i) = m.middleRows(i * block, block).colwise().sum();
        return r;
    };
    Node* o = t.make(reduce(a->val));
    if (a->has_dot) {
        o->dot = reduce(a->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, block, nb] {
            auto expand = [&](const Mat& g) {
                Mat e(a->val.rows(), a->val.cols());
                for (Eigen::Index i = 0; i < nb; ++i)
                    e.middleRows(i * block, block) = g.row(i).replicate(block, 1);
                return e;
            };
            if (o->has_bar) a->add_bar(expand(o->bar));
            if (o->has_dotbar && a->has_dot) a->add_dotbar(expand(o->dotbar));
        };
    }
    return o;
}

// out.row(i) = a.row(i) + b.row(0)
inline Node* add_rowbc(Tape& t, Node* a, Node* b) {
    Node* o = t.make(a->val.rowwise() + b->val.row(0));
    if (a->has_dot || b->has_dot) {
        o->dot = a->has_dot ? a->dot : Mat::Zero(a->val.rows(), a->val.cols());
        if (b->has_dot) o->dot.rowwise() += b->dot.row(0);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o] {
            if (o->has_bar) {
                a->add_bar(o->bar);
                b->add_bar(o->bar.colwise().sum());
            }
            if (o->has_dotbar) {
                if (a->has_dot) a->add_dotbar(o->dotbar);
                if (b->has_dot) b->add_dotbar(o->dotbar.colwise().sum());
            }
        };
    }
    return o;
}

// out.row(i) = a.row(i) .* g.row(0)
inline Node* mul_rowbc(Tape& t, Node* a, Node* g) {
    auto bc = [&](const Mat& m, const Mat& row) { return Mat(m.array().rowwise() * row.row(0).array()); };
    Node* o = t.make(bc(a->val, g->val));
    if (a->has_dot || g->has_dot) {
        o->dot = Mat::Zero(a->val.rows(), a->val.cols());
        if (a->has_dot) o->dot += bc(a->dot, g->val);
        if (g->has_dot) o->dot += bc(a->val, g->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, g})) {
        o->requires_grad = true;
        o->backward = [a, g, o, bc] {
            if (o->has_bar) {
                a->add_bar(bc(o->bar, g->val));
                g->add_bar(o->bar.cwiseProduct(a->val).colwise().sum());
            }
            if (o->has_dotbar) {
                if (g->has_dot) a->add_bar(bc(o->dotbar, g->dot));
                if (a->has_dot) g->add_bar(o->dotbar.cwiseProduct(a->dot).colwise().sum());
                if (a->has_dot) a->add_dotbar(bc(o->dotbar, g->val));
                if (g->has_dot) g->add_dotbar(o->dotbar.cwiseProduct(a->val).colwise().sum());
            }
        };
    }
    return o;
}

// out.row(i) = a.row(i) + sign * s(i)  with s of shape (R x 1)
inline Node* add_colbc(Tape& t, Node* a, Node* s, double sign = 1.0) {
    auto bc = [sign](const Mat& m, const Mat& col) {
        return Mat(m.array().colwise() + sign * col.col(0).array());
    };
    Node* o = t.make(bc(a->val, s->val));
    if (a->has_dot || s->has_dot) {
        o->dot = a->has_dot ? a->dot : Mat::Zero(a->val.rows(), a->val.cols());
        if (s->has_dot) o->dot.array().colwise() += sign * s->dot.col(0).array();
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, s})) {
        o->requires_grad = true;
        o->backward = [a, s, o, sign] {
            if (o->has_bar) {
                a->add_bar(o->bar);
                s->add_bar(sign * o->bar.rowwise().sum());
            }
            if (o->has_dotbar) {
                if (a->has_dot) a->add_dotbar(o->dotbar);
                if (s->has_dot) s->add_dotbar(sign * o->dotbar.rowwise().sum());
            }
        };
    }
    return o;
}

// out.row(i) = a.row(i) * s(i)  with s of shape (R x 1)
inline Node* rowscale(Tape& t, Node* a, Node* s) {
    auto bc = [](const Mat& m, const Mat& col) { return Mat(m.array().colwise() * col.col(0).array()); };
    Node* o = t.make(bc(a->val, s->val));
    if (a->has_dot || s->has_dot) {
        o->dot = Mat::Zero(a->val.rows(), a->val.cols());
        if (a->has_dot) o->dot += bc(a->dot, s->val);
        if (s->has_dot) o->dot += bc(a->val, s->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, s})) {
        o->requires_grad = true;
        o->backward = [a, s, o, bc] {
            if (o->has_bar) {
                a->add_bar(bc(o->bar, s->val));
                s->add_bar(o->bar.cwiseProduct(a->val).rowwise().sum());
            }
            if (o->has_dotbar) {
                if (s->has_dot) a->add_bar(bc(o->dotbar, s->dot));
                if (a->has_dot) s->add_bar(o->dotbar.cwiseProduct(a->dot).rowwise().sum());
                if (a->has_dot) a->add_dotbar(bc(o->dotbar, s->val));
                if (s->has_dot) s->add_dotbar(o->dotbar.cwiseProduct(a->val).rowwise().sum());
            }
        };
    }
    return o;
}

// Per-block A_i * B_i^T. a, b are (S*r x d); output is (S*r x r).
inline Node* bmm_nt(Tape& t, Node* a, Node* b, int r) {
    const Eigen::Index S = a->val.rows() / r;
    auto run = [&](const Mat& x, const Mat& y) {
        Mat o(x.rows(), r);
        for (Eigen::Index i = 0; i < S; ++i)
            o.middleRows(i * r, r) = x.middleRows(i * r, r) * y.middleRows(i * r, r).transpose();
        return o;
    };
    Node* o = t.make(run(a->val, b->val));
    if (a->has_dot || b->has_dot) {
        o->dot = Mat::Zero(o->val.rows(), o->val.cols());
        if (a->has_dot) o->dot += run(a->dot, b->val);
        if (b->has_dot) o->dot += run(a->val, b->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o, r, S] {
            auto accum = [&](Node* x, const Mat& g, const Mat& y, bool to_dot) {
                // d(A B^T)/dA contraction: gbar_i * B_i ; d/dB: gbar_i^T * A_i
                Mat out(x->val.rows(), x->val.cols());
                for (Eigen::Index i = 0; i < S; ++i)
                    out.middleRows(i * r, r) = g.middleRows(i * r, r) * y.middleRows(i * r, r);
                if (to_dot)
                    x->add_dotbar(out);
                else
                    x->add_bar(out);
            };
            auto accum_bt = [&](Node* x, const Mat& g, const Mat& y, bool to_dot) {
                Mat out(x->val.rows(), x->val.cols());
                for (Eigen::Index i = 0; i < S; ++i)
                    out.middleRows(i * r, r) =
                        g.middleRows(i * r, r).transpose() * y.middleRows(i * r, r);
                if (to_dot)
                    x->add_dotbar(out);
                else
                    x->add_bar(out);
            };
            if (o->has_bar) {
                accum(a, o->bar, b->val, false);
                accum_bt(b, o->bar, a->val, false);
            }
            if (o->has_dotbar) {
                if (b->has_dot) accum(a, o->dotbar, b->dot, false);
                if (a->has_dot) accum_bt(b, o->dotbar, a->dot, false);
                if (a->has_dot) accum(a, o->dotbar, b->val, true);
                if (b->has_dot) accum_bt(b, o->dotbar, a->val, true);
            }
        };
    }
    return o;
}

// Per-block S_i * V_i. s is (S*r x c), v is (S*c x d); output is (S*r x d).
inline Node* bmm_nn(Tape& t, Node* a, Node* b, int r) {
    const int c = static_cast<int>(a->val.cols());
    const Eigen::Index S = a->val.rows() / r;
    auto run = [&](const Mat& x, const Mat& y) {
        Mat o(x.rows(), y.cols());
        for (Eigen::Index i = 0; i < S; ++i)
            o.middleRows(i * r, r) = x.middleRows(i * r, r) * y.middleRows(i * c, c);
        return o;
    };
    Node* o = t.make(run(a->val, b->val));
    if (a->has_dot || b->has_dot) {
        o->dot = Mat::Zero(o->val.rows(), o->val.cols());
        if (a->has_dot) o->dot += run(a->dot, b->val);
        if (b->has_dot) o->dot += run(a->val, b->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a, b})) {
        o->requires_grad = true;
        o->backward = [a, b, o, r, c, S] {
            auto accum_a = [&](const Mat& g, const Mat& y, bool to_dot) {
                Mat out(a->val.rows(), a->val.cols());
                for (Eigen::Index i = 0; i < S; ++i)
                    out.middleRows(i * r, r) =
                        g.middleRows(i * r, r) * y.middleRows(i * c, c).transpose();
                if (to_dot)
                    a->add_dotbar(out);
                else
                    a->add_bar(out);
            };
            auto accum_b = [&](const Mat& g, const Mat& x, bool to_dot) {
                Mat out(b->val.rows(), b->val.cols());
                for (Eigen::Index i = 0; i < S; ++i)
                    out.middleRows(i * c, c) =
                        x.middleRows(i * r, r).transpose() * g.middleRows(i * r, r);
                if (to_dot)
                    b->add_dotbar(out);
                else
                    b->add_bar(out);
            };
            if (o->has_bar) {
                accum_a(o->bar, b->val, false);
                accum_b(o->bar, a->val, false);
            }
            if (o->has_dotbar) {
                if (b->has_dot) accum_a(o->dotbar, b->dot, false);
                if (a->has_dot) accum_b(o->dotbar, a->dot, false);
                if (a->has_dot) accum_a(o->dotbar, b->val, true);
                if (b->has_dot) accum_b(o->dotbar, a->val, true);
            }
        };
    }
    return o;
}

// Pair a value node with its time derivative: the result carries m's value
// and mdot's value as tangent. Adjoints route back to the respective inputs.
inline Node* dualize(Tape& t, Node* m, Node* mdot) {
    Node* o = t.make(m->val);
    o->dot = mdot->val;
    o->has_dot = true;
    if (detail::want_grad(t, {m, mdot})) {
        o->requires_grad = true;
        o->backward = [m, mdot, o] {
            if (o->has_bar) m->add_bar(o->bar);
            if (o->has_dotbar) mdot->add_bar(o->dotbar);
        };
    }
    return o;
}

// Extract the tangent as a plain value node.
inline Node* tangent_of(Tape& t, Node* a) {
    if (!a->has_dot) throw std::logic_error("tangent_of: input has no tangent");
    Node* o = t.make(a->dot);
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o] {
            if (o->has_bar) a->add_dotbar(o->bar);
        };
    }
    return o;
}

// Reshape a (1 x r*c) row vector to (r x c), row-major.
inline Node* reshape_rowvec(Tape& t, Node* a, int r, int c) {
    auto run = [&](const Mat& m) {
        Mat o(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) o(i, j) = m(0, i * c + j);
        return o;
    };
    Node* o = t.make(run(a->val));
    if (a->has_dot) {
        o->dot = run(a->dot);
        o->has_dot = true;
    }
    if (detail::want_grad(t, {a})) {
        o->requires_grad = true;
        o->backward = [a, o, r, c] {
            auto flat = [&](const Mat& g) {
                Mat f(1, r * c);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) f(0, i * c + j) = g(i, j);
                return f;
            };
            if (o->has_bar) a->add_bar(flat(o->bar));
            if (o->has_dotbar && a->has_dot) a->add_dotbar(flat(o->dotbar));
        };
    }
    return o;
}

// ---------------- composites ----------------

// Row-wise softmax; the shift by the row max is treated as a constant, which
// leaves both the value and all derivatives unchanged.
inline Node* row_softmax(Tape& t, Node* a) {
    Node* shift_const = t.constant(a->val.rowwise().maxCoeff());
    Node* z = add_colbc(t, a, shift_const, -1.0);
    Node* e = cw(t, z, Cw::exp);
    Node* s = rowsum(t, e);
    Node* r = cw(t, s, Cw::recip);
    return rowscale(t, e, r);
}

// Row-wise layer normalization with learnable gain/bias (1 x d each).
inline Node* layer_norm(Tape& t, Node* x, Node* gain, Node* bias, double eps = 1e-5) {
    const double d = static_cast<double>(x->val.cols());
    Node* mu = scale(t, rowsum(t, x), 1.0 / d);
    Node* xc = add_colbc(t, x, mu, -1.0);
    Node* var = scale(t, rowsum(t, cw(t, xc, Cw::square)), 1.0 / d);
    Node* isd = cw(t, shift(t, var, eps), Cw::rsqrt);
    Node* xn = rowscale(t, xc, isd);
    return add_rowbc(t, mul_rowbc(t, xn, gain), bias);
}

} // namespace noqs::ad
