#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace noqs {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Real DFT coefficients of one period of n uniform samples:
//   f_hat_k = sum_j f_j exp(-i 2 pi k j / n),  k = 0 .. n_keep-1.
// Direct O(n^2) evaluation; grids here are a few hundred points.
inline std::vector<std::complex<double>> dft_truncated(const std::vector<double>& f, int n_keep) {
    const int n = static_cast<int>(f.size());
    std::vector<std::complex<double>> out(n_keep);
    for (int k = 0; k < n_keep; ++k) {
        double re = 0.0, im = 0.0;
        const double w = kTwoPi * k / n;
        for (int j = 0; j < n; ++j) {
            re += f[j] * std::cos(w * j);
            im -= f[j] * std::sin(w * j);
        }
        out[k] = {re, im};
    }
    return out;
}

// Band-limited trigonometric interpolant of uniformly sampled data.
//
// Two sampling conventions:
//  - periodic(): the n samples cover exactly one period n*dt (endpoint
//    excluded). No detrending.
//  - span(): the n samples cover [t0, t0 + (n-1)*dt] endpoint included.
//    The linear trend between the endpoints is removed, the remaining
//    wrap-continuous signal is transformed with period (n-1)*dt, and the
//    trend is added back. The interpolant passes through every sample when
//    all modes are kept.
class TrigInterpolant {
public:
    static TrigInterpolant periodic(const std::vector<double>& f, double t0, double dt,
                                    int n_keep = -1) {
        return TrigInterpolant(f, t0, dt, n_keep, false);
    }

    static TrigInterpolant span(const std::vector<double>& f, double t0, double dt,
                                int n_keep = -1) {
        return TrigInterpolant(f, t0, dt, n_keep, true);
    }

    double period() const { return period_; }

    double eval(double t) const {
        const double x = (t - t0_) / period_;
        double v = coeff_[0].real() / m_;
        for (int k = 1; k < static_cast<int>(coeff_.size()); ++k) {
            const double w = kTwoPi * k * x;
            const double amp = (nyquist_halved_ && k == m_ / 2) ? 1.0 : 2.0;
            v += amp / m_ * (coeff_[k].real() * std::cos(w) - coeff_[k].imag() * std::sin(w));
        }
        return v + offset_ + slope_ * (t - t0_);
    }

    double deriv(double t) const {
        const double x = (t - t0_) / period_;
        double v = 0.0;
        for (int k = 1; k < static_cast<int>(coeff_.size()); ++k) {
            const double wk = kTwoPi * k / period_;
            const double w = kTwoPi * k * x;
            const double amp = (nyquist_halved_ && k == m_ / 2) ? 1.0 : 2.0;
            v += amp / m_ * wk * (-coeff_[k].real() * std::sin(w) - coeff_[k].imag() * std::cos(w));
        }
        return v + slope_;
    }

private:
    TrigInterpolant(const std::vector<double>& f, double t0, double dt, int n_keep, bool spanning) {
        const int n = static_cast<int>(f.size());
        if (n < (spanning ? 3 : 2))
            throw std::invalid_argument("TrigInterpolant: too few samples");
        if (dt <= 0) throw std::invalid_argument("TrigInterpolant: dt must be positive");
        t0_ = t0;
        m_ = spanning ? n - 1 : n;
        period_ = m_ * dt;
        std::vector<double> g(m_);
        if (spanning) {
            offset_ = f[0];
            slope_ = (f[n - 1] - f[0]) / ((n - 1) * dt);
            for (int j = 0; j < m_; ++j) g[j] = f[j] - offset_ - slope_ * (j * dt);
        } else {
            for (int j = 0; j < m_; ++j) g[j] = f[j];
        }
        if (n_keep < 0 || n_keep > m_ / 2 + 1) n_keep = m_ / 2 + 1;
        coeff_ = dft_truncated(g, n_keep);
        nyquist_halved_ = (m_ % 2 == 0) && (n_keep == m_ / 2 + 1);
    }

    std::vector<std::complex<double>> coeff_;
    int m_ = 0;
    double t0_ = 0, period_ = 1, offset_ = 0, slope_ = 0;
    bool nyquist_halved_ = false;
};

// Spectral derivative of one period of uniform samples (endpoint excluded):
// transform, keep modes k <= k_max, multiply by i*omega_k, transform back.
// pad_fraction > 0 zero-pads the linearly detrended signal before the
// transform, for data that does not wrap around.
inline std::vector<double> spectral_derivative(const std::vector<double>& series, int k_max,
                                               double dt, double pad_fraction = 0.0) {
    const int n = static_cast<int>(series.size());
    if (n < 2 * k_max) throw std::invalid_argument("spectral_derivative: series too short for k_max");
    if (dt <= 0) throw std::invalid_argument("spectral_derivative: dt must be positive");
    if (pad_fraction <= 0.0) {
        auto interp = TrigInterpolant::periodic(series, 0.0, dt, std::min(k_max + 1, n / 2 + 1));
        std::vector<double> out(n);
        for (int j = 0; j < n; ++j) out[j] = interp.deriv(j * dt);
        return out;
    }
    const double a = series.front();
    const double b = (series.back() - series.front()) / ((n - 1) * dt);
    const int n_pad = n + static_cast<int>(std::ceil(pad_fraction * n));
    std::vector<double> g(n_pad, 0.0);
    for (int j = 0; j < n; ++j) g[j] = series[j] - a - b * (j * dt);
    auto interp = TrigInterpolant::periodic(g, 0.0, dt, std::min(k_max + 1, n_pad / 2 + 1));
    std::vector<double> out(n);
    for (int j = 0; j < n; ++j) out[j] = interp.deriv(j * dt) + b;
    return out;
}

} // namespace noqs
