#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noqs/errors.hpp"
#include "noqs/fourier.hpp"
#include "noqs/rng.hpp"

namespace noqs {

struct TimeGrid {
    double t_max = 1.0;
    int n_t = 2;

    TimeGrid() = default;
    TimeGrid(double tmax, int nt) : t_max(tmax), n_t(nt) {
        if (nt < 2) throw std::invalid_argument("TimeGrid: need at least 2 points");
        if (tmax <= 0) throw std::invalid_argument("TimeGrid: t_max must be positive");
    }

    double dt() const { return t_max / (n_t - 1); }
    double point(int j) const { return j * t_max / (n_t - 1); }
    std::vector<double> points() const {
        std::vector<double> p(n_t);
        for (int j = 0; j < n_t; ++j) p[j] = point(j);
        return p;
    }
    bool operator==(const TimeGrid& o) const { return t_max == o.t_max && n_t == o.n_t; }
};

enum class FieldKind { raw, constant, fourier, gaussian, tanh_ramp };

inline const char* field_kind_name(FieldKind k) {
    switch (k) {
        case FieldKind::raw: return "raw";
        case FieldKind::constant: return "constant";
        case FieldKind::fourier: return "fourier";
        case FieldKind::gaussian: return "gaussian";
        case FieldKind::tanh_ramp: return "tanh";
    }
    return "raw";
}

inline FieldKind field_kind_from(const std::string& s) {
    if (s == "raw") return FieldKind::raw;
    if (s == "constant") return FieldKind::constant;
    if (s == "fourier") return FieldKind::fourier;
    if (s == "gaussian") return FieldKind::gaussian;
    if (s == "tanh") return FieldKind::tanh_ramp;
    throw io_error("unknown field kind: " + s);
}

// Closed-form evaluator for one driving field.
struct FieldForm {
    FieldKind kind = FieldKind::raw;
    // constant / fourier
    double offset = 0.0;
    // fourier: offset + sum_m amp[m] * sin((m+1)*omega*t + phase[m])
    double omega = 0.0;
    std::vector<double> amp, phase;
    // gaussian: baseline + amplitude * exp(-(t-center)^2 / (2 width^2))
    // tanh:     start + (stop-start) * (1 + tanh((t-center)*steepness)) / 2
    double amplitude = 0.0, center = 0.0, width = 1.0, baseline = 0.0;
    double start = 0.0, stop = 0.0, steepness = 1.0;

    double eval(double t) const {
        switch (kind) {
            case FieldKind::constant:
                return offset;
            case FieldKind::fourier: {
                double v = offset;
                for (std::size_t m = 0; m < amp.size(); ++m)
                    v += amp[m] * std::sin((m + 1) * omega * t + phase[m]);
                return v;
            }
            case FieldKind::gaussian:
                return baseline + amplitude * std::exp(-(t - center) * (t - center) / (2 * width * width));
            case FieldKind::tanh_ramp:
                return start + (stop - start) * (1.0 + std::tanh((t - center) * steepness)) / 2.0;
            case FieldKind::raw:
                throw std::logic_error("FieldForm::eval on raw field");
        }
        return 0.0;
    }

    static FieldForm make_constant(double value) {
        FieldForm f;
        f.kind = FieldKind::constant;
        f.offset = value;
        return f;
    }
};

struct FourierProtocolSpec {
    int n_max = 10;
    double omega = 10.0;
    double h_x0 = 1.0;
    double h_z0 = 0.0;
    double amp_scale_x = 0.6;
    double amp_scale_z = 0.05;
};

// Sampled driving fields on a uniform grid, with closed-form evaluators when
// available. Immutable by convention after construction.
struct Protocol {
    TimeGrid grid;
    std::vector<double> hx, hz;
    bool has_closed_form = false;
    FieldForm fx, fz;
    std::map<std::string, std::string> metadata;

    // Off-grid evaluation: closed form when present, else trigonometric
    // interpolation of the sampled values.
    double hx_at(double t) const { return field_at(fx, hx, t); }
    double hz_at(double t) const { return field_at(fz, hz, t); }

private:
    double field_at(const FieldForm& form, const std::vector<double>& samples, double t) const {
        if (has_closed_form && form.kind != FieldKind::raw) return form.eval(t);
        auto interp = TrigInterpolant::span(samples, 0.0, grid.dt());
        return interp.eval(t);
    }
};

inline Protocol sample_on_grid(const TimeGrid& grid, const FieldForm& fx, const FieldForm& fz) {
    Protocol p;
    p.grid = grid;
    p.fx = fx;
    p.fz = fz;
    p.has_closed_form = true;
    p.hx.resize(grid.n_t);
    p.hz.resize(grid.n_t);
    for (int j = 0; j < grid.n_t; ++j) {
        const double t = grid.point(j);
        p.hx[j] = fx.eval(t);
        p.hz[j] = fz.eval(t);
    }
    return p;
}

// h(t) = h0 + sum_{m=1}^{n_max} a_m sin(m w t + phi_m), amplitudes drawn with
// stddev amp_scale / m^{3/2}, phases uniform in (0, 2pi].
inline FieldForm sample_fourier_field(double offset, double omega, int n_max, double amp_scale,
                                      Rng& rng) {
    FieldForm f;
    f.kind = FieldKind::fourier;
    f.offset = offset;
    f.omega = omega;
    f.amp.resize(n_max);
    f.phase.resize(n_max);
    for (int m = 1; m <= n_max; ++m) {
        f.amp[m - 1] = amp_scale / std::pow(static_cast<double>(m), 1.5) * rng.normal();
        f.phase[m - 1] = kTwoPi * (1.0 - rng.uniform()); // (0, 2pi]
    }
    return f;
}

inline Protocol sample_fourier_protocol(const FourierProtocolSpec& spec, const TimeGrid& grid,
                                        std::uint64_t rng_seed) {
    if (spec.n_max < 1) throw std::invalid_argument("sample_fourier_protocol: n_max >= 1 required");
    if (spec.omega <= 0) throw std::invalid_argument("sample_fourier_protocol: omega > 0 required");
    Rng rx = Rng::substream(rng_seed, {0x68});
    Rng rz = Rng::substream(rng_seed, {0x7a});
    FieldForm fx = sample_fourier_field(spec.h_x0, spec.omega, spec.n_max, spec.amp_scale_x, rx);
    FieldForm fz = sample_fourier_field(spec.h_z0, spec.omega, spec.n_max, spec.amp_scale_z, rz);
    Protocol p = sample_on_grid(grid, fx, fz);
    p.metadata["seed"] = std::to_string(rng_seed);
    return p;
}

inline Protocol make_gaussian_pulse(const TimeGrid& grid, double amplitude, double center,
                                    double width, double baseline) {
    if (width <= 0) throw std::invalid_argument("make_gaussian_pulse: width > 0 required");
    FieldForm fx;
    fx.kind = FieldKind::gaussian;
    fx.amplitude = amplitude;
    fx.center = center;
    fx.width = width;
    fx.baseline = baseline;
    return sample_on_grid(grid, fx, FieldForm::make_constant(0.0));
}

inline Protocol make_tanh_ramp(const TimeGrid& grid, double start, double stop, double center,
                               double steepness) {
    if (steepness <= 0) throw std::invalid_argument("make_tanh_ramp: steepness > 0 required");
    FieldForm fx;
    fx.kind = FieldKind::tanh_ramp;
    fx.start = start;
    fx.stop = stop;
    fx.center = center;
    fx.steepness = steepness;
    return sample_on_grid(grid, fx, FieldForm::make_constant(0.0));
}

inline Protocol with_hz(Protocol p, const FieldForm& fz) {
    p.fz = fz;
    for (int j = 0; j < p.grid.n_t; ++j) p.hz[j] = fz.eval(p.grid.point(j));
    return p;
}

// Closed-form protocols are re-evaluated analytically; raw protocols are
// resampled by trigonometric interpolation.
inline Protocol resample(const Protocol& p, const TimeGrid& new_grid) {
    if (p.grid == new_grid) return p;
    if (p.has_closed_form) {
        Protocol q = sample_on_grid(new_grid, p.fx, p.fz);
        q.metadata = p.metadata;
        return q;
    }
    Protocol q;
    q.grid = new_grid;
    q.metadata = p.metadata;
    q.has_closed_form = false;
    q.hx.resize(new_grid.n_t);
    q.hz.resize(new_grid.n_t);
    auto ix = TrigInterpolant::span(p.hx, 0.0, p.grid.dt());
    auto iz = TrigInterpolant::span(p.hz, 0.0, p.grid.dt());
    for (int j = 0; j < new_grid.n_t; ++j) {
        const double t = new_grid.point(j);
        q.hx[j] = ix.eval(t);
        q.hz[j] = iz.eval(t);
    }
    return q;
}

// ---- file format: '#' key=value header lines, then rows "t hx hz" ----

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string trim_ws(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string join17(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += fmt17(v[i]);
    }
    return s;
}

inline std::vector<double> split17(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

inline void write_field_form(std::ostream& os, const std::string& pfx, const FieldForm& f) {
    os << "# " << pfx << ".kind=" << field_kind_name(f.kind) << "\n";
    switch (f.kind) {
        case FieldKind::raw:
            break;
        case FieldKind::constant:
            os << "# " << pfx << ".offset=" << fmt17(f.offset) << "\n";
            break;
        case FieldKind::fourier:
            os << "# " << pfx << ".offset=" << fmt17(f.offset) << "\n";
            os << "# " << pfx << ".omega=" << fmt17(f.omega) << "\n";
            os << "# " << pfx << ".amp=" << join17(f.amp) << "\n";
            os << "# " << pfx << ".phase=" << join17(f.phase) << "\n";
            break;
        case FieldKind::gaussian:
            os << "# " << pfx << ".amplitude=" << fmt17(f.amplitude) << "\n";
            os << "# " << pfx << ".center=" << fmt17(f.center) << "\n";
            os << "# " << pfx << ".width=" << fmt17(f.width) << "\n";
            os << "# " << pfx << ".baseline=" << fmt17(f.baseline) << "\n";
            break;
        case FieldKind::tanh_ramp:
            os << "# " << pfx << ".start=" << fmt17(f.start) << "\n";
            os << "# " << pfx << ".stop=" << fmt17(f.stop) << "\n";
            os << "# " << pfx << ".center=" << fmt17(f.center) << "\n";
            os << "# " << pfx << ".steepness=" << fmt17(f.steepness) << "\n";
            break;
    }
}

inline FieldForm read_field_form(const std::map<std::string, std::string>& kv,
                                 const std::string& pfx) {
    FieldForm f;
    auto get = [&](const std::string& key) -> std::optional<std::string> {
        auto it = kv.find(pfx + "." + key);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };
    auto kind = get("kind");
    f.kind = kind ? field_kind_from(*kind) : FieldKind::raw;
    switch (f.kind) {
        case FieldKind::raw:
            break;
        case FieldKind::constant:
            f.offset = std::stod(get("offset").value_or("0"));
            break;
        case FieldKind::fourier:
            f.offset = std::stod(get("offset").value_or("0"));
            f.omega = std::stod(get("omega").value_or("0"));
            f.amp = split17(get("amp").value_or(""));
            f.phase = split17(get("phase").value_or(""));
            break;
        case FieldKind::gaussian:
            f.amplitude = std::stod(get("amplitude").value_or("0"));
            f.center = std::stod(get("center").value_or("0"));
            f.width = std::stod(get("width").value_or("1"));
            f.baseline = std::stod(get("baseline").value_or("0"));
            break;
        case FieldKind::tanh_ramp:
            f.start = std::stod(get("start").value_or("0"));
            f.stop = std::stod(get("stop").value_or("0"));
            f.center = std::stod(get("center").value_or("0"));
            f.steepness = std::stod(get("steepness").value_or("1"));
            break;
    }
    return f;
}

} // namespace detail

inline void write_protocol(std::ostream& os, const Protocol& p) {
    os << "# format=noqs-protocol-v1\n";
    os << "# t_max=" << detail::fmt17(p.grid.t_max) << "\n";
    os << "# n_t=" << p.grid.n_t << "\n";
    os << "# closed_form=" << (p.has_closed_form ? 1 : 0) << "\n";
    detail::write_field_form(os, "x", p.has_closed_form ? p.fx : FieldForm{});
    detail::write_field_form(os, "z", p.has_closed_form ? p.fz : FieldForm{});
    for (const auto& [k, v] : p.metadata) os << "# meta." << k << "=" << v << "\n";
    for (int j = 0; j < p.grid.n_t; ++j)
        os << detail::fmt17(p.grid.point(j)) << " " << detail::fmt17(p.hx[j]) << " "
           << detail::fmt17(p.hz[j]) << "\n";
}

inline void write_protocol(const std::string& path, const Protocol& p) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    write_protocol(os, p);
    if (!os) throw io_error("write failed: " + path);
}

inline Protocol read_protocol(std::istream& is) {
    std::map<std::string, std::string> kv;
    std::vector<double> t, hx, hz;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(1, eq - 1);
            while (!key.empty() && key.front() == ' ') key.erase(key.begin());
            while (!key.empty() && key.back() == ' ') key.pop_back();
            kv[key] = line.substr(eq + 1);
            continue;
        }
        std::stringstream ss(line);
        double a, b, c;
        if (!(ss >> a >> b >> c)) throw io_error("malformed protocol row: " + line);
        t.push_back(a);
        hx.push_back(b);
        hz.push_back(c);
    }
    if (!kv.count("t_max") || !kv.count("n_t")) throw io_error("protocol header missing t_max/n_t");
    Protocol p;
    p.grid = TimeGrid(std::stod(kv["t_max"]), std::stoi(kv["n_t"]));
    if (static_cast<int>(hx.size()) != p.grid.n_t)
        throw io_error("protocol row count does not match n_t header");
    p.hx = hx;
    p.hz = hz;
    p.has_closed_form = kv.count("closed_form") && kv["closed_form"] == "1";
    if (p.has_closed_form) {
        p.fx = detail::read_field_form(kv, "x");
        p.fz = detail::read_field_form(kv, "z");
    }
    for (const auto& [k, v] : kv)
        if (k.rfind("meta.", 0) == 0) p.metadata[k.substr(5)] = v;
    return p;
}

inline Protocol read_protocol(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open protocol file: " + path);
    return read_protocol(is);
}

} // namespace noqs
