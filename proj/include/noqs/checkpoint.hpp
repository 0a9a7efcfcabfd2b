#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "noqs/sha256.hpp"
#include "noqs/training.hpp"

namespace noqs {

// Full resumable training state.
struct TrainState {
    Model model;
    Adam adam;
    long step = 0;
    std::uint64_t seed = 1;
};

namespace detail {

inline void append_le_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double read_le_f64(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void append_mat(std::string& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) append_le_f64(out, m(i, j));
}

inline void read_mat(const std::string& payload, std::size_t& off, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = read_le_f64(payload.data() + off);
            off += 8;
        }
}

// Writes content to path via a temp file + rename, so readers never observe a
// partially written checkpoint.
inline void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw io_error("cannot open for writing: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw io_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw io_error("cannot rename " + tmp + " to " + path);
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& st) {
    const Model& m = st.model;
    const Adam& adam = st.adam;
    std::string payload;
    payload.reserve(m.params.total_count() * 24);
    for (std::size_t i = 0; i < m.params.size(); ++i) detail::append_mat(payload, m.params.at(i));
    auto& a = const_cast<Adam&>(adam);
    if (a.moments1().size() != m.params.size())
        throw io_error("optimizer state does not match parameter store");
    for (const auto& mat : a.moments1()) detail::append_mat(payload, mat);
    for (const auto& mat : a.moments2()) detail::append_mat(payload, mat);

    std::ostringstream h;
    h << "noqs-checkpoint-v1\n";
    h << "lattice.lx=" << m.lat.lx << "\nlattice.ly=" << m.lat.ly << "\n";
    h << "lattice.ordering=" << (m.lat.ordering == SiteOrdering::snake ? "snake" : "raster") << "\n";
    h << "ham.j=" << detail::fmt17(m.ham.j) << "\n";
    h << "wf.d_e=" << m.wf.d_e << "\nwf.n_h=" << m.wf.n_h << "\nwf.d_f=" << m.wf.d_f
      << "\nwf.l_t=" << m.wf.l_t << "\n";
    h << "op.n_t=" << m.op.n_t << "\nop.t_max=" << detail::fmt17(m.op.t_max)
      << "\nop.l_f=" << m.op.l_f << "\nop.d_v=" << m.op.d_v << "\nop.k_max=" << m.op.k_max
      << "\nop.n_c=" << m.op.n_c << "\n";
    h << "step=" << st.step << "\nseed=" << st.seed << "\nadam.step=" << adam.step_count() << "\n";
    for (std::size_t i = 0; i < m.params.size(); ++i)
        h << "tensor=" << m.params.names()[i] << " " << m.params.at(i).rows() << " "
          << m.params.at(i).cols() << "\n";
    h << "payload.bytes=" << payload.size() << "\n";
    h << "payload.sha256=" << Sha256::hex_of(payload) << "\n";
    h << "payload:\n";
    detail::write_atomic(path, h.str() + payload);
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    std::string first;
    if (!std::getline(is, first)) throw io_error("empty checkpoint: " + path);
    if (first != "noqs-checkpoint-v1")
        throw io_error("unsupported checkpoint version: " + first);

    std::map<std::string, std::string> kv;
    std::vector<std::string> tnames;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> tshapes;
    std::string line;
    bool have_payload_marker = false;
    while (std::getline(is, line)) {
        if (line == "payload:") {
            have_payload_marker = true;
            break;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw io_error("malformed checkpoint header line: " + line);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "tensor") {
            std::stringstream ss(val);
            std::string name;
            Eigen::Index r, c;
            if (!(ss >> name >> r >> c)) throw io_error("malformed tensor line: " + line);
            tnames.push_back(name);
            tshapes.emplace_back(r, c);
        } else {
            kv[key] = val;
        }
    }
    if (!have_payload_marker) throw io_error("checkpoint missing payload section");
    for (const char* req : {"lattice.lx", "lattice.ly", "ham.j", "wf.d_e", "wf.n_h", "wf.d_f",
                            "wf.l_t", "op.n_t", "op.t_max", "op.l_f", "op.d_v", "op.k_max",
                            "op.n_c", "step", "seed", "adam.step", "payload.bytes",
                            "payload.sha256"})
        if (!kv.count(req)) throw io_error(std::string("checkpoint header missing ") + req);

    const std::size_t nbytes = std::stoull(kv["payload.bytes"]);
    std::string payload(nbytes, '\0');
    is.read(payload.data(), static_cast<std::streamsize>(nbytes));
    if (static_cast<std::size_t>(is.gcount()) != nbytes)
        throw io_error("truncated checkpoint payload: " + path);
    if (Sha256::hex_of(payload) != kv["payload.sha256"])
        throw io_error("checkpoint digest mismatch (corrupt file): " + path);

    TrainState st;
    const SiteOrdering ord =
        kv.count("lattice.ordering") && kv["lattice.ordering"] == "snake" ? SiteOrdering::snake
                                                                          : SiteOrdering::raster;
    Lattice lat = build_lattice(std::stoi(kv["lattice.lx"]), std::stoi(kv["lattice.ly"]), ord);
    TransformerConfig wf;
    wf.n_sites = lat.n;
    wf.d_e = std::stoi(kv["wf.d_e"]);
    wf.n_h = std::stoi(kv["wf.n_h"]);
    wf.d_f = std::stoi(kv["wf.d_f"]);
    wf.l_t = std::stoi(kv["wf.l_t"]);
    FNOConfig op;
    op.n_t = std::stoi(kv["op.n_t"]);
    op.t_max = std::stod(kv["op.t_max"]);
    op.l_f = std::stoi(kv["op.l_f"]);
    op.d_v = std::stoi(kv["op.d_v"]);
    op.k_max = std::stoi(kv["op.k_max"]);
    op.n_c = std::stoi(kv["op.n_c"]);
    op.d_e = wf.d_e;
    st.model = Model::create(lat, wf, op, 0);
    st.model.ham.j = std::stod(kv["ham.j"]);
    st.step = std::stol(kv["step"]);
    st.seed = std::stoull(kv["seed"]);

    if (tnames != st.model.params.names())
        throw io_error("checkpoint tensor list does not match this model layout");
    std::size_t expect = 0;
    for (std::size_t i = 0; i < tnames.size(); ++i) {
        if (tshapes[i].first != st.model.params.at(i).rows() ||
            tshapes[i].second != st.model.params.at(i).cols())
            throw io_error("checkpoint tensor shape mismatch for " + tnames[i]);
        expect += static_cast<std::size_t>(tshapes[i].first * tshapes[i].second);
    }
    if (nbytes != expect * 3 * 8) throw io_error("checkpoint payload size mismatch");

    std::size_t off = 0;
    for (std::size_t i = 0; i < st.model.params.size(); ++i)
        detail::read_mat(payload, off, st.model.params.at(i));
    st.adam.init(st.model.params);
    for (auto& mat : st.adam.moments1()) detail::read_mat(payload, off, mat);
    for (auto& mat : st.adam.moments2()) detail::read_mat(payload, off, mat);
    st.adam.set_step_count(std::stol(kv["adam.step"]));
    return st;
}

} // namespace noqs
