#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "noqs/errors.hpp"

namespace noqs {

// Spins are the +-1 eigenvalues of 2S_z, listed in autoregressive order.
using SpinConfig = std::vector<int>;

enum class SiteOrdering { raster, snake };

struct Lattice {
    int lx = 0;
    int ly = 0;
    int n = 0;
    SiteOrdering ordering = SiteOrdering::raster;
    // bond (i, j) with i < j, indices in autoregressive order
    std::vector<std::pair<int, int>> bonds;
    // site (row-major grid index) -> autoregressive position; a permutation
    std::vector<int> order;

    int n_bonds() const { return static_cast<int>(bonds.size()); }
};

struct HamiltonianSpec {
    double j = 1.0;
};

inline Lattice build_lattice(int lx, int ly, SiteOrdering ordering = SiteOrdering::raster) {
    if (lx < 1 || ly < 1)
        throw std::invalid_argument("build_lattice: dimensions must be positive");
    Lattice lat;
    lat.lx = lx;
    lat.ly = ly;
    lat.n = lx * ly;
    lat.ordering = ordering;
    lat.order.resize(lat.n);
    for (int y = 0; y < ly; ++y) {
        for (int x = 0; x < lx; ++x) {
            const int site = y * lx + x;
            const int col = (ordering == SiteOrdering::snake && (y % 2 == 1)) ? (lx - 1 - x) : x;
            lat.order[site] = y * lx + col;
        }
    }
    auto add_bond = [&](int a, int b) {
        int i = lat.order[a], j = lat.order[b];
        if (i > j) std::swap(i, j);
        lat.bonds.emplace_back(i, j);
    };
    for (int y = 0; y < ly; ++y) {
        for (int x = 0; x < lx; ++x) {
            const int site = y * lx + x;
            if (x + 1 < lx) add_bond(site, site + 1);
            if (y + 1 < ly) add_bond(site, site + lx);
        }
    }
    return lat;
}

inline void check_config(const Lattice& lat, const SpinConfig& sigma) {
    if (static_cast<int>(sigma.size()) != lat.n)
        throw std::invalid_argument("spin configuration length does not match lattice");
    for (int s : sigma)
        if (s != 1 && s != -1)
            throw std::invalid_argument("spin values must be +1 or -1");
}

// J sum_<ij> s_i s_j + hz sum_i s_i
inline double diagonal_energy(const Lattice& lat, const HamiltonianSpec& spec,
                              const SpinConfig& sigma, double hz) {
    check_config(lat, sigma);
    double zz = 0.0;
    for (auto [i, j] : lat.bonds) zz += sigma[i] * sigma[j];
    double z = 0.0;
    for (int s : sigma) z += s;
    return spec.j * zz + hz * z;
}

// All sigma' with nonzero off-diagonal matrix element: the N single flips.
// The returned weight is the coefficient factor 1; h_x is applied by the caller.
inline std::vector<std::pair<SpinConfig, double>> offdiagonal_connections(
    const Lattice& lat, const SpinConfig& sigma) {
    check_config(lat, sigma);
    std::vector<std::pair<SpinConfig, double>> out;
    out.reserve(lat.n);
    for (int i = 0; i < lat.n; ++i) {
        SpinConfig flipped = sigma;
        flipped[i] = -flipped[i];
        out.emplace_back(std::move(flipped), 1.0);
    }
    return out;
}

// Bit encoding for dedup/enumeration (N <= 64); bit i set iff sigma[i] == +1.
inline std::uint64_t encode_config(const SpinConfig& sigma) {
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i)
        if (sigma[i] > 0) key |= (1ull << i);
    return key;
}

inline SpinConfig decode_config(std::uint64_t key, int n) {
    SpinConfig sigma(n);
    for (int i = 0; i < n; ++i) sigma[i] = (key >> i) & 1 ? 1 : -1;
    return sigma;
}

} // namespace noqs
