#include "kbl/grid.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "kbl/errors.hpp"

namespace kbl {

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
        h ^= (word >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::uint64_t VelocityGrid::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a(h, static_cast<std::uint64_t>(n_per_axis));
    h = fnv1a(h, std::bit_cast<std::uint64_t>(v_max));
    return h;
}

VelocityGrid build_velocity_grid(int n_per_axis, double v_max, const Vec3& center) {
    if (n_per_axis <= 0 || n_per_axis % 2 != 0)
        throw ConfigError("n_per_axis must be a positive even integer, got " + std::to_string(n_per_axis));
    if (!std::isfinite(v_max) || v_max <= 0.0)
        throw ConfigError("v_max must be finite and positive");
    for (double c : center)
        if (!std::isfinite(c)) throw ConfigError("grid center must be finite");

    VelocityGrid g;
    g.n_per_axis = n_per_axis;
    g.v_max = v_max;
    g.center = center;
    g.h = 2.0 * v_max / n_per_axis;
    const std::size_t n = static_cast<std::size_t>(n_per_axis);
    g.nodes.resize(n * n * n);
    g.weights.assign(n * n * n, g.h * g.h * g.h);
    for (int a = 0; a < n_per_axis; ++a)
        for (int b = 0; b < n_per_axis; ++b)
            for (int c = 0; c < n_per_axis; ++c)
                g.nodes[g.index(a, b, c)] = {g.coord(0, a), g.coord(1, b), g.coord(2, c)};

    for (int c = 0; c < n_per_axis; ++c) {
        if (std::abs(g.coord(2, c)) <= 1e-12 * (v_max + std::abs(center[2])))
            throw ConfigError("velocity lattice has a node with v3 = 0; shift v_max or the drift");
    }
    return g;
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double pk = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

SphereQuadrature build_sphere_quadrature(int n_theta, int n_phi) {
    if (n_theta < 2 || n_phi < 2) throw ConfigError("sphere quadrature needs n_theta, n_phi >= 2");

    std::vector<double> mu, wmu;
    if (n_theta % 2 == 0) {
        std::vector<double> x, w;
        gauss_legendre(n_theta / 2, x, w);
        for (std::size_t k = 0; k < x.size(); ++k) {
            mu.push_back(-0.5 + 0.5 * x[k]);
            wmu.push_back(0.5 * w[k]);
        }
        for (std::size_t k = 0; k < x.size(); ++k) {
            mu.push_back(0.5 + 0.5 * x[k]);
            wmu.push_back(0.5 * w[k]);
        }
    } else {
        gauss_legendre(n_theta, mu, wmu);
    }

    SphereQuadrature q;
    q.n_theta = n_theta;
    q.n_phi = n_phi;
    const double dphi = 2.0 * std::numbers::pi / n_phi;
    for (std::size_t t = 0; t < mu.size(); ++t) {
        const double s = std::sqrt(std::max(0.0, 1.0 - mu[t] * mu[t]));
        for (int p = 0; p < n_phi; ++p) {
            const double phi = (p + 0.5) * dphi;
            q.directions.push_back({s * std::cos(phi), s * std::sin(phi), mu[t]});
            q.weights.push_back(wmu[t] * dphi);
            q.mu.push_back(mu[t]);
        }
    }
    return q;
}

double integrate(std::span<const double> values, const VelocityGrid& grid) {
    if (values.size() != grid.size())
        throw ContractError("integrate: values length does not match the grid");
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * grid.weights[i];
    return s;
}

Stencil trilinear_stencil(const VelocityGrid& grid, const Vec3& v) {
    Stencil st;
    int k0[3];
    double t[3];
    const int n = grid.n_per_axis;
    for (int d = 0; d < 3; ++d) {
        const double p = (v[d] - (grid.center[d] - grid.v_max)) / grid.h - 0.5;
        if (!(p >= -0.5 && p <= n - 0.5)) return st;
        const double f = std::floor(p);
        k0[d] = static_cast<int>(f);
        t[d] = p - f;
    }
    for (int c = 0; c < 8; ++c) {
        double w = 1.0;
        int k[3];
        for (int d = 0; d < 3; ++d) {
            const int bit = (c >> (2 - d)) & 1;
            k[d] = k0[d] + bit;
            w *= bit ? t[d] : 1.0 - t[d];
        }
        if (w == 0.0) continue;
        if (k[0] < 0 || k[1] < 0 || k[2] < 0 || k[0] >= n || k[1] >= n || k[2] >= n) continue;
        st.idx[st.count] = static_cast<std::uint32_t>(grid.index(k[0], k[1], k[2]));
        st.w[st.count] = w;
        ++st.count;
    }
    return st;
}

double interpolate(std::span<const double> values, const VelocityGrid& grid, const Vec3& v) {
    if (values.size() != grid.size())
        throw ContractError("interpolate: values length does not match the grid");
    const Stencil st = trilinear_stencil(grid, v);
    double s = 0.0;
    for (int c = 0; c < st.count; ++c) s += st.w[c] * values[st.idx[c]];
    return s;
}

}  // namespace kbl
