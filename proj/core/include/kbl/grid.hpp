#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kbl {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }

/// Cell-midpoint lattice on [center - v_max, center + v_max]^3.
/// Node index is (a * n + b) * n + c for axis indices (a, b, c) along (v1, v2, v3).
struct VelocityGrid {
    std::vector<Vec3> nodes;
    std::vector<double> weights;
    int n_per_axis = 0;
    double v_max = 0.0;
    Vec3 center{0.0, 0.0, 0.0};
    double h = 0.0;  ///< cell width

    std::size_t size() const { return nodes.size(); }
    std::size_t index(int a, int b, int c) const {
        return (static_cast<std::size_t>(a) * n_per_axis + b) * n_per_axis + c;
    }
    /// Midpoint coordinate of axis index k along axis d.
    double coord(int d, int k) const { return center[d] - v_max + (k + 0.5) * h; }
    /// Stable fingerprint of the lattice in coordinates relative to its center.
    std::uint64_t hash() const;
};

/// Up to eight (node, weight) pairs realising trilinear interpolation at one point.
/// Corners that fall on the zero ghost layer around the lattice are dropped.
struct Stencil {
    std::array<std::uint32_t, 8> idx{};
    std::array<double, 8> w{};
    int count = 0;
};

struct SphereQuadrature {
    std::vector<Vec3> directions;
    std::vector<double> weights;
    std::vector<double> mu;  ///< cos(theta) of each direction (polar axis e3)
    int n_theta = 0;
    int n_phi = 0;
    std::size_t size() const { return directions.size(); }
};

VelocityGrid build_velocity_grid(int n_per_axis, double v_max, const Vec3& center);

/// Gauss-Legendre in cos(theta) times uniform azimuth, weights summing to 4*pi.
/// Even n_theta places n_theta/2 Gauss nodes on each of [-1, 0] and [0, 1] so
/// integrands with a kink at the equator, such as |cos(theta)|, are integrated exactly.
SphereQuadrature build_sphere_quadrature(int n_theta, int n_phi);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

double integrate(std::span<const double> values, const VelocityGrid& grid);

/// Trilinear stencil at v. Inside the closed box, the lattice is padded by one layer
/// of zero-valued ghost nodes; outside the closed box the stencil is empty.
Stencil trilinear_stencil(const VelocityGrid& grid, const Vec3& v);

double interpolate(std::span<const double> values, const VelocityGrid& grid, const Vec3& v);

}  // namespace kbl
