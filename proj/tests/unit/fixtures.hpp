#pragma once

#include <cmath>
#include <random>

#include "kbl/halfspace.hpp"

namespace fx {

inline kbl::FarField far_field(double mach) {
    kbl::FarField ff;
    ff.u3 = mach * ff.sound_speed();
    return ff;
}

/// Small assembled lattice; nothing is cached so every test run is self-contained.
struct Lattice {
    kbl::FarField ff;
    kbl::KernelSpec ks{1.0, kbl::AngularProfile::HardSphere};
    kbl::VelocityGrid grid;
    kbl::SphereQuadrature sph;
    kbl::SpectralData sd;

    Lattice(int n, double mach, double gamma = 1.0) : ff(far_field(mach)) {
        ks.gamma = gamma;
        grid = kbl::build_velocity_grid(n, 6.0, ff.u());
        sph = kbl::build_sphere_quadrature(8, 16);
        sd = kbl::build_spectral(kbl::assemble_linearized(grid, sph, ks, ff), ff);
    }
};

inline std::vector<double> random_field(const kbl::VelocityGrid& grid, const kbl::FarField& ff, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    std::vector<double> f(grid.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = n(rng) * kbl::sqrt_maxwellian(grid.nodes[i], ff);
    return f;
}

inline double sup_abs(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s = std::max(s, std::abs(x));
    return s;
}

}  // namespace fx
