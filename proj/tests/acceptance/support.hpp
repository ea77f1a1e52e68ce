#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include "kbl/halfspace.hpp"

namespace acc {

struct Verdict {
    bool pass = false;
    std::string detail;
};

/// One assembled lattice with its spectral data.
struct Setup {
    kbl::FarField ff;
    kbl::KernelSpec ks;
    kbl::VelocityGrid grid;
    kbl::SphereQuadrature sph;
    kbl::LinearizedOperator op;
    kbl::SpectralData sd;
};

inline std::string cache_dir() {
    const char* d = std::getenv("KBL_CACHE_DIR");
    return d && *d ? d : "kbl_opcache";
}

inline kbl::FarField far_field(double mach) {
    kbl::FarField ff;
    ff.u3 = mach * ff.sound_speed();
    return ff;
}

inline std::unique_ptr<Setup> make_setup(int n, double mach, double gamma = 1.0, double v_max = 6.0) {
    auto s = std::make_unique<Setup>();
    s->ff = far_field(mach);
    s->ks = kbl::KernelSpec{gamma, kbl::AngularProfile::HardSphere};
    s->grid = kbl::build_velocity_grid(n, v_max, s->ff.u());
    s->sph = kbl::build_sphere_quadrature(8, 16);
    kbl::AssemblyOptions ao;
    ao.cache_dir = cache_dir();
    s->op = kbl::assemble_linearized(s->grid, s->sph, s->ks, s->ff, ao);
    s->sd = kbl::build_spectral(s->op, s->ff);
    return s;
}

std::string sci(double v);

Verdict criterion_1();
Verdict criterion_2();
Verdict criterion_3();
Verdict criterion_4();
Verdict criterion_5();
Verdict criterion_6();
Verdict criterion_7();
Verdict criterion_8();
Verdict criterion_9();
Verdict criterion_10();
Verdict criterion_11();
Verdict criterion_12();

}  // namespace acc
