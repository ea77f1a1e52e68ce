// Hot paths of a slab solve at small lattice sizes.
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "kbl/halfspace.hpp"

namespace {

kbl::FarField far_field(double mach) {
    kbl::FarField ff;
    ff.u3 = mach * ff.sound_speed();
    return ff;
}

struct Fixture {
    kbl::FarField ff = far_field(-2.0);
    kbl::VelocityGrid grid;
    kbl::SphereQuadrature sph = kbl::build_sphere_quadrature(8, 16);
    kbl::SpectralData sd;
    kbl::SlabGrid slab = kbl::build_slab(30.0, 160);
    kbl::Field g;

    explicit Fixture(int n) {
        grid = kbl::build_velocity_grid(n, 6.0, ff.u());
        sd = kbl::build_spectral(kbl::assemble_linearized(grid, sph, kbl::KernelSpec{}, ff), ff);
        g = kbl::Field(slab.size(), grid.size());
        std::mt19937_64 rng(1);
        std::normal_distribution<double> nd;
        for (std::size_t m = 0; m < g.nx; ++m)
            for (std::size_t i = 0; i < g.nv; ++i)
                g(m, i) = nd(rng) * std::exp(-0.1 * slab.x[m]) * kbl::sqrt_maxwellian(grid.nodes[i], ff);
    }
};

const Fixture& fixture(int n) {
    static const Fixture f6(6), f8(8), f10(10);
    return n == 6 ? f6 : n == 8 ? f8 : f10;
}

void BM_Sweep(benchmark::State& st) {
    const Fixture& f = fixture(static_cast<int>(st.range(0)));
    const auto bd = kbl::BoundaryData::zero(f.grid.size());
    for (auto _ : st) benchmark::DoNotOptimize(kbl::sweep(f.g, f.sd.op.nu, bd, f.slab, f.grid));
    st.SetItemsProcessed(st.iterations() * static_cast<long>(f.g.data.size()));
}
BENCHMARK(BM_Sweep)->Arg(6)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_ApplyLField(benchmark::State& st) {
    const Fixture& f = fixture(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(kbl::apply_L_field(f.sd.op, f.g));
    st.SetItemsProcessed(st.iterations() * static_cast<long>(f.g.data.size()));
}
BENCHMARK(BM_ApplyLField)->Arg(6)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Assembly(benchmark::State& st) {
    const kbl::FarField ff = far_field(-2.0);
    const auto grid = kbl::build_velocity_grid(static_cast<int>(st.range(0)), 6.0, ff.u());
    const auto sph = kbl::build_sphere_quadrature(8, 16);
    for (auto _ : st) benchmark::DoNotOptimize(kbl::assemble_linearized(grid, sph, kbl::KernelSpec{}, ff));
}
BENCHMARK(BM_Assembly)->Arg(4)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GammaSlice(benchmark::State& st) {
    const Fixture& f = fixture(static_cast<int>(st.range(0)));
    const auto row = f.g.row(0);
    for (auto _ : st)
        benchmark::DoNotOptimize(kbl::gamma_bilinear(row, row, f.grid, f.sph, kbl::KernelSpec{}, f.ff));
}
BENCHMARK(BM_GammaSlice)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_KappaTable(benchmark::State& st) {
    const Fixture& f = fixture(static_cast<int>(st.range(0)));
    const kbl::WeightParams p = kbl::WeightParams::defaults(1.0);
    for (auto _ : st) benchmark::DoNotOptimize(kbl::build_kappa_table(f.slab.x, f.grid, f.sd.op.nu, p, f.ff));
}
BENCHMARK(BM_KappaTable)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_DampedSolve(benchmark::State& st) {
    const Fixture& f = fixture(static_cast<int>(st.range(0)));
    const kbl::WeightParams p = kbl::WeightParams::defaults(1.0);
    const kbl::DampingConfig dc = kbl::DampingConfig::from(p);
    kbl::Field h = kbl::apply_L_field(f.sd.op, f.g);
    const auto bd = kbl::BoundaryData::zero(f.grid.size());
    for (auto _ : st) benchmark::DoNotOptimize(kbl::solve_damped_slab(h, bd, f.sd, dc, f.slab, p));
}
BENCHMARK(BM_DampedSolve)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
