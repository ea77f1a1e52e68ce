#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "kbl/errors.hpp"

using namespace kbl;

namespace {
/// e^{-rate x} xi_1 xi_2 sqrt(M) scaled by amp; orthogonal to the null space by symmetry.
LinearProblem shear(const VelocityGrid& grid, const FarField& ff, double rate, double amp = 1.0) {
    std::vector<double> phi(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        phi[i] = grid.nodes[i][0] * grid.nodes[i][1] / ff.T * sqrt_maxwellian(grid.nodes[i], ff);
    LinearProblem prob;
    prob.f_b.assign(grid.size(), 0.0);
    prob.source = [phi, rate, amp](double x, std::size_t i) { return amp * std::exp(-rate * x) * phi[i]; };
    return prob;
}

std::vector<double> slip_wall(const VelocityGrid& grid, const FarField& ff, double amp) {
    std::vector<double> fb(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid.nodes[i][2] > 0.0) fb[i] = amp * grid.nodes[i][0] * sqrt_maxwellian(grid.nodes[i], ff);
    return fb;
}

Field profile(const SlabGrid& slab, const VelocityGrid& grid, const FarField& ff, const WeightParams& p,
              double c, double q) {
    Field f(slab.size(), grid.size());
    for (std::size_t m = 0; m < f.nx; ++m)
        for (std::size_t i = 0; i < f.nv; ++i)
            f(m, i) = std::exp(-c * std::pow(p.delta * slab.x[m] + p.l, q)) * sqrt_maxwellian(grid.nodes[i], ff);
    return f;
}

double sup_diff(const Field& a, const Field& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.data.size(); ++k) s = std::max(s, std::abs(a.data[k] - b.data[k]));
    return s;
}
}  // namespace

TEST_SUITE("halfspace") {
    TEST_CASE("number of boundary conditions") {
        CHECK(count_conditions(-2.0) == 0);
        CHECK(count_conditions(-1.0) == 1);
        CHECK(count_conditions(-0.5) == 1);
        CHECK(count_conditions(0.0) == 4);
        CHECK(count_conditions(0.5) == 4);
        CHECK(count_conditions(1.0) == 5);
        CHECK(count_conditions(3.0) == 5);
    }

    TEST_CASE("decay fit recovers stretched exponentials") {
        const FarField ff = fx::far_field(-2.0);
        const auto grid = build_velocity_grid(4, 6.0, ff.u());
        const SlabGrid slab = build_slab(30.0, 120);
        WeightParams p = WeightParams::defaults(1.0);
        // e^{-x} is e^{-(delta x + l) / delta} up to a constant.
        const DecayFit a = fit_decay(profile(slab, grid, ff, p, 1.0 / p.delta, 1.0), slab, grid, p, ff);
        CHECK(a.pexp == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(a.c == doctest::Approx(1.0 / p.delta).epsilon(1e-2));
        CHECK(a.r2 >= 0.999);
        p.delta = 0.5;
        p.l = 2.0;
        const DecayFit b = fit_decay(profile(slab, grid, ff, p, 2.0, 0.5), slab, grid, p, ff);
        CHECK(b.pexp == doctest::Approx(0.5).epsilon(1e-3));
        CHECK(b.c == doctest::Approx(2.0).epsilon(1e-2));
        CHECK(b.points > 3);
        CHECK_THROWS_AS(fit_decay(Field(slab.size(), grid.size()), slab, grid, p, ff), NumericError);
        CHECK_THROWS_AS(fit_decay(Field(3, grid.size()), slab, grid, p, ff), ContractError);
    }

    TEST_CASE("source decomposition at Mach 0") {
        const fx::Lattice lat(6, 0.0);
        const SlabGrid slab = build_slab(20.0, 60);
        const std::size_t N = lat.grid.size();
        const XjSolution* x0 = lat.sd.damping.find(0);
        REQUIRE(x0 != nullptr);
        // Pbb (L X_0) = L X_0, so S = e^{-x} L X_0 is all bounded part and P0 f2 = -psi_0 e^{-x}.
        Field S(slab.size(), N);
        for (std::size_t m = 0; m < S.nx; ++m)
            for (std::size_t i = 0; i < N; ++i) S(m, i) = std::exp(-slab.x[m]) * x0->LX[i];
        const auto [perp, f2] = decompose_source(S, lat.sd, slab);
        CHECK(fx::sup_abs(perp.data) < 1e-10 * fx::sup_abs(S.data));
        double err = 0.0, scale = 0.0;
        for (std::size_t m = 0; m < S.nx; ++m)
            for (std::size_t i = 0; i < N; ++i) {
                const double want = -std::exp(-slab.x[m]) * lat.sd.basis.psi[0][i];
                err = std::max(err, std::abs(f2(m, i) - want));
                scale = std::max(scale, std::abs(want));
            }
        CHECK(err < 1e-8 * scale);
    }

    TEST_CASE("shooting removes every solvability residual") {
        const fx::Lattice lat(6, 0.5);
        const WeightParams p = WeightParams::defaults(1.0);
        LinearProblem prob = shear(lat.grid, lat.ff, 0.5);
        prob.f_b = slip_wall(lat.grid, lat.ff, 0.3);
        SlabSolverOptions so;
        so.method = SlabMethod::Krylov;
        const auto sol = solve_with_shooting(prob, p, lat.sd, DampingConfig::from(p), build_slab(20.0, 80), so);
        REQUIRE(sol.report.residuals.size() == 4);
        for (const auto& r : sol.report.residuals) {
            CAPTURE(r.j);
            CHECK(r.kind == "plus");
            CHECK(std::abs(r.at_wall) < 1e-8);
        }
        CHECK(sol.report.shooting_coefficients.size() == 4);
        CHECK(nlohmann::json::parse(solve_report_json(sol.report)).is_object());
    }

    TEST_CASE("A-sequence: Cauchy convergence and exhaustion") {
        const fx::Lattice lat(6, -2.0);
        const WeightParams p = WeightParams::defaults(1.0);
        const DampingConfig dc = DampingConfig::from(p);
        const LinearProblem prob = shear(lat.grid, lat.ff, 1.0);
        HalfspaceOptions ho;
        ho.A_sequence = {10.0, 20.0, 40.0};
        ho.n_x = 140;
        ho.cauchy_tol = 1e-6;
        const auto sol = solve_linear_halfspace(prob, p, lat.sd, dc, ho);
        REQUIRE_FALSE(sol.report.cauchy_deltas.empty());
        CHECK(sol.report.cauchy_deltas.back() <= ho.cauchy_tol);
        CHECK(sol.report.A_values.size() == sol.report.cauchy_deltas.size() + 1);

        ho.A_sequence = {2.0, 3.0};
        ho.cauchy_tol = 1e-14;
        try {
            solve_linear_halfspace(prob, p, lat.sd, dc, ho);
            FAIL("expected ExtendDomainError");
        } catch (const ExtendDomainError& e) {
            CHECK(e.history().size() == 1);
        }
        ho.A_sequence.clear();
        CHECK_THROWS_AS(solve_linear_halfspace(prob, p, lat.sd, dc, ho), ConfigError);
    }

    TEST_CASE("property: the linear solve is linear") {
        const fx::Lattice lat(6, -2.0);
        const WeightParams p = WeightParams::defaults(1.0);
        const DampingConfig dc = DampingConfig::from(p);
        const SlabGrid slab = build_slab(20.0, 60);
        std::mt19937_64 rng(61);
        std::uniform_real_distribution<double> u(-2, 2);
        for (int t = 0; t < 3; ++t) {
            const double a = u(rng), b = u(rng);
            LinearProblem p1 = shear(lat.grid, lat.ff, 0.7), p2 = shear(lat.grid, lat.ff, 0.3);
            p1.f_b = slip_wall(lat.grid, lat.ff, 1.0);
            const LinearProblem pc = [&] {
                LinearProblem c = shear(lat.grid, lat.ff, 0.7, a);
                const LinearProblem d = shear(lat.grid, lat.ff, 0.3, b);
                auto s1 = c.source, s2 = d.source;
                c.source = [s1, s2](double x, std::size_t i) { return s1(x, i) + s2(x, i); };
                c.f_b = slip_wall(lat.grid, lat.ff, a);
                return c;
            }();
            const auto g1 = solve_linear_on_slab(p1, p, lat.sd, dc, slab);
            const auto g2 = solve_linear_on_slab(p2, p, lat.sd, dc, slab);
            const auto gc = solve_linear_on_slab(pc, p, lat.sd, dc, slab);
            Field comb = g1.f;
            for (std::size_t k = 0; k < comb.data.size(); ++k) comb.data[k] = a * g1.f.data[k] + b * g2.f.data[k];
            CHECK(sup_diff(gc.f, comb) < 1e-8 * (fx::sup_abs(comb.data) + 1e-300));
        }
        LinearProblem bad = shear(lat.grid, lat.ff, 1.0);
        bad.f_b.resize(3);
        CHECK_THROWS_AS(solve_linear_on_slab(bad, p, lat.sd, dc, slab), ContractError);
    }

    TEST_CASE("nonlinear solution approaches the linear one for small data") {
        const fx::Lattice lat(4, -2.0);
        const WeightParams p = WeightParams::defaults(1.0);
        const DampingConfig dc = DampingConfig::from(p);
        const SlabGrid slab = build_slab(20.0, 60);
        const CollisionContext cc{lat.sph, lat.ks};
        LinearProblem unit = shear(lat.grid, lat.ff, 0.5);
        unit.f_b = slip_wall(lat.grid, lat.ff, 1.0);
        const auto lin = solve_linear_on_slab(unit, p, lat.sd, dc, slab);
        double prev = 0.0;
        for (double eps : {1e-2, 1e-3}) {
            LinearProblem prob = shear(lat.grid, lat.ff, 0.5, eps);
            prob.f_b = slip_wall(lat.grid, lat.ff, eps);
            const auto nl = solve_nonlinear(prob, p, lat.sd, dc, slab, cc);
            CHECK_FALSE(nl.report.nonlinear_diffs.empty());
            Field scaled = nl.f;
            for (double& v : scaled.data) v /= eps;
            const double d = sup_diff(scaled, lin.f) / fx::sup_abs(lin.f.data);
            CAPTURE(eps);
            // The quadratic term contributes O(eps) to f / eps.
            CHECK(d < 50.0 * eps);
            if (prev > 0.0) CHECK(d < 0.2 * prev);
            prev = d;
        }
        const auto zero = gamma_field(Field(slab.size(), lat.grid.size()), lat.sd, cc);
        CHECK(fx::sup_abs(zero.data) == 0.0);
    }
}
