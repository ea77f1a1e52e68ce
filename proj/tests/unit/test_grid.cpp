#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "kbl/errors.hpp"

using namespace kbl;

TEST_SUITE("grid") {
    TEST_CASE("two-point lattice has unit cells at +-1/2") {
        const auto g = build_velocity_grid(2, 1.0, {0, 0, 0});
        REQUIRE(g.size() == 8);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(g.weights[i] == 1.0);
            for (double c : g.nodes[i]) CHECK(std::abs(c) == 0.5);
        }
    }

    TEST_CASE("weights partition the box") {
        for (int n : {2, 4, 6, 10}) {
            const auto g = build_velocity_grid(n, 3.5, {0, 0, 1.2});
            double s = 0.0;
            for (double w : g.weights) s += w;
            CHECK(s == doctest::Approx(std::pow(7.0, 3)).epsilon(1e-13));
            std::vector<double> one(g.size(), 1.0);
            CHECK(integrate(one, g) == doctest::Approx(std::pow(7.0, 3)).epsilon(1e-13));
        }
    }

    TEST_CASE("invalid lattices are configuration errors") {
        CHECK_THROWS_AS(build_velocity_grid(5, 6.0, {0, 0, 0}), ConfigError);
        CHECK_THROWS_AS(build_velocity_grid(4, -1.0, {0, 0, 0}), ConfigError);
        CHECK_THROWS_AS(build_velocity_grid(4, NAN, {0, 0, 0}), ConfigError);
    }

    TEST_CASE("reflection symmetry about the center and no v3 = 0 node") {
        const Vec3 u{0, 0, -1.7};
        const auto g = build_velocity_grid(8, 6.0, u);
        const int n = g.n_per_axis;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                for (int c = 0; c < n; ++c) {
                    const auto& v = g.nodes[g.index(a, b, c)];
                    const auto& w = g.nodes[g.index(n - 1 - a, n - 1 - b, n - 1 - c)];
                    for (int d = 0; d < 3; ++d) CHECK(v[d] + w[d] == doctest::Approx(2 * u[d]).epsilon(1e-14));
                    CHECK(v[2] != 0.0);
                }
    }

    TEST_CASE("Maxwellian mass matches the erf box mass") {
        // Oracle: product of 1D masses erf(v_max / sqrt(2T)).
        const FarField ff{1.0, 1.0, 0.0};
        const auto g = build_velocity_grid(24, 6.0, ff.u());
        std::vector<double> m(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) m[i] = maxwellian(g.nodes[i], ff);
        const double box = std::pow(std::erf(6.0 / std::sqrt(2.0)), 3);
        CHECK(std::abs(integrate(m, g) - box) / box < 1e-6);
        CHECK(std::abs(integrate(m, g) - 1.0) < 1e-4);
    }

    TEST_CASE("moment errors shrink monotonically under refinement") {
        const FarField ff{1.0, 1.0, 0.0};
        double prev[3] = {1e300, 1e300, 1e300};
        for (int n : {4, 8, 16}) {
            const auto g = build_velocity_grid(n, 6.0, ff.u());
            double mass = 0, mom = 0, en = 0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double m = maxwellian(g.nodes[i], ff) * g.weights[i];
                mass += m;
                mom += m * (g.nodes[i][0] + 1.0);  // offset avoids an exact zero by symmetry
                en += m * norm2(g.nodes[i]);
            }
            const double err[3] = {std::abs(mass - 1.0), std::abs(mom - 1.0), std::abs(en - 3.0)};
            for (int k = 0; k < 3; ++k) {
                CHECK(err[k] < prev[k]);
                prev[k] = err[k];
            }
        }
    }

    TEST_CASE("sphere quadrature moments") {
        for (int nt : {2, 4, 8, 12}) {
            const auto s = build_sphere_quadrature(nt, 16);
            double w = 0, c2 = 0, c1 = 0;
            for (std::size_t k = 0; k < s.size(); ++k) {
                CHECK(norm2(s.directions[k]) == doctest::Approx(1.0).epsilon(1e-15));
                w += s.weights[k];
                c2 += s.weights[k] * s.mu[k] * s.mu[k];
                c1 += s.weights[k] * std::abs(s.mu[k]);
            }
            CHECK(std::abs(w - 4 * M_PI) < 1e-12 * 4 * M_PI);
            if (nt >= 4) CHECK(std::abs(c2 - 4 * M_PI / 3) < 1e-12);
            if (nt >= 8) CHECK(std::abs(c1 - 2 * M_PI) < 1e-6);
        }
    }

    TEST_CASE("interpolation reproduces nodes, averages midpoints and vanishes outside") {
        const auto g = build_velocity_grid(6, 3.0, {0, 0, 0.3});
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(-1, 1);
        std::vector<double> f(g.size());
        for (double& x : f) x = u(rng);
        for (std::size_t i = 0; i < g.size(); i += 7) CHECK(interpolate(f, g, g.nodes[i]) == f[i]);
        const std::size_t a = g.index(2, 3, 1), b = g.index(3, 3, 1);
        const Vec3 mid{0.5 * (g.nodes[a][0] + g.nodes[b][0]), g.nodes[a][1], g.nodes[a][2]};
        CHECK(interpolate(f, g, mid) == doctest::Approx(0.5 * (f[a] + f[b])).epsilon(1e-14));
        CHECK(interpolate(f, g, {3.01, 0, 0.3}) == 0.0);
        CHECK(interpolate(f, g, {0, 0, -2.8}) == 0.0);
    }

    TEST_CASE("property: interpolation is exact on trilinear functions inside a cell") {
        const auto g = build_velocity_grid(8, 4.0, {0, 0, 0});
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(-1, 1), in(-3.0, 3.0);
        for (int trial = 0; trial < 100; ++trial) {
            double c[8];
            for (double& x : c) x = u(rng);
            auto tri = [&](const Vec3& v) {
                return c[0] + c[1] * v[0] + c[2] * v[1] + c[3] * v[2] + c[4] * v[0] * v[1] + c[5] * v[1] * v[2] +
                       c[6] * v[0] * v[2] + c[7] * v[0] * v[1] * v[2];
            };
            std::vector<double> f(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) f[i] = tri(g.nodes[i]);
            const Vec3 v{in(rng), in(rng), in(rng)};  // inside the node hull
            CHECK(interpolate(f, g, v) == doctest::Approx(tri(v)).epsilon(1e-12).scale(1.0));
        }
    }

    TEST_CASE("property: integrate is linear") {
        const auto g = build_velocity_grid(6, 2.0, {0, 0, 0});
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n;
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> f(g.size()), h(g.size()), c(g.size());
            const double a = n(rng), b = n(rng);
            for (std::size_t i = 0; i < g.size(); ++i) {
                f[i] = n(rng);
                h[i] = n(rng);
                c[i] = a * f[i] + b * h[i];
            }
            CHECK(integrate(c, g) == doctest::Approx(a * integrate(f, g) + b * integrate(h, g)).epsilon(1e-12));
        }
        CHECK(integrate(std::vector<double>(g.size(), 0.0), g) == 0.0);
        CHECK_THROWS_AS(integrate(std::vector<double>(3, 0.0), g), ContractError);
    }
}
