#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "kbl/errors.hpp"

using namespace kbl;

namespace {
Field random_slab_field(const SlabGrid& slab, const fx::Lattice& lat, std::mt19937_64& rng) {
    Field g(slab.size(), lat.grid.size());
    std::uniform_real_distribution<double> u(-1, 1);
    const double k = 0.2 + 0.3 * (u(rng) + 1.0);
    for (std::size_t i = 0; i < g.nv; ++i) {
        const double a = u(rng), b = u(rng), m = sqrt_maxwellian(lat.grid.nodes[i], lat.ff);
        for (std::size_t x = 0; x < g.nx; ++x) g(x, i) = (a + b * std::cos(k * slab.x[x])) * std::exp(-0.2 * slab.x[x]) * m;
    }
    return g;
}

void check_scaled(const EnergyComponents& a, const EnergyComponents& b, double c) {
    CHECK(b.inf == doctest::Approx(c * a.inf).epsilon(1e-12));
    CHECK(b.cro == doctest::Approx(c * a.cro).epsilon(1e-12));
    CHECK(b.two == doctest::Approx(c * a.two).epsilon(1e-12));
    CHECK(b.two_weighted == doctest::Approx(c * a.two_weighted).epsilon(1e-12));
}
}  // namespace

TEST_SUITE("diagnostics") {
    TEST_CASE("property: functionals are absolutely homogeneous and subadditive") {
        const fx::Lattice lat(6, -2.0);
        const SlabGrid slab = build_slab(15.0, 40);
        const WeightParams p = WeightParams::defaults(1.0);
        const NormContext ctx = make_norm_context(lat.sd, slab, p);
        std::mt19937_64 rng(51);
        std::uniform_real_distribution<double> u(-3, 3);
        for (int t = 0; t < 8; ++t) {
            const Field g = random_slab_field(slab, lat, rng), f = random_slab_field(slab, lat, rng);
            const double c = u(rng);
            Field cg = g, sum = g;
            for (std::size_t k = 0; k < g.data.size(); ++k) cg.data[k] *= c, sum.data[k] += f.data[k];
            const auto Eg = functional_E(g, ctx), Ef = functional_E(f, ctx);
            check_scaled(Eg, functional_E(cg, ctx), std::abs(c));
            check_scaled(functional_A(g, ctx), functional_A(cg, ctx), std::abs(c));
            CHECK(functional_E(sum, ctx).total() <= (Eg.total() + Ef.total()) * (1 + 1e-12));
            CHECK(functional_E_inf_materialized(g, ctx) == Eg.inf);
        }
        const Field zero(slab.size(), lat.grid.size());
        CHECK(functional_E(zero, ctx).total() == 0.0);
        CHECK(functional_A(zero, ctx).total() == 0.0);
        CHECK_THROWS_AS(functional_E(Field(3, lat.grid.size()), ctx), ContractError);
    }

    TEST_CASE("boundary functionals read only their incoming half") {
        const fx::Lattice lat(6, -2.0);
        const SlabGrid slab = build_slab(15.0, 40);
        const NormContext ctx = make_norm_context(lat.sd, slab, WeightParams::defaults(1.0));
        std::vector<double> f(lat.grid.size()), in(lat.grid.size(), 0.0), out(lat.grid.size(), 0.0);
        std::mt19937_64 rng(52);
        std::uniform_real_distribution<double> u(-1, 1);
        for (std::size_t i = 0; i < f.size(); ++i) {
            f[i] = u(rng);
            (lat.grid.nodes[i][2] > 0 ? in : out)[i] = f[i];
        }
        CHECK(functional_C(f, ctx).total() == functional_C(in, ctx).total());
        CHECK(functional_C(out, ctx).total() == 0.0);
        CHECK(functional_B(f, ctx).total() == functional_B(out, ctx).total());
        CHECK(functional_B(in, ctx).total() == 0.0);
        CHECK_THROWS_AS(functional_B(std::vector<double>(2), ctx), ContractError);
    }

    TEST_CASE("sigma transform round trip") {
        const fx::Lattice lat(6, -2.0);
        const SlabGrid slab = build_slab(15.0, 40);
        const NormContext ctx = make_norm_context(lat.sd, slab, WeightParams::defaults(1.0));
        std::mt19937_64 rng(53);
        const Field g = random_slab_field(slab, lat, rng);
        const Field back = sigma_transform(sigma_transform(g, ctx, 1.0), ctx, -1.0);
        for (std::size_t k = 0; k < g.data.size(); ++k) CHECK(back.data[k] == doctest::Approx(g.data[k]).epsilon(1e-14).scale(1e-300));
        const Field s = sigma_transform(g, ctx);
        for (std::size_t k = 0; k < g.data.size(); ++k) CHECK(std::abs(s.data[k]) >= std::abs(g.data[k]));
    }

    TEST_CASE("D vanishes in the nondegenerate regime and not at Mach 0") {
        const SlabGrid slab = build_slab(15.0, 40);
        const WeightParams p = WeightParams::defaults(1.0);
        {
            const fx::Lattice lat(6, -2.0);
            const NormContext ctx = make_norm_context(lat.sd, slab, p);
            std::string note;
            std::mt19937_64 rng(54);
            CHECK(functional_D(random_slab_field(slab, lat, rng), ctx, &note) == 0.0);
            CHECK(note.find("nondegenerate") != std::string::npos);
        }
        const fx::Lattice lat(6, 0.0);
        const NormContext ctx = make_norm_context(lat.sd, slab, p);
        const XjSolution* x = lat.sd.damping.find(0);
        REQUIRE(x != nullptr);
        Field h(slab.size(), lat.grid.size());
        for (std::size_t m = 0; m < h.nx; ++m)
            for (std::size_t i = 0; i < h.nv; ++i) h(m, i) = std::exp(-slab.x[m]) * x->LX[i];
        CHECK(functional_D(h, ctx) > 0.0);
        Field h2 = h;
        for (double& v : h2.data) v *= 3.0;
        CHECK(functional_D(h2, ctx) == doctest::Approx(3.0 * functional_D(h, ctx)).epsilon(1e-10));
        SpectralData bare = lat.sd;
        bare.damping.X.clear();
        const NormContext bctx = make_norm_context(bare, slab, p);
        CHECK_THROWS_AS(functional_D(h, bctx), StateError);
    }

    TEST_CASE("operator probe is seeded and flags the alpha hypothesis") {
        const fx::Lattice lat(6, -2.0);
        WeightParams p = WeightParams::defaults(1.0);
        const std::vector<double> xs{0.0, 5.0};
        const auto a = operator_bound_probe(lat.sd.op, p, lat.ff, 5, 99, xs);
        const auto b = operator_bound_probe(lat.sd.op, p, lat.ff, 5, 99, xs);
        const auto c = operator_bound_probe(lat.sd.op, p, lat.ff, 5, 100, xs);
        CHECK(a.per_sample == b.per_sample);
        CHECK(a.per_sample != c.per_sample);
        CHECK(a.seed == 99);
        CHECK(a.constant > 0.0);
        CHECK_FALSE(a.hypothesis_violation);
        p.alpha = p.mu_gamma();
        CHECK(operator_bound_probe(lat.sd.op, p, lat.ff, 1, 1, xs).hypothesis_violation);
    }

    TEST_CASE("stability constant") {
        CHECK_THROWS_AS(stability_constant({{1, 1}, {1, 1}}), ContractError);
        const auto f = stability_constant({{2.0, 1.0}, {3.0, 0.0}, {1.0, 4.0}, {5.0, 2.0}});
        CHECK(f.valid);
        CHECK(f.used == 3);
        CHECK(f.skipped == 1);
        CHECK(f.notes.size() == 1);
        CHECK(f.constant == doctest::Approx(2.5));
        CHECK_FALSE(stability_constant({{1, 0}, {1, 0}, {1, 0}}).valid);
    }

    TEST_CASE("norm report JSON") {
        NormReport r;
        r.E.inf = 1.5;
        r.D = 0.25;
        r.note = "n";
        const auto j = nlohmann::json::parse(norm_report_json(r));
        CHECK(j["E"]["inf"].get<double>() == 1.5);
        CHECK(j["E"]["total"].get<double>() == 1.5);
        CHECK(j["D"].get<double>() == 0.25);
        CHECK(j["note"] == "n");
        CHECK(j.contains("params"));
    }
}
