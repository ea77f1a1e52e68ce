#include "kbl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "kbl/errors.hpp"

namespace kbl {

namespace {

double rel_speed(const Vec3& v, const FarField& ff) {
    const double d3 = v[2] - ff.u3;
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + d3 * d3);
}

void check_field(const Field& g, const NormContext& ctx, const char* who) {
    if (g.nx != ctx.nx || g.nv != ctx.nv) throw ContractError(std::string(who) + ": field shape mismatch");
}

/// Trapezoid in x of per-slice weighted sums of squares, then a square root.
double l2_xv(const std::vector<double>& slice_sq, const SlabGrid& slab) {
    double s = 0.0;
    for (std::size_t m = 0; m + 1 < slab.size(); ++m)
        s += 0.5 * (slab.x[m + 1] - slab.x[m]) * (slice_sq[m] + slice_sq[m + 1]);
    return std::sqrt(s);
}

/// || y^{e} P g ||_A + || nu^{q} P_perp g ||_A.
double split_norm(const Field& g, const NormContext& ctx, double y_exp, double nu_exp) {
    const VelocityGrid& grid = ctx.sd->op.grid;
    std::vector<double> a(ctx.nx), b(ctx.nx);
    for (std::size_t m = 0; m < ctx.nx; ++m) {
        const std::vector<double> pg = project_null(g.row(m), ctx.sd->basis, grid);
        const double ym = std::pow(ctx.y[m], y_exp);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < ctx.nv; ++i) {
            const double u = ym * pg[i];
            const double v = std::pow(ctx.nu[i], nu_exp) * (g(m, i) - pg[i]);
            sa += grid.weights[i] * u * u;
            sb += grid.weights[i] * v * v;
        }
        a[m] = sa;
        b[m] = sb;
    }
    return l2_xv(a, *ctx.slab) + l2_xv(b, *ctx.slab);
}

Field scaled(const Field& g, const std::vector<double>& w) {
    Field out = g;
    for (std::size_t m = 0; m < g.nx; ++m)
        for (std::size_t i = 0; i < g.nv; ++i) out(m, i) *= w[i];
    return out;
}

/// || c(x, v) g ||_A with c given per node.
template <class Coef>
double weighted_l2(const Field& g, const NormContext& ctx, Coef coef) {
    const VelocityGrid& grid = ctx.sd->op.grid;
    std::vector<double> sq(ctx.nx);
    for (std::size_t m = 0; m < ctx.nx; ++m) {
        double s = 0.0;
        for (std::size_t i = 0; i < ctx.nv; ++i) {
            const double u = coef(m, i) * g(m, i);
            s += grid.weights[i] * u * u;
        }
        sq[m] = s;
    }
    return l2_xv(sq, *ctx.slab);
}

EnergyComponents boundary_functional(std::span<const double> f, const NormContext& ctx, std::size_t row, int sign) {
    const VelocityGrid& grid = ctx.sd->op.grid;
    if (f.size() != ctx.nv) throw ContractError("boundary functional: length mismatch");
    EnergyComponents e;
    double cro = 0.0, two = 0.0, two_w = 0.0;
    for (std::size_t i = 0; i < ctx.nv; ++i) {
        const double v3 = grid.nodes[i][2];
        if (sign * v3 <= 0.0) continue;
        const double sxh = ctx.sx_half[row * ctx.nv + i];
        e.inf = std::max(e.inf, sxh * ctx.w_b[i] * std::abs(f[i]));
        const double a = std::abs(v3) * grid.weights[i];
        const double c = sxh * ctx.z_ma[i] * ctx.w_bg[i] * f[i];
        cro += a * c * c;
        two += a * f[i] * f[i];
        two_w += a * ctx.w_bg[i] * ctx.w_bg[i] * f[i] * f[i];
    }
    e.cro = std::sqrt(cro);
    e.two = std::sqrt(two);
    e.two_weighted = std::sqrt(two_w);
    return e;
}

}  // namespace

NormContext make_norm_context(const SpectralData& sd, const SlabGrid& slab, const WeightParams& p) {
    NormContext c;
    c.slab = &slab;
    c.sd = &sd;
    c.p = p;
    const VelocityGrid& grid = sd.op.grid;
    c.nx = slab.size();
    c.nv = grid.size();
    c.sx_half.resize(c.nx * c.nv);
    c.sigma.resize(c.nx * c.nv);
    c.w_b.resize(c.nv);
    c.w_bg.resize(c.nv);
    c.z_ma.resize(c.nv);
    c.z_one.resize(c.nv);
    c.nu = sd.op.nu;
    c.y.resize(c.nx);
    for (std::size_t i = 0; i < c.nv; ++i) {
        const Vec3& v = grid.nodes[i];
        c.w_b[i] = weight_w(v, p.beta, p.vartheta, sd.ff);
        c.w_bg[i] = weight_w(v, p.beta + p.beta_gamma(), p.vartheta, sd.ff);
        c.z_ma[i] = weight_z(v, -p.alpha);
        c.z_one[i] = weight_z(v, 1.0);
    }
    for (std::size_t m = 0; m < c.nx; ++m) {
        c.y[m] = p.delta * slab.x[m] + p.l;
        for (std::size_t i = 0; i < c.nv; ++i) {
            const SigmaValue s = sigma_all(slab.x[m], rel_speed(grid.nodes[i], sd.ff), p);
            c.sx_half[m * c.nv + i] = std::sqrt(s.sigma_x);
            c.sigma[m * c.nv + i] = s.sigma;
        }
    }
    return c;
}

EnergyComponents functional_E(const Field& g, const NormContext& ctx) {
    check_field(g, ctx, "functional_E");
    EnergyComponents e;
    for (std::size_t m = 0; m < ctx.nx; ++m)
        for (std::size_t i = 0; i < ctx.nv; ++i)
            e.inf = std::max(e.inf, ctx.sx_half[m * ctx.nv + i] * ctx.w_b[i] * std::abs(g(m, i)));
    const Field dg = dx_field(g, *ctx.slab);
    e.cro = weighted_l2(g, ctx, [&](std::size_t m, std::size_t i) {
                return std::sqrt(ctx.nu[i]) * ctx.z_ma[i] * ctx.sx_half[m * ctx.nv + i] * ctx.w_bg[i];
            }) +
            weighted_l2(dg, ctx, [&](std::size_t m, std::size_t i) {
                return ctx.z_ma[i] * ctx.sx_half[m * ctx.nv + i] * ctx.z_one[i] * ctx.w_bg[i] / std::sqrt(ctx.nu[i]);
            });
    const double theta = ctx.p.Theta();
    e.two = split_norm(g, ctx, -0.5 * theta, 0.5);
    e.two_weighted = split_norm(scaled(g, ctx.w_bg), ctx, -0.5 * theta, 0.5);
    return e;
}

double functional_E_inf_materialized(const Field& g, const NormContext& ctx) {
    check_field(g, ctx, "functional_E_inf_materialized");
    std::vector<double> weighted(g.data.size());
    for (std::size_t m = 0; m < ctx.nx; ++m)
        for (std::size_t i = 0; i < ctx.nv; ++i)
            weighted[m * ctx.nv + i] = ctx.sx_half[m * ctx.nv + i] * ctx.w_b[i] * std::abs(g(m, i));
    return weighted.empty() ? 0.0 : *std::max_element(weighted.begin(), weighted.end());
}

EnergyComponents functional_A(const Field& h, const NormContext& ctx) {
    check_field(h, ctx, "functional_A");
    EnergyComponents e;
    for (std::size_t m = 0; m < ctx.nx; ++m)
        for (std::size_t i = 0; i < ctx.nv; ++i)
            e.inf = std::max(e.inf, ctx.sx_half[m * ctx.nv + i] * ctx.w_b[i] * std::abs(h(m, i)) / ctx.nu[i]);
    e.cro = weighted_l2(h, ctx, [&](std::size_t m, std::size_t i) {
        return ctx.z_ma[i] * ctx.sx_half[m * ctx.nv + i] * ctx.w_bg[i] / std::sqrt(ctx.nu[i]);
    });
    const double theta = ctx.p.Theta();
    e.two = split_norm(h, ctx, 0.5 * theta, -0.5);
    e.two_weighted = split_norm(scaled(h, ctx.w_bg), ctx, 0.5 * theta, -0.5);
    return e;
}

EnergyComponents functional_B(std::span<const double> phi, const NormContext& ctx) {
    return boundary_functional(phi, ctx, ctx.nx - 1, -1);
}

EnergyComponents functional_C(std::span<const double> f_b, const NormContext& ctx) {
    return boundary_functional(f_b, ctx, 0, +1);
}

Field sigma_transform(const Field& g, const NormContext& ctx, double scale) {
    check_field(g, ctx, "sigma_transform");
    Field out = g;
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] *= std::exp(scale * ctx.p.hbar * ctx.sigma[k]);
    return out;
}

double functional_D(const Field& h, const NormContext& ctx, std::string* note) {
    check_field(h, ctx, "functional_D");
    const SpectralData& sd = *ctx.sd;
    if (sd.cls.i_zero.empty()) {
        if (note) *note = "nondegenerate regime: Pbb = 0, D = 0";
        return 0.0;
    }
    const VelocityGrid& grid = sd.op.grid;
    Field F(ctx.nx, ctx.nv);
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("functional_D: X_" + std::to_string(j) + " has not been solved");
        std::vector<double> a(ctx.nx);
        for (std::size_t m = 0; m < ctx.nx; ++m) a[m] = weighted_dot(x->X, h.row(m), grid) / x->gram;
        const std::vector<double> t = tail_integral(a, *ctx.slab);
        for (std::size_t m = 0; m < ctx.nx; ++m)
            for (std::size_t i = 0; i < ctx.nv; ++i) F(m, i) += t[m] * x->LX[i] / grid.nodes[i][2];
    }
    return functional_E(sigma_transform(F, ctx), ctx).total();
}

ProbeResult operator_bound_probe(const LinearizedOperator& op, const WeightParams& p, const FarField& ff,
                                 int n_samples, std::uint64_t seed, const std::vector<double>& x_samples) {
    ProbeResult r;
    r.seed = seed;
    r.hypothesis_violation = !(p.alpha > 0.0 && p.alpha < p.mu_gamma());
    const VelocityGrid& grid = op.grid;
    const std::size_t N = grid.size();
    const double sT = std::sqrt(ff.T);
    // Gaussian-weighted monomials of total degree <= 3 in xi = (v - u) / sqrt(T).
    std::vector<std::vector<double>> basis;
    for (int a = 0; a <= 3; ++a)
        for (int b = 0; a + b <= 3; ++b)
            for (int c = 0; a + b + c <= 3; ++c) {
                std::vector<double> f(N);
                for (std::size_t i = 0; i < N; ++i) {
                    const Vec3& v = grid.nodes[i];
                    const double x = v[0] / sT, y = v[1] / sT, z = (v[2] - ff.u3) / sT;
                    f[i] = std::pow(x, a) * std::pow(y, b) * std::pow(z, c) * std::exp(-0.25 * (x * x + y * y + z * z));
                }
                basis.push_back(std::move(f));
            }
    std::vector<double> w(N), zma(N);
    for (std::size_t i = 0; i < N; ++i) {
        w[i] = weight_w(grid.nodes[i], p.beta, p.vartheta, ff);
        zma[i] = weight_z(grid.nodes[i], -p.alpha);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (int s = 0; s < n_samples; ++s) {
        std::vector<double> g(N, 0.0);
        for (const auto& f : basis) {
            const double c = normal(rng);
            for (std::size_t i = 0; i < N; ++i) g[i] += c * f[i];
        }
        double best = 0.0;
        for (double x : x_samples) {
            std::vector<double> sx(N), e(N), in(N);
            for (std::size_t i = 0; i < N; ++i) {
                const SigmaValue sv = sigma_all(x, rel_speed(grid.nodes[i], ff), p);
                sx[i] = sv.sigma_x;
                e[i] = std::exp(p.hbar * sv.sigma);
                in[i] = g[i] / e[i];
            }
            const std::vector<double> Lin = apply_L(op, in);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double kh = e[i] * (op.nu[i] * in[i] - Lin[i]);
                const double a = zma[i] * std::sqrt(sx[i]) * w[i] * kh / std::sqrt(op.nu[i]);
                const double b = std::sqrt(op.nu[i] * sx[i]) * w[i] * g[i];
                num += grid.weights[i] * a * a;
                den += grid.weights[i] * b * b;
            }
            if (den > 0.0) best = std::max(best, num / den);
        }
        r.per_sample.push_back(best);
        r.constant = std::max(r.constant, best);
    }
    return r;
}

StabilityFit stability_constant(const std::vector<StabilityRun>& runs) {
    StabilityFit fit;
    if (runs.size() < 3) throw ContractError("stability_constant: at least 3 runs required");
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const StabilityRun& r = runs[k];
        if (!(r.sources > 0.0) || !std::isfinite(r.sources) || !std::isfinite(r.energy)) {
            ++fit.skipped;
            fit.notes.push_back("run " + std::to_string(k) + " skipped: degenerate source functional");
            continue;
        }
        fit.constant = std::max(fit.constant, r.energy / r.sources);
        ++fit.used;
    }
    fit.valid = fit.used > 0 && std::isfinite(fit.constant);
    return fit;
}

std::string norm_report_json(const NormReport& r) {
    using nlohmann::json;
    auto comp = [](const EnergyComponents& e) {
        return json{{"inf", e.inf}, {"cro", e.cro}, {"two", e.two}, {"two_weighted", e.two_weighted}, {"total", e.total()}};
    };
    json j;
    j["E"] = comp(r.E);
    j["A"] = comp(r.A);
    j["B"] = comp(r.B);
    j["C"] = comp(r.C);
    j["D"] = r.D;
    if (!r.note.empty()) j["note"] = r.note;
    j["params"] = {{"gamma", r.params.gamma}, {"delta", r.params.delta}, {"l", r.params.l}, {"hbar", r.params.hbar},
                   {"vartheta", r.params.vartheta}, {"beta", r.params.beta}, {"alpha", r.params.alpha}};
    j["sup_realisation"] = "lattice max over slab nodes and velocity nodes";
    return j.dump(2);
}

}  // namespace kbl
