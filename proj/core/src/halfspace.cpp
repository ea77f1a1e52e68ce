#include "kbl/halfspace.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <tuple>

#include "json.hpp"
#include "kbl/errors.hpp"

namespace kbl {

Field sample_source(const LinearProblem& prob, const SlabGrid& slab, std::size_t nv) {
    Field S(slab.size(), nv);
    if (!prob.source) return S;
    for (std::size_t m = 0; m < slab.size(); ++m)
        for (std::size_t i = 0; i < nv; ++i) S(m, i) = prob.source(slab.x[m], i);
    return S;
}

double source_null_defect(const Field& S, const SpectralData& sd) {
    const VelocityGrid& grid = sd.op.grid;
    double worst = 0.0;
    for (std::size_t m = 0; m < S.nx; ++m) {
        const std::vector<double> p = project_null(S.row(m), sd.basis, grid);
        const double a = std::sqrt(weighted_dot(p, p, grid));
        const double b = std::sqrt(weighted_dot(S.row(m), S.row(m), grid));
        if (b > 0.0) worst = std::max(worst, a / b);
    }
    return worst;
}

std::pair<Field, Field> decompose_source(const Field& S, const SpectralData& sd, const SlabGrid& slab) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    if (S.nx != slab.size() || S.nv != N) throw ContractError("decompose_source: shape mismatch");
    Field perp = S, f2(S.nx, N);
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("decompose_source: X_" + std::to_string(j) + " has not been solved");
        std::vector<double> a(S.nx);
        double amax = 0.0, scale = 0.0;
        const double xnorm = std::sqrt(weighted_dot(x->X, x->X, grid)) / x->gram;
        for (std::size_t m = 0; m < S.nx; ++m) {
            a[m] = weighted_dot(x->X, S.row(m), grid) / x->gram;
            amax = std::max(amax, std::abs(a[m]));
            scale = std::max(scale, xnorm * std::sqrt(weighted_dot(S.row(m), S.row(m), grid)));
        }
        // Projections at roundoff level (e.g. removed by symmetry) carry no tail.
        if (amax <= 1e-13 * scale) continue;
        const std::vector<double> t = tail_integral(a, slab);
        for (std::size_t m = 0; m < S.nx; ++m)
            for (std::size_t i = 0; i < N; ++i) {
                perp(m, i) -= a[m] * x->LX[i];
                f2(m, i) -= t[m] * sd.basis.psi[j][i];
            }
    }
    return {std::move(perp), std::move(f2)};
}

std::vector<SolvabilityResidual> solvability_residuals(const Field& f1, const SpectralData& sd) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    if (f1.nv != N) throw ContractError("solvability_residuals: lattice mismatch");
    std::vector<SolvabilityResidual> out;
    auto bracket = [&](const std::vector<double>& test, const std::string& kind, int j) {
        SolvabilityResidual r;
        r.kind = kind;
        r.j = j;
        for (std::size_t m = 0; m < f1.nx; ++m) {
            double s = 0.0;
            for (std::size_t i = 0; i < N; ++i) s += grid.weights[i] * test[i] * grid.nodes[i][2] * f1(m, i);
            if (m == 0) r.at_wall = s;
            r.sup_x = std::max(r.sup_x, std::abs(s));
        }
        out.push_back(r);
    };
    for (int j : sd.cls.i_plus) bracket(sd.basis.psi[j], "plus", j);
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("solvability_residuals: X_" + std::to_string(j) + " has not been solved");
        bracket(x->X, "zero", j);
    }
    return out;
}

int count_conditions(double mach) { return classify_mach(mach).n_plus; }

HalfspaceSolution solve_linear_on_slab(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                       const DampingConfig& dc, const SlabGrid& slab, const SlabSolverOptions& opts) {
    return solve_linear_field(sample_source(prob, slab, sd.op.grid.size()), prob.f_b, p, sd, dc, slab, opts);
}

HalfspaceSolution solve_linear_field(const Field& S, std::span<const double> f_b, const WeightParams& p,
                                     const SpectralData& sd, const DampingConfig& dc, const SlabGrid& slab,
                                     const SlabSolverOptions& opts) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    if (f_b.size() != N) throw ContractError("linear problem: f_b must have lattice length");
    HalfspaceSolution sol;
    sol.slab = slab;
    sol.report.source_null_defect = source_null_defect(S, sd);
    auto [perp, f2] = decompose_source(S, sd, slab);
    BoundaryData bd = BoundaryData::zero(N);
    for (std::size_t i = 0; i < N; ++i)
        if (grid.nodes[i][2] > 0.0) bd.f_b[i] = f_b[i] - f2(0, i);
    auto [f1, rep] = solve_damped_slab(perp, bd, sd, dc, slab, p, opts);
    sol.f = f1;
    for (std::size_t k = 0; k < sol.f.data.size(); ++k) sol.f.data[k] += f2.data[k];
    sol.report.residuals = solvability_residuals(f1, sd);
    const Field d = apply_damping(f1, dc, sd, p, slab);
    for (double v : d.data) sol.report.damping_sup = std::max(sol.report.damping_sup, std::abs(v));
    sol.report.iterations = rep.iterations;
    sol.report.slab = std::move(rep);
    sol.report.A_values = {slab.A};
    sol.f1 = std::move(f1);
    sol.f2 = std::move(f2);
    sol.f_b_used.assign(f_b.begin(), f_b.end());
    return sol;
}

HalfspaceSolution solve_linear_halfspace(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                         const DampingConfig& dc, const HalfspaceOptions& opts) {
    if (opts.A_sequence.empty()) throw ConfigError("A_sequence must not be empty");
    std::vector<double> As = opts.A_sequence;
    std::sort(As.begin(), As.end());
    const SlabGrid master = build_slab(As.back(), opts.n_x, opts.grading);
    const VelocityGrid& grid = sd.op.grid;
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weight_w(grid.nodes[i], p.beta, p.vartheta, sd.ff);

    std::vector<double> deltas, used_A;
    HalfspaceSolution prev;
    bool have_prev = false, converged = false;
    for (double A : As) {
        std::size_t last = 0;
        for (std::size_t m = 1; m < master.size(); ++m)
            if (std::abs(master.x[m] - A) < std::abs(master.x[last] - A)) last = m;
        if (last < 4) throw ConfigError("A_sequence entry " + std::to_string(A) + " leaves fewer than 5 slab nodes");
        SlabGrid slab;
        slab.x.assign(master.x.begin(), master.x.begin() + last + 1);
        slab.A = slab.x.back();
        HalfspaceSolution cur = solve_linear_on_slab(prob, p, sd, dc, slab, opts.slab);
        used_A.push_back(slab.A);
        if (have_prev) {
            double d = 0.0;
            for (std::size_t m = 0; m < prev.slab.size(); ++m)
                for (std::size_t i = 0; i < w.size(); ++i) d = std::max(d, w[i] * std::abs(cur.f(m, i) - prev.f(m, i)));
            deltas.push_back(d);
        }
        prev = std::move(cur);
        have_prev = true;
        if (opts.stop_on_cauchy && !deltas.empty() && deltas.back() <= opts.cauchy_tol) {
            converged = true;
            break;
        }
    }
    if (opts.stop_on_cauchy && !converged)
        throw ExtendDomainError("A-sequence exhausted before the Cauchy criterion held; extend the domain", deltas);
    prev.report.A_values = used_A;
    prev.report.cauchy_deltas = deltas;
    // log delta_k against (delta A_{k-1} + l)^{2/(3-gamma)}.
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < deltas.size(); ++k)
        if (deltas[k] > 0.0) pts.emplace_back(std::pow(p.delta * used_A[k] + p.l, p.stretch()), std::log(deltas[k]));
    if (pts.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
        for (auto [x, y] : pts) sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
        const double n = static_cast<double>(pts.size());
        const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
        prev.report.cauchy_slope = cxx > 0.0 ? cxy / cxx : 0.0;
        prev.report.cauchy_r2 = cxx > 0.0 && cyy > 0.0 ? cxy * cxy / (cxx * cyy) : 0.0;
    }
    return prev;
}

HalfspaceSolution solve_with_shooting(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                      const DampingConfig& dc, const SlabGrid& slab, const SlabSolverOptions& opts) {
    HalfspaceSolution base = solve_linear_on_slab(prob, p, sd, dc, slab, opts);
    const std::size_t n = base.report.residuals.size();
    if (n == 0) return base;
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    std::vector<int> dirs(sd.cls.i_plus.begin(), sd.cls.i_plus.end());
    dirs.insert(dirs.end(), sd.cls.i_zero.begin(), sd.cls.i_zero.end());
    Eigen::MatrixXd R(n, dirs.size());
    std::vector<std::vector<double>> infl;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        LinearProblem e;
        e.f_b.assign(N, 0.0);
        for (std::size_t i = 0; i < N; ++i)
            if (grid.nodes[i][2] > 0.0) e.f_b[i] = sd.basis.psi[dirs[k]][i];
        const HalfspaceSolution s = solve_linear_on_slab(e, p, sd, dc, slab, opts);
        for (std::size_t r = 0; r < n; ++r) R(r, k) = s.report.residuals[r].at_wall;
        infl.push_back(std::move(e.f_b));
    }
    Eigen::VectorXd r0(n);
    for (std::size_t r = 0; r < n; ++r) r0(r) = base.report.residuals[r].at_wall;
    const Eigen::VectorXd c = R.colPivHouseholderQr().solve(-r0);
    LinearProblem corrected = prob;
    for (std::size_t k = 0; k < dirs.size(); ++k)
        for (std::size_t i = 0; i < N; ++i) corrected.f_b[i] += c(k) * infl[k][i];
    HalfspaceSolution out = solve_linear_on_slab(corrected, p, sd, dc, slab, opts);
    out.report.shooting_coefficients.assign(c.data(), c.data() + c.size());
    return out;
}

Field gamma_field(const Field& f, const SpectralData& sd, const CollisionContext& cc, double skip_rel) {
    const std::vector<double> g =
        gamma_diagonal_batch(f.data, f.nx, sd.op.grid, cc.sph, cc.ks, sd.ff, skip_rel);
    Field out(f.nx, f.nv);
    out.data = g;
    return out;
}

HalfspaceSolution solve_nonlinear(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                  const DampingConfig& dc, const SlabGrid& slab, const CollisionContext& cc,
                                  const NonlinearOptions& opts) {
    const std::size_t N = sd.op.grid.size();
    if (prob.f_b.size() != N) throw ContractError("nonlinear problem: f_b must have lattice length");
    const NormContext ctx = make_norm_context(sd, slab, p);
    const Field h = sample_source(prob, slab, N);
    Field f(slab.size(), N), f_prev(slab.size(), N);
    std::vector<double> diffs, ratios;
    int over_one = 0, total_slab = 0;
    bool relax_enabled = opts.relaxed_iterations > 0;
    auto step = [&](const Field& arg) {
        Field G = gamma_field(arg, sd, cc, opts.gamma_skip_rel);
        for (std::size_t k = 0; k < G.data.size(); ++k) G.data[k] += h.data[k];
        HalfspaceSolution next = solve_linear_field(G, prob.f_b, p, sd, dc, slab, opts.slab);
        total_slab += next.report.iterations;
        Field delta = next.f;
        for (std::size_t k = 0; k < delta.data.size(); ++k) delta.data[k] -= f.data[k];
        return std::make_pair(std::move(next), functional_E(sigma_transform(delta, ctx), ctx).total());
    };
    for (int it = 1; it <= opts.max_iter; ++it) {
        // The plain step is tried first; within the relaxed window it is replaced by the
        // relaxed-argument step only when its ratio is not yet below 0.5.
        auto [next, d] = step(f);
        if (relax_enabled && it >= 2) {
            const double trial = diffs.back() > 0.0 ? d / diffs.back() : 0.0;
            if (trial < 0.5 || it - 1 > opts.relaxed_iterations) {
                relax_enabled = false;
            } else {
                Field arg = f;
                for (std::size_t k = 0; k < arg.data.size(); ++k)
                    arg.data[k] = f_prev.data[k] + opts.relaxation * (f.data[k] - f_prev.data[k]);
                std::tie(next, d) = step(arg);
            }
        }
        const double size = functional_E(sigma_transform(next.f, ctx), ctx).total();
        if (!diffs.empty()) ratios.push_back(diffs.back() > 0.0 ? d / diffs.back() : 0.0);
        diffs.push_back(d);
        f_prev = std::move(f);
        f = next.f;
        if (!ratios.empty() && ratios.back() >= 1.0) {
            if (++over_one >= 3) throw DivergenceError("nonlinear iteration diverged: three consecutive ratios >= 1", ratios);
        } else {
            over_one = 0;
        }
        if (d <= opts.tol * size + opts.tol_abs) {
            next.report.iterations = it;
            next.report.nonlinear_diffs = diffs;
            next.report.nonlinear_ratios = ratios;
            next.report.slab.iterations = total_slab;
            next.f_b_used = prob.f_b;
            return next;
        }
    }
    throw ConvergenceError("nonlinear iteration hit max_iter without convergence", ratios);
}

DecayFit fit_decay(const Field& f, const SlabGrid& slab, const VelocityGrid& grid, const WeightParams& p,
                   const FarField& ff) {
    if (f.nx != slab.size() || f.nv != grid.size()) throw ContractError("fit_decay: shape mismatch");
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weight_w(grid.nodes[i], 0.0, 0.25 * p.vartheta, ff);
    std::vector<double> peak(f.nx, 0.0);
    double top = 0.0;
    for (std::size_t m = 0; m < f.nx; ++m) {
        for (std::size_t i = 0; i < f.nv; ++i) peak[m] = std::max(peak[m], w[i] * std::abs(f(m, i)));
        top = std::max(top, peak[m]);
    }
    if (top == 0.0) throw NumericError("fit_decay: field is identically zero");
    std::vector<double> ys, ls;
    for (std::size_t m = 0; m < f.nx; ++m) {
        const double x = slab.x[m];
        if (x < 0.2 * slab.A || x > 0.8 * slab.A || peak[m] < 1e-12 * top) continue;
        ys.push_back(p.delta * x + p.l);
        ls.push_back(std::log(peak[m]));
    }
    if (ys.size() < 3) throw NumericError("fit_decay: fewer than 3 usable slices above the noise floor");
    auto fit_at = [&](double q) {
        const double n = static_cast<double>(ys.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
        for (std::size_t k = 0; k < ys.size(); ++k) {
            const double x = std::pow(ys[k], q), y = ls[k];
            sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
        }
        const double cxx = sxx - sx * sx / n, cxy = sxy - sx * sy / n, cyy = syy - sy * sy / n;
        DecayFit d;
        d.pexp = q;
        d.points = static_cast<int>(ys.size());
        if (cxx <= 0.0 || cyy <= 0.0) return d;
        const double b = cxy / cxx;
        d.c = -b;
        d.log_amplitude = (sy - b * sx) / n;
        d.r2 = cxy * cxy / (cxx * cyy);
        return d;
    };
    DecayFit best = fit_at(0.05);
    for (double q = 0.05; q <= 4.0 + 1e-12; q += 0.005) {
        const DecayFit d = fit_at(q);
        if (d.r2 > best.r2) best = d;
    }
    double a = std::max(0.01, best.pexp - 0.005), b = best.pexp + 0.005;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int k = 0; k < 60; ++k) {
        const double c1 = b - g * (b - a), c2 = a + g * (b - a);
        if (fit_at(c1).r2 > fit_at(c2).r2) b = c2;
        else a = c1;
    }
    const DecayFit refined = fit_at(0.5 * (a + b));
    if (refined.r2 >= best.r2) best = refined;
    return best;
}

std::string solve_report_json(const SolveReport& r) {
    using nlohmann::json;
    json j;
    json res = json::array();
    for (const auto& s : r.residuals)
        res.push_back({{"kind", s.kind}, {"j", s.j}, {"at_wall", s.at_wall}, {"sup_x", s.sup_x}});
    j["solvability_residuals"] = res;
    j["A_values"] = r.A_values;
    j["cauchy_deltas"] = r.cauchy_deltas;
    j["cauchy_slope"] = r.cauchy_slope;
    j["cauchy_r2"] = r.cauchy_r2;
    if (r.has_decay)
        j["decay"] = {{"c", r.decay.c}, {"pexp", r.decay.pexp}, {"r2", r.decay.r2}, {"points", r.decay.points}};
    j["iterations"] = r.iterations;
    j["nonlinear_diffs"] = r.nonlinear_diffs;
    j["nonlinear_ratios"] = r.nonlinear_ratios;
    j["shooting_coefficients"] = r.shooting_coefficients;
    j["damping_sup"] = r.damping_sup;
    j["source_null_defect"] = r.source_null_defect;
    j["slab"] = {{"method", r.slab.method}, {"iterations", r.slab.iterations}, {"converged", r.slab.converged},
                 {"final_weighted_diff", r.slab.final_weighted_diff},
                 {"final_ratio", r.slab.ratio.empty() ? 0.0 : r.slab.ratio.back()}};
    return j.dump(2);
}

}  // namespace kbl
