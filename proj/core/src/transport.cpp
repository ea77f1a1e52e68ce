#include "kbl/transport.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "kbl/errors.hpp"
#include "kbl/parallel.hpp"

namespace kbl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// e^{-tau}, (1 - e^{-tau}) / tau and (1 - E1) / tau, series below |tau| = 1e-3.
struct IntervalWeights {
    double E, E1, E2;
};

IntervalWeights interval_weights(double tau) {
    if (std::abs(tau) < 1e-3) {
        const double t2 = tau * tau, t3 = t2 * tau;
        return {std::exp(-tau), 1.0 - tau / 2.0 + t2 / 6.0 - t3 / 24.0, 0.5 - tau / 6.0 + t2 / 24.0 - t3 / 120.0};
    }
    const double em1 = -std::expm1(-tau);
    const double E1 = em1 / tau;
    return {1.0 - em1, E1, (1.0 - E1) / tau};
}

void check_shape(const Field& f, const SlabGrid& slab, std::size_t nv, const char* who) {
    if (f.nx != slab.size() || f.nv != nv || f.data.size() != f.nx * f.nv)
        throw ContractError(std::string(who) + ": field shape does not match the slab and lattice");
}

/// Columns are the orthonormal null vectors of a conservative operator.
RowMat null_matrix(const LinearizedOperator& op) {
    const std::size_t N = op.size();
    RowMat Q(N, op.null_basis.size());
    for (std::size_t k = 0; k < op.null_basis.size(); ++k)
        for (std::size_t i = 0; i < N; ++i) Q(i, k) = op.null_basis[k][i];
    return Q;
}

void project_rows(RowMat& G, const RowMat& Q, const Eigen::VectorXd& w) {
    if (Q.cols() == 0) return;
    const RowMat WQ = w.asDiagonal() * Q;
    G -= (G * WQ) * Q.transpose();
}

double damping_scale(double x, const WeightParams& p, double theta) { return std::pow(p.delta * x + p.l, -theta); }

/// Fornberg weights for the first derivative at z from nodes xs.
std::vector<double> fd_weights(double z, const std::vector<double>& xs) {
    const int n = static_cast<int>(xs.size());
    std::vector<std::vector<double>> c(n, std::vector<double>(2, 0.0));
    double c1 = 1.0, c4 = xs[0] - z;
    c[0][0] = 1.0;
    for (int i = 1; i < n; ++i) {
        const int mn = std::min(i, 1);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = xs[i] - z;
        for (int j = 0; j < i; ++j) {
            const double c3 = xs[i] - xs[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = c[i][1];
    return w;
}

}  // namespace

SlabGrid build_slab(double A, int n_nodes, double grading) {
    if (!(A > 0.0) || !std::isfinite(A)) throw ConfigError("slab: A must be positive and finite");
    if (n_nodes < 3) throw ConfigError("slab: at least 3 nodes required");
    if (!(grading >= 1.0)) throw ConfigError("slab: grading must be >= 1");
    std::vector<double> s(n_nodes - 1);
    double total = 0.0;
    for (int k = 0; k < n_nodes - 1; ++k) {
        s[k] = std::min(std::pow(1.1, k) / grading, 1.0);
        total += s[k];
    }
    SlabGrid slab;
    slab.A = A;
    slab.x.resize(n_nodes);
    slab.x[0] = 0.0;
    for (int k = 0; k < n_nodes - 1; ++k) slab.x[k + 1] = slab.x[k] + A * s[k] / total;
    slab.x.back() = A;
    return slab;
}

Field apply_L_field(const LinearizedOperator& op, const Field& g) {
    const std::size_t N = op.size();
    if (g.nv != N) throw ContractError("apply_L_field: lattice mismatch");
    const Eigen::Map<const RowMat> G(g.data.data(), g.nx, N);
    const Eigen::Map<const RowMat> K(op.K.data(), N, N);
    const Eigen::Map<const Eigen::VectorXd> nu(op.nu.data(), N);
    const Eigen::Map<const Eigen::VectorXd> w(op.grid.weights.data(), N);
    const RowMat Q = null_matrix(op);
    RowMat P = G;
    project_rows(P, Q, w);
    RowMat out = P * nu.asDiagonal();
    out.noalias() -= P * K.transpose();
    project_rows(out, Q, w);
    Field r(g.nx, N);
    Eigen::Map<RowMat>(r.data.data(), g.nx, N) = out;
    return r;
}

Field apply_K_field(const LinearizedOperator& op, const Field& g) {
    Field r = apply_L_field(op, g);
    for (std::size_t m = 0; m < g.nx; ++m)
        for (std::size_t i = 0; i < g.nv; ++i) r(m, i) = op.nu[i] * g(m, i) - r(m, i);
    return r;
}

Field sweep(const Field& S, std::span<const double> nu, const BoundaryData& bd, const SlabGrid& slab,
            const VelocityGrid& grid) {
    const std::size_t N = grid.size(), nx = slab.size();
    check_shape(S, slab, N, "sweep");
    if (nu.size() != N || bd.f_b.size() != N || bd.phi_A.size() != N)
        throw ContractError("sweep: per-node vectors must have lattice length");
    Field g(nx, N);
    parallel_for(N, [&](std::size_t i) {
        const double v3 = grid.nodes[i][2];
        if (v3 == 0.0) throw ContractError("sweep: node with v3 = 0");
        const double a = std::abs(v3);
        if (v3 > 0.0) {
            g(0, i) = bd.f_b[i];
            for (std::size_t m = 0; m + 1 < nx; ++m) {
                const double d = slab.x[m + 1] - slab.x[m];
                const IntervalWeights iw = interval_weights(nu[i] * d / a);
                g(m + 1, i) = iw.E * g(m, i) + d / a * (S(m, i) * iw.E1 + (S(m + 1, i) - S(m, i)) * iw.E2);
            }
        } else {
            g(nx - 1, i) = bd.phi_A[i];
            for (std::size_t m = nx - 1; m-- > 0;) {
                const double d = slab.x[m + 1] - slab.x[m];
                const IntervalWeights iw = interval_weights(nu[i] * d / a);
                g(m, i) = iw.E * g(m + 1, i) + d / a * (S(m + 1, i) * iw.E1 + (S(m, i) - S(m + 1, i)) * iw.E2);
            }
        }
    });
    return g;
}

Field apply_damping(const Field& g, const DampingConfig& dc, const SpectralData& sd, const WeightParams& p,
                    const SlabGrid& slab) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    check_shape(g, slab, N, "apply_damping");
    if (dc.alpha_bar < 0.0 || dc.beta_bar < 0.0) throw ConfigError("damping strengths must be nonnegative");
    Field out(g.nx, N);
    // Each term is (coefficient row) . g_slice times an output vector.
    std::vector<std::vector<double>> coef, target;
    std::vector<double> strength;
    for (int j : sd.cls.i_plus) {
        std::vector<double> c(N);
        for (std::size_t i = 0; i < N; ++i)
            c[i] = grid.weights[i] * sd.basis.psi[j][i] * grid.nodes[i][2] / sd.basis.norms[j];
        coef.push_back(std::move(c));
        target.push_back(sd.basis.psi[j]);
        strength.push_back(dc.alpha_bar);
    }
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("apply_damping: X_" + std::to_string(j) + " has not been solved");
        std::vector<double> c(N);
        for (std::size_t i = 0; i < N; ++i) c[i] = grid.weights[i] * x->X[i] * grid.nodes[i][2] / x->gram;
        coef.push_back(std::move(c));
        target.push_back(sd.basis.psi[j]);
        strength.push_back(dc.beta_bar);
    }
    if (coef.empty()) return out;
    for (std::size_t m = 0; m < g.nx; ++m) {
        const double s = damping_scale(slab.x[m], p, dc.exponent_theta);
        for (std::size_t t = 0; t < coef.size(); ++t) {
            if (strength[t] == 0.0) continue;
            double a = 0.0;
            for (std::size_t i = 0; i < N; ++i) a += coef[t][i] * g(m, i);
            a *= strength[t] * s;
            for (std::size_t i = 0; i < N; ++i) out(m, i) += a * target[t][i];
        }
    }
    return out;
}

double weighted_sup(const Field& g, const VelocityGrid& grid, const WeightParams& p, const FarField& ff) {
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weight_w(grid.nodes[i], p.beta, p.vartheta, ff);
    double s = 0.0;
    for (std::size_t m = 0; m < g.nx; ++m)
        for (std::size_t i = 0; i < g.nv; ++i) s = std::max(s, w[i] * std::abs(g(m, i)));
    return s;
}

namespace {

void check_finite(const Field& g, int iterate) {
    for (double v : g.data)
        if (!std::isfinite(v)) throw NumericError("slab iteration produced a non-finite value at iterate " +
                                                  std::to_string(iterate));
}

struct SlabMap {
    const SpectralData& sd;
    const DampingConfig& dc;
    const SlabGrid& slab;
    const WeightParams& p;
    BoundaryData zero;

    /// sweep(K g - D g) with homogeneous boundary data.
    Field linear_part(const Field& g) const {
        Field s = apply_K_field(sd.op, g);
        const Field d = apply_damping(g, dc, sd, p, slab);
        for (std::size_t k = 0; k < s.data.size(); ++k) s.data[k] -= d.data[k];
        return sweep(s, sd.op.nu, zero, slab, sd.op.grid);
    }
};

double sup_diff(const Field& a, const Field& b, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t m = 0; m < a.nx; ++m)
        for (std::size_t i = 0; i < a.nv; ++i) s = std::max(s, w[i] * std::abs(a(m, i) - b(m, i)));
    return s;
}

double sup_w(const Field& a, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t m = 0; m < a.nx; ++m)
        for (std::size_t i = 0; i < a.nv; ++i) s = std::max(s, w[i] * std::abs(a(m, i)));
    return s;
}

/// Restarted GMRES on (I - M) g = b in the Euclidean inner product. Returns when the
/// estimated residual drops below target or the iteration budget is spent.
int gmres(const SlabMap& map, const Field& b, Field& g, double target, int restart, int budget,
          std::vector<double>& history) {
    const std::size_t n = b.data.size();
    auto apply = [&](const Field& x) {
        Field y = map.linear_part(x);
        for (std::size_t k = 0; k < n; ++k) y.data[k] = x.data[k] - y.data[k];
        return y;
    };
    int used = 0;
    while (used < budget) {
        Field r = apply(g);
        for (std::size_t k = 0; k < n; ++k) r.data[k] = b.data[k] - r.data[k];
        ++used;
        const double beta = Eigen::Map<const Eigen::VectorXd>(r.data.data(), n).norm();
        history.push_back(beta);
        if (beta <= target) return used;
        const int m = restart;
        std::vector<Field> V;
        V.reserve(m + 1);
        for (double& v : r.data) v /= beta;
        V.push_back(std::move(r));
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
        Eigen::VectorXd cs = Eigen::VectorXd::Zero(m), sn = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m + 1);
        e(0) = beta;
        int k = 0;
        for (; k < m && used < budget; ++k) {
            Field w = apply(V[k]);
            ++used;
            auto wv = Eigen::Map<Eigen::VectorXd>(w.data.data(), n);
            for (int pass = 0; pass < 2; ++pass)
                for (int j = 0; j <= k; ++j) {
                    const auto vj = Eigen::Map<const Eigen::VectorXd>(V[j].data.data(), n);
                    const double h = vj.dot(wv);
                    H(j, k) += h;
                    wv -= h * vj;
                }
            H(k + 1, k) = wv.norm();
            for (int j = 0; j < k; ++j) {
                const double t = cs(j) * H(j, k) + sn(j) * H(j + 1, k);
                H(j + 1, k) = -sn(j) * H(j, k) + cs(j) * H(j + 1, k);
                H(j, k) = t;
            }
            const double den = std::hypot(H(k, k), H(k + 1, k));
            cs(k) = H(k, k) / den;
            sn(k) = H(k + 1, k) / den;
            const double hk1 = H(k + 1, k);
            H(k, k) = den;
            H(k + 1, k) = 0.0;
            e(k + 1) = -sn(k) * e(k);
            e(k) = cs(k) * e(k);
            history.push_back(std::abs(e(k + 1)));
            if (std::abs(e(k + 1)) <= target || hk1 == 0.0) {
                ++k;
                break;
            }
            if (k + 1 < m) {
                for (double& v : w.data) v /= hk1;
                V.push_back(std::move(w));
            }
        }
        const Eigen::VectorXd y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(e.head(k));
        auto gv = Eigen::Map<Eigen::VectorXd>(g.data.data(), n);
        for (int j = 0; j < k; ++j) gv += y(j) * Eigen::Map<const Eigen::VectorXd>(V[j].data.data(), n);
        if (history.back() <= target) return used;
    }
    return used;
}

}  // namespace

std::pair<Field, IterationReport> solve_damped_slab(const Field& h, const BoundaryData& bd, const SpectralData& sd,
                                                    const DampingConfig& dc, const SlabGrid& slab,
                                                    const WeightParams& p, const SlabSolverOptions& opts) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    check_shape(h, slab, N, "solve_damped_slab");
    check_finite(h, 0);
    p.validate();
    std::vector<double> w(N);
    for (std::size_t i = 0; i < N; ++i) w[i] = weight_w(grid.nodes[i], p.beta, p.vartheta, sd.ff);

    const SlabMap map{sd, dc, slab, p, BoundaryData::zero(N)};
    const Field base = sweep(h, sd.op.nu, bd, slab, grid);
    auto full_map = [&](const Field& g) {
        Field t = map.linear_part(g);
        for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] += base.data[k];
        return t;
    };

    IterationReport rep;
    Field g(slab.size(), N);
    if (opts.method == SlabMethod::SourceIteration) {
        rep.method = "source_iteration";
        for (int n = 1; n <= opts.max_iter; ++n) {
            Field next = full_map(g);
            check_finite(next, n);
            const double d = sup_diff(next, g, w);
            double plain = 0.0;
            for (std::size_t k = 0; k < next.data.size(); ++k) plain = std::max(plain, std::abs(next.data[k] - g.data[k]));
            rep.ratio.push_back(rep.diff.empty() || rep.diff.back() == 0.0 ? 0.0 : d / rep.diff.back());
            rep.diff.push_back(d);
            rep.plain_diff.push_back(plain);
            g = std::move(next);
            rep.iterations = n;
            if (d <= opts.tol_rel * sup_w(g, w) + opts.tol_abs) {
                rep.converged = true;
                rep.final_weighted_diff = d;
                return {std::move(g), std::move(rep)};
            }
        }
        throw ConvergenceError("slab source iteration hit max_iter without convergence", rep.ratio);
    }

    rep.method = "krylov";
    const double b_norm = Eigen::Map<const Eigen::VectorXd>(base.data.data(), base.data.size()).norm();
    double target = opts.tol_rel * b_norm;
    int budget = opts.max_iter;
    std::vector<double> history;
    while (budget > 0) {
        const int used = gmres(map, base, g, target, opts.krylov_restart, budget, history);
        budget -= used;
        check_finite(g, opts.max_iter - budget);
        Field next = full_map(g);
        --budget;
        const double d = sup_diff(next, g, w);
        g = std::move(next);
        rep.iterations = opts.max_iter - budget;
        rep.final_weighted_diff = d;
        if (d <= opts.tol_rel * sup_w(g, w) + opts.tol_abs) {
            rep.converged = true;
            break;
        }
        target *= 0.1;
        if (target < 1e-300) break;
    }
    for (std::size_t k = 0; k < history.size(); ++k) {
        rep.diff.push_back(history[k]);
        rep.ratio.push_back(k == 0 || history[k - 1] == 0.0 ? 0.0 : history[k] / history[k - 1]);
    }
    if (!rep.converged) throw ConvergenceError("slab Krylov iteration hit max_iter without convergence", rep.ratio);
    return {std::move(g), std::move(rep)};
}

Field op_Y_A(std::span<const double> f_at_A, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid) {
    const std::size_t N = grid.size(), nx = slab.size();
    if (f_at_A.size() != N || kappa.nx != nx || kappa.nv != N) throw ContractError("op_Y_A: shape mismatch");
    Field out(nx, N);
    for (std::size_t i = 0; i < N; ++i) {
        if (grid.nodes[i][2] > 0.0) continue;
        const double kA = kappa.at(nx - 1, i);
        for (std::size_t m = 0; m < nx; ++m) out(m, i) = std::exp(kA - kappa.at(m, i)) * f_at_A[i];
    }
    return out;
}

Field op_Z(std::span<const double> f_at_0, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid) {
    const std::size_t N = grid.size(), nx = slab.size();
    if (f_at_0.size() != N || kappa.nx != nx || kappa.nv != N) throw ContractError("op_Z: shape mismatch");
    Field out(nx, N);
    for (std::size_t i = 0; i < N; ++i) {
        if (grid.nodes[i][2] < 0.0) continue;
        for (std::size_t m = 0; m < nx; ++m) out(m, i) = std::exp(-kappa.at(m, i)) * f_at_0[i];
    }
    return out;
}

Field op_U(const Field& f, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid) {
    const std::size_t N = grid.size(), nx = slab.size();
    check_shape(f, slab, N, "op_U");
    if (kappa.nx != nx || kappa.nv != N) throw ContractError("op_U: kappa table shape mismatch");
    Field out(nx, N);
    parallel_for(N, [&](std::size_t i) {
        const double v3 = grid.nodes[i][2];
        const double a = std::abs(v3);
        if (v3 > 0.0) {
            for (std::size_t m = 0; m + 1 < nx; ++m) {
                const double d = slab.x[m + 1] - slab.x[m];
                const IntervalWeights iw = interval_weights(kappa.at(m + 1, i) - kappa.at(m, i));
                out(m + 1, i) = iw.E * out(m, i) + d / a * (f(m, i) * iw.E1 + (f(m + 1, i) - f(m, i)) * iw.E2);
            }
        } else {
            for (std::size_t m = nx - 1; m-- > 0;) {
                const double d = slab.x[m + 1] - slab.x[m];
                const IntervalWeights iw = interval_weights(kappa.at(m, i) - kappa.at(m + 1, i));
                out(m, i) = iw.E * out(m + 1, i) + d / a * (f(m + 1, i) * iw.E1 + (f(m, i) - f(m + 1, i)) * iw.E2);
            }
        }
    });
    return out;
}

std::pair<Field, BoundaryData> manufacture_slab_problem(const Field& g_exact, const Field& dgdx_exact,
                                                        const SpectralData& sd, const DampingConfig& dc,
                                                        const SlabGrid& slab, const WeightParams& p) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    check_shape(g_exact, slab, N, "manufacture_slab_problem");
    check_shape(dgdx_exact, slab, N, "manufacture_slab_problem");
    Field h = apply_L_field(sd.op, g_exact);
    const Field d = apply_damping(g_exact, dc, sd, p, slab);
    for (std::size_t m = 0; m < h.nx; ++m)
        for (std::size_t i = 0; i < N; ++i) h(m, i) += grid.nodes[i][2] * dgdx_exact(m, i) + d(m, i);
    BoundaryData bd = BoundaryData::zero(N);
    for (std::size_t i = 0; i < N; ++i) {
        if (grid.nodes[i][2] > 0.0) bd.f_b[i] = g_exact(0, i);
        else bd.phi_A[i] = g_exact(slab.size() - 1, i);
    }
    return {std::move(h), std::move(bd)};
}

Field dx_field(const Field& g, const SlabGrid& slab) {
    const std::size_t nx = slab.size();
    if (g.nx != nx) throw ContractError("dx_field: slab mismatch");
    if (nx < 5) throw ContractError("dx_field: at least 5 slab nodes required");
    Field out(nx, g.nv);
    for (std::size_t m = 0; m < nx; ++m) {
        const std::size_t lo = std::min(m >= 2 ? m - 2 : 0, nx - 5);
        std::vector<double> xs(slab.x.begin() + lo, slab.x.begin() + lo + 5);
        const std::vector<double> w = fd_weights(slab.x[m], xs);
        for (std::size_t i = 0; i < g.nv; ++i) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) s += w[k] * g(lo + k, i);
            out(m, i) = s;
        }
    }
    return out;
}

std::vector<double> residual(const Field& g, const Field& h, const SpectralData& sd, const DampingConfig& dc,
                             const SlabGrid& slab, const WeightParams& p) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    check_shape(g, slab, N, "residual");
    check_shape(h, slab, N, "residual");
    const Field dg = dx_field(g, slab);
    const Field lg = apply_L_field(sd.op, g);
    const Field d = apply_damping(g, dc, sd, p, slab);
    std::vector<double> out(slab.size());
    for (std::size_t m = 0; m < slab.size(); ++m) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double r = grid.nodes[i][2] * dg(m, i) + lg(m, i) + d(m, i) - h(m, i);
            s += grid.weights[i] * r * r;
        }
        out[m] = std::sqrt(s);
    }
    return out;
}

double mild_identity_defect(const Field& g, const Field& h, const BoundaryData& bd, const SpectralData& sd,
                            const DampingConfig& dc, const SlabGrid& slab, const WeightParams& p) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size(), nx = slab.size();
    check_shape(g, slab, N, "mild_identity_defect");
    const KappaTable kap = build_kappa_table(slab.x, grid, sd.op.nu, p, sd.ff);
    Field scale(nx, N);  // sigma_x^{1/2} e^{hbar sigma}
    for (std::size_t m = 0; m < nx; ++m)
        for (std::size_t i = 0; i < N; ++i) {
            const Vec3& v = grid.nodes[i];
            const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + (v[2] - sd.ff.u3) * (v[2] - sd.ff.u3));
            const SigmaValue s = sigma_all(slab.x[m], r, p);
            scale(m, i) = std::sqrt(s.sigma_x) * std::exp(p.hbar * s.sigma);
        }
    Field rhs = apply_K_field(sd.op, g);
    const Field d = apply_damping(g, dc, sd, p, slab);
    for (std::size_t k = 0; k < rhs.data.size(); ++k) rhs.data[k] = scale.data[k] * (rhs.data[k] + h.data[k] - d.data[k]);
    std::vector<double> at0(N, 0.0), atA(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        if (grid.nodes[i][2] > 0.0) at0[i] = scale(0, i) * bd.f_b[i];
        else atA[i] = scale(nx - 1, i) * bd.phi_A[i];
    }
    const Field y = op_Y_A(atA, kap, slab, grid);
    const Field z = op_Z(at0, kap, slab, grid);
    const Field u = op_U(rhs, kap, slab, grid);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < g.data.size(); ++k) {
        const double lhs = scale.data[k] * g.data[k];
        num = std::max(num, std::abs(lhs - y.data[k] - z.data[k] - u.data[k]));
        den = std::max(den, std::abs(lhs));
    }
    return den > 0.0 ? num / den : num;
}

std::vector<double> tail_integral(std::span<const double> a, const SlabGrid& slab) {
    const std::size_t nx = slab.size();
    if (a.size() != nx) throw ContractError("tail_integral: length mismatch");
    double amax = 0.0;
    for (double v : a) amax = std::max(amax, std::abs(v));
    std::vector<double> out(nx, 0.0);
    if (amax == 0.0) return out;

    // Tail: least-squares fit of log|a| over the last tenth of the slab (at least 3 nodes).
    const std::size_t k = std::max<std::size_t>(3, nx / 10);
    const std::size_t lo = nx - k;
    double tmax = 0.0;
    bool same_sign = true;
    for (std::size_t m = lo; m < nx; ++m) {
        tmax = std::max(tmax, std::abs(a[m]));
        if (a[m] * a[nx - 1] <= 0.0) same_sign = false;
    }
    double tail = 0.0;
    if (tmax > 1e-13 * amax) {
        if (!same_sign) throw InadmissibleSourceError("source tail changes sign near x = A; extend the slab");
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t m = lo; m < nx; ++m) {
            const double x = slab.x[m], y = std::log(std::abs(a[m]));
            sx += x, sy += y, sxx += x * x, sxy += x * y;
        }
        const double n = static_cast<double>(k);
        const double lambda = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if (!(lambda < 0.0)) throw InadmissibleSourceError("source does not decay near x = A; extend the slab");
        tail = a[nx - 1] / (-lambda);
    }
    out[nx - 1] = tail;
    for (std::size_t m = nx - 1; m-- > 0;) {
        const double d = slab.x[m + 1] - slab.x[m];
        const double p = a[m], q = a[m + 1];
        double piece;
        if (p * q > 0.0 && std::abs(std::log(q / p)) > 1e-12) piece = d * (q - p) / std::log(q / p);
        else piece = 0.5 * d * (p + q);
        out[m] = out[m + 1] + piece;
    }
    return out;
}

void write_convergence_csv(const std::string& path, const IterationReport& rep) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << "iter,diff_norm,ratio\n" << std::setprecision(17);
    for (std::size_t k = 0; k < rep.diff.size(); ++k) os << k + 1 << ',' << rep.diff[k] << ',' << rep.ratio[k] << '\n';
}

void write_solution_csv(const std::string& path, const Field& g, const SlabGrid& slab, const VelocityGrid& grid) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << "x,v1,v2,v3,g\n" << std::setprecision(17);
    for (std::size_t m = 0; m < g.nx; ++m)
        for (std::size_t i = 0; i < g.nv; ++i) {
            const Vec3& v = grid.nodes[i];
            os << slab.x[m] << ',' << v[0] << ',' << v[1] << ',' << v[2] << ',' << g(m, i) << '\n';
        }
}

}  // namespace kbl
