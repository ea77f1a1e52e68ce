#include "kbl/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "kbl/errors.hpp"

namespace kbl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double weighted_norm(std::span<const double> f, const VelocityGrid& grid) {
    return std::sqrt(std::max(0.0, weighted_dot(f, f, grid)));
}

std::vector<std::vector<double>> orthonormal_null(const NullBasis& basis, const VelocityGrid& grid) {
    std::vector<std::vector<double>> q;
    for (const auto& p : basis.psi) {
        std::vector<double> v = p;
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& e : q) {
                const double c = weighted_dot(v, e, grid);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * e[i];
            }
        }
        const double n = weighted_norm(v, grid);
        for (double& x : v) x /= n;
        q.push_back(std::move(v));
    }
    return q;
}

void require_uniform_weights(const VelocityGrid& grid) {
    const double w0 = grid.weights.front();
    for (double w : grid.weights)
        if (std::abs(w - w0) > 1e-14 * w0) throw ContractError("dense Fredholm solve expects uniform lattice weights");
}

}  // namespace

const XjSolution* DampingData::find(int j) const {
    for (const auto& x : X)
        if (x.j == j) return &x;
    return nullptr;
}

double weighted_dot(std::span<const double> f, std::span<const double> g, const VelocityGrid& grid) {
    if (f.size() != grid.size() || g.size() != grid.size()) throw ContractError("weighted_dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += grid.weights[i] * f[i] * g[i];
    return s;
}

double entropy_flux(std::span<const double> f, std::span<const double> g, const VelocityGrid& grid) {
    if (f.size() != grid.size() || g.size() != grid.size()) throw ContractError("entropy_flux: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += grid.weights[i] * grid.nodes[i][2] * f[i] * g[i];
    return s;
}

NullBasis build_null_basis(const VelocityGrid& grid, const FarField& ff) {
    NullBasis b;
    const std::size_t N = grid.size();
    for (auto& p : b.psi) p.resize(N);
    const double sT = std::sqrt(ff.T);
    const double r2 = std::sqrt(2.0), r10 = std::sqrt(10.0), r30 = std::sqrt(30.0), r52 = std::sqrt(2.5);
    for (std::size_t i = 0; i < N; ++i) {
        const Vec3& v = grid.nodes[i];
        const double x1 = v[0] / sT, x2 = v[1] / sT, x3 = (v[2] - ff.u3) / sT;
        const double q = x1 * x1 + x2 * x2 + x3 * x3;
        const double m = sqrt_maxwellian(v, ff);
        b.psi[0][i] = x1 * m;
        b.psi[1][i] = x2 * m;
        b.psi[2][i] = (r52 - q / r10) * m;
        b.psi[3][i] = (x3 / r2 + q / r30) * m;
        b.psi[4][i] = (-x3 / r2 + q / r30) * m;
    }
    for (int k = 0; k < 5; ++k) {
        b.norms[k] = weighted_dot(b.psi[k], b.psi[k], grid);
        b.fluxes[k] = entropy_flux(b.psi[k], b.psi[k], grid);
    }
    return b;
}

MachClassification classify_mach(double mach, double tol_mach) {
    MachClassification c;
    auto place = [&](int idx, double s) {
        if (std::abs(s) <= tol_mach) c.i_zero.push_back(idx);
        else if (s > 0.0) c.i_plus.push_back(idx);
        else c.i_minus.push_back(idx);
    };
    place(0, mach);
    place(1, mach);
    place(2, mach);
    place(3, mach + 1.0);
    place(4, mach - 1.0);
    c.n_plus = static_cast<int>(c.i_plus.size() + c.i_zero.size());
    return c;
}

MachClassification classify(const FarField& ff, double tol_mach) { return classify_mach(ff.mach(), tol_mach); }

std::vector<double> project_null(std::span<const double> f, const NullBasis& basis, const VelocityGrid& grid) {
    std::vector<double> out(f.size(), 0.0);
    for (int k = 0; k < 5; ++k) {
        const double a = weighted_dot(f, basis.psi[k], grid) / basis.norms[k];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * basis.psi[k][i];
    }
    return out;
}

double null_residual(const LinearizedOperator& op, const NullBasis& basis) {
    double worst = 0.0;
    for (const auto& p : basis.psi) {
        const auto Lp = apply_L(op, p);
        worst = std::max(worst, weighted_norm(Lp, op.grid) / weighted_norm(p, op.grid));
    }
    return worst;
}

double symmetry_defect(const LinearizedOperator& op) {
    const std::size_t N = op.size();
    const auto& w = op.grid.weights;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const double a = w[i] * op.K[i * N + j];
            const double d = a - w[j] * op.K[j * N + i];
            num += d * d;
            den += a * a;
        }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

LinearizedOperator make_conservative(const LinearizedOperator& op, const NullBasis& basis) {
    LinearizedOperator c;
    c.grid = op.grid;
    c.nu = op.nu;
    c.K = op.K;
    const std::size_t N = op.size();
    const auto& w = op.grid.weights;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) {
            const double a = 0.5 * (c.K[i * N + j] + c.K[j * N + i] * w[j] / w[i]);
            c.K[i * N + j] = a;
            c.K[j * N + i] = a * w[i] / w[j];
        }
    c.null_basis = orthonormal_null(basis, op.grid);
    return c;
}

XjSolution solve_Xj(const LinearizedOperator& conservative, const LinearizedOperator& reference,
                    const NullBasis& basis, int j, double tol) {
    if (j < 0 || j > 4) throw ContractError("solve_Xj: index out of range");
    if (conservative.null_basis.size() != 5) throw ContractError("solve_Xj: operator is not in conservative form");
    const VelocityGrid& grid = conservative.grid;
    require_uniform_weights(grid);
    const std::size_t N = conservative.size();
    const double w = grid.weights.front();

    // Euclidean-orthonormal null basis; with uniform W the weighted and plain adjoints agree.
    Eigen::MatrixXd Q(N, 5);
    for (int k = 0; k < 5; ++k)
        for (std::size_t i = 0; i < N; ++i) Q(i, k) = std::sqrt(w) * conservative.null_basis[k][i];

    Eigen::Map<const RowMat> K(conservative.K.data(), N, N);
    Eigen::MatrixXd L0 = -K;
    for (std::size_t i = 0; i < N; ++i) L0(i, i) += conservative.nu[i];
    const Eigen::MatrixXd QtL = Q.transpose() * L0;
    const Eigen::MatrixXd LQ = L0 * Q;
    const Eigen::MatrixXd QtLQ = QtL * Q;
    double shift = 0.0;
    for (double x : conservative.nu) shift += x;
    shift /= static_cast<double>(N);
    Eigen::MatrixXd A = L0;
    A.noalias() -= Q * QtL;
    A.noalias() -= LQ * Q.transpose();
    A.noalias() += Q * (QtLQ + shift * Eigen::MatrixXd::Identity(5, 5)) * Q.transpose();
    L0.resize(0, 0);

    Eigen::VectorXd b(N);
    for (std::size_t i = 0; i < N; ++i) b(i) = grid.nodes[i][2] * basis.psi[j][i];
    const Eigen::VectorXd rhs_full = b;
    b -= Q * (Q.transpose() * b);
    const Eigen::VectorXd rhs_perp = b;

    Eigen::VectorXd x;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
        x = llt.solve(b);
    } else {
        x = A.partialPivLu().solve(b);
    }
    x -= Q * (Q.transpose() * x);

    XjSolution s;
    s.j = j;
    s.X.assign(x.data(), x.data() + N);
    s.LX = apply_L(conservative, s.X);
    s.gram = weighted_dot(s.X, s.LX, grid);
    std::vector<double> rhs(rhs_full.data(), rhs_full.data() + N);
    std::vector<double> perp(rhs_perp.data(), rhs_perp.data() + N);
    const double rhs_norm = weighted_norm(rhs, grid);
    auto rel_residual = [&](const std::vector<double>& LX, const std::vector<double>& target) {
        std::vector<double> r(N);
        for (std::size_t i = 0; i < N; ++i) r[i] = LX[i] - target[i];
        return weighted_norm(r, grid) / rhs_norm;
    };
    // (v3 psi_j, psi_i)_W vanishes analytically for j in I0; on the lattice it is the flux defect.
    std::vector<double> along(N);
    for (std::size_t i = 0; i < N; ++i) along[i] = rhs[i] - perp[i];
    s.flux_defect = weighted_norm(along, grid) / rhs_norm;
    s.residual_cons = rel_residual(s.LX, perp);
    s.residual = rel_residual(&reference == &conservative ? s.LX : apply_L(reference, s.X), rhs);
    const double xn = weighted_norm(s.X, grid);
    for (int k = 0; k < 5; ++k)
        s.overlaps[k] = weighted_dot(s.X, basis.psi[k], grid) / (xn * std::sqrt(basis.norms[k]));
    if (!(s.gram > 0.0)) throw NumericError("solve_Xj: (X_j, L X_j) is not positive");
    if (!(s.residual_cons <= tol)) {
        throw NumericError("solve_Xj: residual " + std::to_string(s.residual_cons) + " above tolerance " +
                           std::to_string(tol) + " for j=" + std::to_string(j) + "; refine the velocity grid");
    }
    return s;
}

XjSolution solve_Xj(const LinearizedOperator& op, const NullBasis& basis, int j, double tol) {
    if (op.null_basis.size() == 5) return solve_Xj(op, op, basis, j, tol);
    const LinearizedOperator c = make_conservative(op, basis);
    return solve_Xj(c, op, basis, j, tol);
}

SpectralData build_spectral(const LinearizedOperator& assembled, const FarField& ff, double tol_mach) {
    SpectralData sd;
    sd.ff = ff;
    sd.basis = build_null_basis(assembled.grid, ff);
    sd.cls = classify(ff, tol_mach);
    if (assembled.null_basis.empty()) {
        sd.null_residual = null_residual(assembled, sd.basis);
        sd.symmetry_defect = symmetry_defect(assembled);
        sd.op = make_conservative(assembled, sd.basis);
    } else {
        sd.op = assembled;
    }
    for (int j : sd.cls.i_zero) sd.damping.X.push_back(solve_Xj(sd.op, assembled, sd.basis, j, 1e-6));
    return sd;
}

std::vector<double> apply_Pplus(std::span<const double> f, const SpectralData& sd) {
    const VelocityGrid& grid = sd.op.grid;
    std::vector<double> out(f.size(), 0.0);
    for (int j : sd.cls.i_plus) {
        const double a = weighted_dot(f, sd.basis.psi[j], grid) / sd.basis.norms[j];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * sd.basis.psi[j][i];
    }
    return out;
}

std::vector<double> apply_P0(std::span<const double> f, const SpectralData& sd) {
    const VelocityGrid& grid = sd.op.grid;
    if (f.size() != grid.size()) throw ContractError("apply_P0: length mismatch");
    std::vector<double> out(f.size(), 0.0);
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("apply_P0: X_" + std::to_string(j) + " has not been solved");
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) s += grid.weights[i] * x->X[i] * grid.nodes[i][2] * f[i];
        const double a = s / x->gram;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * sd.basis.psi[j][i];
    }
    return out;
}

std::vector<double> apply_Pbb(std::span<const double> f, const SpectralData& sd) {
    const VelocityGrid& grid = sd.op.grid;
    std::vector<double> out(f.size(), 0.0);
    for (int j : sd.cls.i_zero) {
        const XjSolution* x = sd.damping.find(j);
        if (!x) throw StateError("apply_Pbb: X_" + std::to_string(j) + " has not been solved");
        const double a = weighted_dot(x->X, f, grid) / x->gram;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x->LX[i];
    }
    return out;
}

std::string spectral_report_json(const SpectralData& sd) {
    using nlohmann::json;
    const VelocityGrid& grid = sd.op.grid;
    json j;
    json ortho = json::array(), flux = json::array();
    for (int a = 0; a < 5; ++a) {
        json row_o = json::array(), row_f = json::array();
        for (int b = 0; b < 5; ++b) {
            row_o.push_back(weighted_dot(sd.basis.psi[a], sd.basis.psi[b], grid) /
                            std::sqrt(sd.basis.norms[a] * sd.basis.norms[b]));
            row_f.push_back(entropy_flux(sd.basis.psi[a], sd.basis.psi[b], grid));
        }
        ortho.push_back(row_o);
        flux.push_back(row_f);
    }
    const double rc = sd.ff.rho * sd.ff.sound_speed();
    const double m = sd.ff.mach();
    const double expected[5] = {rc * m, rc * m, rc * m, rc * (m + 1.0), rc * (m - 1.0)};
    j["orthogonality"] = ortho;
    j["flux_matrix"] = flux;
    j["flux_expected"] = std::vector<double>(expected, expected + 5);
    j["mach"] = m;
    j["i_plus"] = sd.cls.i_plus;
    j["i_zero"] = sd.cls.i_zero;
    j["i_minus"] = sd.cls.i_minus;
    j["n_plus"] = sd.cls.n_plus;
    j["null_residual"] = sd.null_residual;
    j["symmetry_defect"] = sd.symmetry_defect;
    json xs = json::array();
    for (const auto& x : sd.damping.X) {
        xs.push_back({{"j", x.j},
                      {"gram", x.gram},
                      {"residual", x.residual},
                      {"residual_conservative", x.residual_cons},
                      {"overlaps", std::vector<double>(x.overlaps.begin(), x.overlaps.end())}});
    }
    j["X"] = xs;
    return j.dump(2);
}

}  // namespace kbl
