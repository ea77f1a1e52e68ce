#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kbl/spectral.hpp"
#include "kbl/weights.hpp"

namespace kbl {

/// Nodes 0 = x_0 < ... < x_last = A, geometric near the wall, uniform in the tail.
struct SlabGrid {
    double A = 30.0;
    std::vector<double> x;
    std::size_t size() const { return x.size(); }
};

/// `grading` is the ratio of the tail spacing to the first spacing; growth factor 1.1.
SlabGrid build_slab(double A, int n_nodes, double grading = 10.0);

/// Row-major values g(x_m, v_i).
struct Field {
    std::size_t nx = 0, nv = 0;
    std::vector<double> data;

    Field() = default;
    Field(std::size_t nx_, std::size_t nv_) : nx(nx_), nv(nv_), data(nx_ * nv_, 0.0) {}
    double& operator()(std::size_t m, std::size_t i) { return data[m * nv + i]; }
    double operator()(std::size_t m, std::size_t i) const { return data[m * nv + i]; }
    std::span<double> row(std::size_t m) { return {data.data() + m * nv, nv}; }
    std::span<const double> row(std::size_t m) const { return {data.data() + m * nv, nv}; }
};

/// Full-length per-node vectors; only entries with v3 > 0 (f_b) or v3 < 0 (phi_A) are read.
struct BoundaryData {
    std::vector<double> f_b;
    std::vector<double> phi_A;
    static BoundaryData zero(std::size_t nv) { return {std::vector<double>(nv, 0.0), std::vector<double>(nv, 0.0)}; }
};

struct DampingConfig {
    double alpha_bar = 0.1;
    double beta_bar = 0.1;
    double exponent_theta = 0.0;  ///< D carries (delta x + l)^{-exponent_theta}
    static DampingConfig from(const WeightParams& p) { return {p.alpha_bar, p.beta_bar, p.Theta()}; }
};

enum class SlabMethod { SourceIteration, Krylov };

struct SlabSolverOptions {
    double tol_rel = 1e-10;
    double tol_abs = 1e-14;
    int max_iter = 4000;
    SlabMethod method = SlabMethod::SourceIteration;
    int krylov_restart = 40;
};

struct IterationReport {
    int iterations = 0;
    bool converged = false;
    std::vector<double> diff;        ///< gating quantity per iteration
    std::vector<double> ratio;       ///< diff[n] / diff[n-1] (0 for the first entry)
    std::vector<double> plain_diff;  ///< unweighted sup of successive differences (source iteration)
    double final_weighted_diff = 0.0;
    std::string method;
};

/// nu * g - L g for every x-slice, using the operator as given (conservative or not).
Field apply_K_field(const LinearizedOperator& op, const Field& g);
Field apply_L_field(const LinearizedOperator& op, const Field& g);

/// Exact integration of v3 dg/dx + nu g = S with S piecewise linear in x.
Field sweep(const Field& S, std::span<const double> nu, const BoundaryData& bd, const SlabGrid& slab,
            const VelocityGrid& grid);

Field apply_damping(const Field& g, const DampingConfig& dc, const SpectralData& sd, const WeightParams& p,
                    const SlabGrid& slab);

/// Source iteration g <- sweep(K g + h - D g) with the conservative operator in sd.op.
std::pair<Field, IterationReport> solve_damped_slab(const Field& h, const BoundaryData& bd, const SpectralData& sd,
                                                    const DampingConfig& dc, const SlabGrid& slab,
                                                    const WeightParams& p, const SlabSolverOptions& opts = {});

/// The operators of the mild formulation. kappa is a table over (slab nodes, velocity nodes).
Field op_Y_A(std::span<const double> f_at_A, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid);
Field op_Z(std::span<const double> f_at_0, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid);
Field op_U(const Field& f, const KappaTable& kappa, const SlabGrid& slab, const VelocityGrid& grid);

/// h = v3 dg/dx + L g + D g for an analytic g, and boundary data read off g.
std::pair<Field, BoundaryData> manufacture_slab_problem(const Field& g_exact, const Field& dgdx_exact,
                                                        const SpectralData& sd, const DampingConfig& dc,
                                                        const SlabGrid& slab, const WeightParams& p);

/// Five-point (fourth order on smooth meshes) x-derivative of every velocity column.
Field dx_field(const Field& g, const SlabGrid& slab);

/// Per-slice W-weighted L2 norm of v3 dg/dx + L g + D g - h.
std::vector<double> residual(const Field& g, const Field& h, const SpectralData& sd, const DampingConfig& dc,
                             const SlabGrid& slab, const WeightParams& p);

/// Sup over the lattice of |sigma_x^{1/2} g_sigma - (Y_A + Z + U)(...)| relative to
/// sup |sigma_x^{1/2} g_sigma|, with g_sigma = e^{hbar sigma} g.
double mild_identity_defect(const Field& g, const Field& h, const BoundaryData& bd, const SpectralData& sd,
                            const DampingConfig& dc, const SlabGrid& slab, const WeightParams& p);

/// int_{x_m}^inf a(y) dy at every node: exponential interpolation between nodes and a
/// fitted exponential tail past A. Throws InadmissibleSourceError for a non-decaying tail.
std::vector<double> tail_integral(std::span<const double> a, const SlabGrid& slab);

/// CSV writers.
void write_convergence_csv(const std::string& path, const IterationReport& rep);
void write_solution_csv(const std::string& path, const Field& g, const SlabGrid& slab, const VelocityGrid& grid);

double weighted_sup(const Field& g, const VelocityGrid& grid, const WeightParams& p, const FarField& ff);

}  // namespace kbl
