#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kbl/diagnostics.hpp"

namespace kbl {

/// S(x, v_i), intended orthogonal to the null space slice by slice, and wall data on v3 > 0.
struct LinearProblem {
    std::function<double(double, std::size_t)> source;  ///< empty means S = 0
    std::vector<double> f_b;
};

Field sample_source(const LinearProblem& prob, const SlabGrid& slab, std::size_t nv);

/// Largest per-slice ||P S(x)||_W / ||S(x)||_W.
double source_null_defect(const Field& S, const SpectralData& sd);

struct SolvabilityResidual {
    std::string kind;     ///< "plus": (psi_j, v3 f1); "zero": (X_j, v3 f1)
    int j = 0;
    double at_wall = 0.0;
    double sup_x = 0.0;   ///< sup over slab nodes of the same bracket
};

struct DecayFit {
    double c = 0.0, pexp = 0.0, r2 = 0.0, log_amplitude = 0.0;
    int points = 0;
};

struct SolveReport {
    std::vector<SolvabilityResidual> residuals;
    std::vector<double> A_values;
    std::vector<double> cauchy_deltas;
    double cauchy_slope = 0.0, cauchy_r2 = 0.0;
    bool has_decay = false;
    DecayFit decay;
    int iterations = 0;                    ///< nonlinear iterations or total slab iterations
    std::vector<double> nonlinear_diffs;   ///< E-norm of successive differences
    std::vector<double> nonlinear_ratios;
    std::vector<double> shooting_coefficients;
    double damping_sup = 0.0;              ///< lattice sup of D f1
    double source_null_defect = 0.0;
    IterationReport slab;                  ///< last damped solve
};

struct HalfspaceSolution {
    SlabGrid slab;
    Field f, f1, f2;
    std::vector<double> f_b_used;
    SolveReport report;
};

/// (I - Pbb) S and the explicit P0 f2 = -sum_j psi_j int_x^inf (X_j, S) / (X_j, L X_j) dy.
std::pair<Field, Field> decompose_source(const Field& S, const SpectralData& sd, const SlabGrid& slab);

std::vector<SolvabilityResidual> solvability_residuals(const Field& f1, const SpectralData& sd);

int count_conditions(double mach);

struct HalfspaceOptions {
    std::vector<double> A_sequence{7.5, 15.0, 30.0};
    int n_x = 160;                 ///< nodes of the largest slab
    double grading = 10.0;
    double cauchy_tol = 1e-6;
    bool stop_on_cauchy = true;
    SlabSolverOptions slab;
};

/// Damped solves on nested slabs (prefixes of the largest one) with phi_A = 0 until
/// consecutive solutions agree on their common nodes.
HalfspaceSolution solve_linear_halfspace(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                         const DampingConfig& dc, const HalfspaceOptions& opts = {});

/// One damped solve on a fixed slab; f_b is corrected along psi_k (k in I+ u I0, restricted
/// to v3 > 0) so that every solvability residual vanishes, then re-solved.
HalfspaceSolution solve_with_shooting(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                      const DampingConfig& dc, const SlabGrid& slab,
                                      const SlabSolverOptions& opts = {});

/// Single fixed-slab linear solve (no shooting, no A-sequence).
HalfspaceSolution solve_linear_on_slab(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                       const DampingConfig& dc, const SlabGrid& slab,
                                       const SlabSolverOptions& opts = {});

/// Same with a pre-sampled source field.
HalfspaceSolution solve_linear_field(const Field& S, std::span<const double> f_b, const WeightParams& p,
                                     const SpectralData& sd, const DampingConfig& dc, const SlabGrid& slab,
                                     const SlabSolverOptions& opts = {});

struct CollisionContext {
    SphereQuadrature sph;
    KernelSpec ks;
};

struct NonlinearOptions {
    double tol = 1e-8;
    double tol_abs = 1e-14;
    int max_iter = 40;
    double relaxation = 0.5;      ///< Gamma-argument relaxation, used in the window only while plain ratios are >= 0.5
    int relaxed_iterations = 2;
    double gamma_skip_rel = 1e-14;
    SlabSolverOptions slab;
};

/// f^{i+1} from the damped linear solve with source (I - Pbb)(Gamma(f^i, f^i) + h) and the
/// Pbb-part integrated explicitly; stops on the E-norm of successive differences.
HalfspaceSolution solve_nonlinear(const LinearProblem& prob, const WeightParams& p, const SpectralData& sd,
                                  const DampingConfig& dc, const SlabGrid& slab, const CollisionContext& cc,
                                  const NonlinearOptions& opts = {});

/// Gamma(f(x), f(x)) slice by slice.
Field gamma_field(const Field& f, const SpectralData& sd, const CollisionContext& cc, double skip_rel = 0.0);

/// Least-squares fit of log max_v |w_{0, vartheta/4} f| = a - c (delta x + l)^pexp over the
/// middle 60% of the slab, dropping slices below 1e-12 of the peak.
DecayFit fit_decay(const Field& f, const SlabGrid& slab, const VelocityGrid& grid, const WeightParams& p,
                   const FarField& ff);

std::string solve_report_json(const SolveReport& r);

}  // namespace kbl
