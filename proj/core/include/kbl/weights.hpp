#pragma once

#include <functional>
#include <span>
#include <vector>

#include "kbl/collision.hpp"

namespace kbl {

struct WeightParams {
    double gamma = 1.0;
    double delta = 0.05;
    double l = 10.0;
    double hbar = 0.02;
    double vartheta = 0.01;
    double beta = 0.0;
    double alpha = 0.25;
    double alpha_bar = 0.1;
    double beta_bar = 0.1;

    double Theta() const;        ///< (1 - gamma) / (3 - gamma)
    double beta_gamma() const;   ///< 0 for gamma >= 0, -gamma/2 otherwise
    double mu_gamma() const;     ///< sup over admissible (b0, b1), by a 1D sweep
    double beta_min() const;     ///< beta_gamma + (1 - gamma)/2 + max(0, -gamma)
    double stretch() const;      ///< 2 / (3 - gamma)

    /// Defaults for a given gamma: beta at its lower bound, alpha = mu_gamma / 2,
    /// damping strengths 5 * hbar.
    static WeightParams defaults(double gamma);

    /// Parameter hypotheses; throws ConfigError naming the offending key.
    void validate() const;
};

struct UpsilonValue {
    double value, d1, d2;
};

/// C^2 cutoff: 1 on [0, 1], 0 on [2, inf), quintic smoothstep in between.
UpsilonValue upsilon(double s);

struct SigmaValue {
    double sigma, sigma_x, sigma_xx;
};

SigmaValue sigma_all(double x, double r, const WeightParams& p);
double sigma(double x, const Vec3& v, const WeightParams& p, const FarField& ff);
double sigma_x(double x, const Vec3& v, const WeightParams& p, const FarField& ff);
double sigma_xx(double x, const Vec3& v, const WeightParams& p, const FarField& ff);

/// kappa(x) = int_0^x [-sigma_xx / (2 sigma_x) - hbar sigma_x + nu / v3] dy with a
/// caller-supplied (sigma_x, sigma_xx) profile in y. Adaptive, absolute tolerance tol.
double kappa_general(double x, double v3, double nu, double hbar,
                     const std::function<std::pair<double, double>(double)>& sx_sxx, double tol = 1e-10);

double kappa(double x, const Vec3& v, const WeightParams& p, const FarField& ff, double nu);

/// Memoised kappa on a lattice of x-nodes times velocity nodes, built left to right.
struct KappaTable {
    std::size_t nx = 0, nv = 0;
    std::vector<double> values;  ///< row-major (x, v)
    double at(std::size_t m, std::size_t i) const { return values[m * nv + i]; }
};

KappaTable build_kappa_table(std::span<const double> x_nodes, const VelocityGrid& grid,
                             std::span<const double> nu, const WeightParams& p, const FarField& ff);

double weight_w(const Vec3& v, double beta, double vartheta, const FarField& ff);
double weight_z(const Vec3& v, double alpha);

/// Sampled constants of the mixed-weight lemma over x in [0, x_max], |v - u| <= v_max.
struct SigmaConstants {
    double sigma_lower = 0.0;        ///< inf sigma / (delta x + l)^{2/(3-gamma)}
    double sigma_x_upper = 0.0;      ///< sup sigma_x (delta x + l)^Theta
    double sigma_x_lower = 0.0;      ///< inf sigma_x / min{(delta x + l)^{-Theta}, (1+|v-u|)^{gamma-1}}
    double transport_c = 0.0;        ///< sup |sigma_x v3| / nu  (the constant c in c_{hbar,delta})
    double curvature_c = 0.0;        ///< sup |sigma_xx v3| / (sigma_x nu)
    double lipschitz_c = 0.0;        ///< sup |sigma(v) - sigma(v*)| / ||v-u|^2 - |v*-u|^2|
};

SigmaConstants sample_sigma_constants(const WeightParams& p, const FarField& ff,
                                      const std::function<double(double)>& nu_of_r, double v_max,
                                      double x_max, int nx, int nr, int nmu);

/// 1 - c hbar - delta / 2 with c from sample_sigma_constants.
double c_hbar_delta(const WeightParams& p, double transport_c);

/// Parameter hypotheses plus positivity of c_{hbar,delta} on the sampled domain.
SigmaConstants validate_weights(const WeightParams& p, const KernelSpec& ks, const FarField& ff, double v_max);

}  // namespace kbl
