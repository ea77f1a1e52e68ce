#include "kbl/weights.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

#include "kbl/errors.hpp"
#include "kbl/parallel.hpp"

namespace kbl {

namespace {
using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
}

double WeightParams::Theta() const { return (1.0 - gamma) / (3.0 - gamma); }
double WeightParams::beta_gamma() const { return gamma >= 0.0 ? 0.0 : -0.5 * gamma; }
double WeightParams::stretch() const { return 2.0 / (3.0 - gamma); }
double WeightParams::beta_min() const { return beta_gamma() + 0.5 * (1.0 - gamma) + std::max(0.0, -gamma); }

double WeightParams::mu_gamma() const {
    // The admissible sets are open at b0 = 2 and b1 = 3, so the supremum is approached
    // from below on a uniform sweep of step 1e-4.
    const double step = 1e-4;
    double best0 = -std::numeric_limits<double>::infinity();
    double best1 = best0;
    for (int k = 0; k <= 30000; ++k) {
        const double b = k * step;
        if (b < 2.0 && b <= 1.0 - gamma && b + gamma + 1.0 > 0.0) best0 = std::max(best0, b);
        if (b < 3.0 && b <= 1.0 - gamma && b + gamma > 0.0) best1 = std::max(best1, b);
    }
    return std::min({0.5, 0.5 * (gamma + 3.0), 0.5 * (best0 + gamma + 1.0), 0.5 * (best1 + gamma)});
}

WeightParams WeightParams::defaults(double gamma) {
    WeightParams p;
    p.gamma = gamma;
    p.beta = p.beta_min();
    p.alpha = 0.5 * p.mu_gamma();
    p.alpha_bar = 5.0 * p.hbar;
    p.beta_bar = 5.0 * p.hbar;
    return p;
}

void WeightParams::validate() const {
    if (!(gamma > -3.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (−3, 1]");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be positive");
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw ConfigError("hbar must be positive");
    if (!(vartheta > 0.0) || !std::isfinite(vartheta)) throw ConfigError("vartheta must be positive");
    if (!(l > 1.0) || !std::isfinite(l)) throw ConfigError("l must be greater than 1");
    if (!(beta >= beta_min() - 1e-12))
        throw ConfigError("beta must be at least beta_gamma + (1-gamma)/2 + max(0,-gamma) = " +
                          std::to_string(beta_min()));
    const double mu = mu_gamma();
    if (!(alpha > 0.0 && alpha < mu))
        throw ConfigError("alpha must lie in (0, mu_gamma) with mu_gamma = " + std::to_string(mu));
    if (!(alpha_bar >= 0.0) || !(beta_bar >= 0.0)) throw ConfigError("alpha_bar and beta_bar must be nonnegative");
}

UpsilonValue upsilon(double s) {
    if (s <= 1.0) return {1.0, 0.0, 0.0};
    if (s >= 2.0) return {0.0, 0.0, 0.0};
    const double t = s - 1.0;
    const double t2 = t * t;
    return {1.0 - t2 * t * (10.0 - 15.0 * t + 6.0 * t2), -30.0 * t2 * (1.0 - t) * (1.0 - t),
            -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)};
}

SigmaValue sigma_all(double x, double r, const WeightParams& p) {
    const double g = p.gamma;
    const double y = p.delta * x + p.l;
    const double pe = p.stretch();
    const double k = std::pow(1.0 + r, g - 3.0);
    const double s = y * k;
    const UpsilonValue U = upsilon(s);

    const double A = 5.0 * std::pow(y, pe);
    const double A1 = 5.0 * pe * std::pow(y, pe - 1.0);
    const double A2 = 5.0 * pe * (pe - 1.0) * std::pow(y, pe - 2.0);
    const double B1 = std::pow(1.0 + r, g - 1.0);
    const double B = y * B1 + 3.0 * r * r;

    const double sig = A * (1.0 - U.value) + B * U.value;
    const double sy = A1 * (1.0 - U.value) - A * U.d1 * k + B1 * U.value + B * U.d1 * k;
    const double syy = A2 * (1.0 - U.value) - 2.0 * A1 * U.d1 * k - A * U.d2 * k * k + 2.0 * B1 * U.d1 * k +
                       B * U.d2 * k * k;
    return {sig, p.delta * sy, p.delta * p.delta * syy};
}

namespace {
double rel_speed(const Vec3& v, const FarField& ff) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + (v[2] - ff.u3) * (v[2] - ff.u3));
}
}  // namespace

double sigma(double x, const Vec3& v, const WeightParams& p, const FarField& ff) {
    return sigma_all(x, rel_speed(v, ff), p).sigma;
}
double sigma_x(double x, const Vec3& v, const WeightParams& p, const FarField& ff) {
    return sigma_all(x, rel_speed(v, ff), p).sigma_x;
}
double sigma_xx(double x, const Vec3& v, const WeightParams& p, const FarField& ff) {
    return sigma_all(x, rel_speed(v, ff), p).sigma_xx;
}

double kappa_general(double x, double v3, double nu, double hbar,
                     const std::function<std::pair<double, double>(double)>& sx_sxx, double tol) {
    if (v3 == 0.0) throw ContractError("kappa: v3 = 0 has no characteristic");
    if (x == 0.0) return 0.0;
    auto f = [&](double y) {
        const auto [sx, sxx] = sx_sxx(y);
        return -sxx / (2.0 * sx) - hbar * sx;
    };
    double L1 = 0.0;
    const double I = GK::integrate(f, 0.0, x, 15, tol * 1e-2, nullptr, &L1);
    return I + nu * x / v3;
}

double kappa(double x, const Vec3& v, const WeightParams& p, const FarField& ff, double nu) {
    const double r = rel_speed(v, ff);
    return kappa_general(x, v[2], nu, p.hbar, [&](double y) {
        const SigmaValue s = sigma_all(y, r, p);
        return std::make_pair(s.sigma_x, s.sigma_xx);
    });
}

KappaTable build_kappa_table(std::span<const double> x_nodes, const VelocityGrid& grid,
                             std::span<const double> nu, const WeightParams& p, const FarField& ff) {
    KappaTable t;
    t.nx = x_nodes.size();
    t.nv = grid.size();
    t.values.assign(t.nx * t.nv, 0.0);
    // The sigma part depends on |v - u| only: integrate once per distinct speed.
    std::map<double, std::vector<double>> by_speed;
    for (const auto& v : grid.nodes) by_speed.emplace(rel_speed(v, ff), std::vector<double>{});
    std::vector<std::pair<const double, std::vector<double>>*> items;
    for (auto& kv : by_speed) items.push_back(&kv);
    parallel_for(items.size(), [&](std::size_t k) {
        const double r = items[k]->first;
        auto& acc = items[k]->second;
        acc.assign(t.nx, 0.0);
        auto f = [&](double y) {
            const SigmaValue s = sigma_all(y, r, p);
            return -s.sigma_xx / (2.0 * s.sigma_x) - p.hbar * s.sigma_x;
        };
        for (std::size_t m = 1; m < t.nx; ++m)
            acc[m] = acc[m - 1] + GK::integrate(f, x_nodes[m - 1], x_nodes[m], 8, 1e-11);
    });
    for (std::size_t i = 0; i < t.nv; ++i) {
        const auto& acc = by_speed.at(rel_speed(grid.nodes[i], ff));
        const double v3 = grid.nodes[i][2];
        for (std::size_t m = 0; m < t.nx; ++m) t.values[m * t.nv + i] = acc[m] + nu[i] * x_nodes[m] / v3;
    }
    return t;
}

double weight_w(const Vec3& v, double beta, double vartheta, const FarField& ff) {
    const double d3 = v[2] - ff.u3;
    return std::pow(1.0 + std::sqrt(norm2(v)), beta) * std::exp(vartheta * (v[0] * v[0] + v[1] * v[1] + d3 * d3));
}

double weight_z(const Vec3& v, double alpha) {
    const double a = std::abs(v[2]);
    return a < 1.0 ? std::pow(a, alpha) : 1.0;
}

SigmaConstants sample_sigma_constants(const WeightParams& p, const FarField& ff,
                                      const std::function<double(double)>& nu_of_r, double v_max,
                                      double x_max, int nx, int nr, int nmu) {
    SigmaConstants c;
    c.sigma_lower = c.sigma_x_lower = std::numeric_limits<double>::infinity();
    const double Th = p.Theta();
    std::vector<double> nus(nr);
    for (int k = 0; k < nr; ++k) nus[k] = nu_of_r(v_max * k / (nr - 1));
    for (int a = 0; a < nx; ++a) {
        const double x = x_max * a / (nx - 1);
        const double y = p.delta * x + p.l;
        for (int k = 0; k < nr; ++k) {
            const double r = v_max * k / (nr - 1);
            const SigmaValue s = sigma_all(x, r, p);
            c.sigma_lower = std::min(c.sigma_lower, s.sigma / std::pow(y, p.stretch()));
            c.sigma_x_upper = std::max(c.sigma_x_upper, s.sigma_x * std::pow(y, Th));
            c.sigma_x_lower = std::min(c.sigma_x_lower,
                                       s.sigma_x / std::min(std::pow(y, -Th), std::pow(1.0 + r, p.gamma - 1.0)));
            for (int m = 0; m < nmu; ++m) {
                const double mu = -1.0 + (2.0 * m + 1.0) / nmu;
                const double v3 = ff.u3 + r * mu;
                c.transport_c = std::max(c.transport_c, std::abs(s.sigma_x * v3) / nus[k]);
                c.curvature_c = std::max(c.curvature_c, std::abs(s.sigma_xx * v3) / (s.sigma_x * nus[k]));
            }
        }
    }
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int t = 0; t < 4000; ++t) {
        const double x = x_max * U(rng);
        const double r1 = v_max * U(rng), r2 = v_max * U(rng);
        const double d = std::abs(r1 * r1 - r2 * r2);
        if (d < 1e-9) continue;
        const double ds = std::abs(sigma_all(x, r1, p).sigma - sigma_all(x, r2, p).sigma);
        c.lipschitz_c = std::max(c.lipschitz_c, ds / d);
    }
    return c;
}

double c_hbar_delta(const WeightParams& p, double transport_c) {
    return 1.0 - transport_c * p.hbar - 0.5 * p.delta;
}

SigmaConstants validate_weights(const WeightParams& p, const KernelSpec& ks, const FarField& ff, double v_max) {
    p.validate();
    auto nu_of_r = [&](double r) { return collision_frequency({0.0, 0.0, ff.u3 + r}, ks, ff); };
    const SigmaConstants c = sample_sigma_constants(p, ff, nu_of_r, v_max, 50.0, 51, 41, 8);
    if (!(c.sigma_x_lower > 0.0)) throw ConfigError("sigma_x is not positive on the sampled domain");
    const double chd = c_hbar_delta(p, c.transport_c);
    if (!(chd > 0.0))
        throw ConfigError("c_{hbar,delta} = 1 - c*hbar - delta/2 = " + std::to_string(chd) +
                          " is not positive; reduce hbar or delta");
    return c;
}

}  // namespace kbl
