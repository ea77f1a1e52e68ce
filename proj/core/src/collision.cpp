#include "kbl/collision.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kbl/errors.hpp"
#include "kbl/parallel.hpp"

namespace kbl {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t mix(std::uint64_t h, std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
        h ^= (word >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t mixd(std::uint64_t h, double x) { return mix(h, std::bit_cast<std::uint64_t>(x)); }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// Orthonormal (e1, e2) completing the unit vector e3.
void complete_frame(const Vec3& e3, Vec3& e1, Vec3& e2) {
    int axis = 0;
    if (std::abs(e3[1]) < std::abs(e3[axis])) axis = 1;
    if (std::abs(e3[2]) < std::abs(e3[axis])) axis = 2;
    Vec3 a{0.0, 0.0, 0.0};
    a[axis] = 1.0;
    e1 = cross(e3, a);
    const double n1 = std::sqrt(norm2(e1));
    for (double& x : e1) x /= n1;
    e2 = cross(e3, e1);
}

/// Quadrature directions in a frame whose polar axis is the relative velocity.
/// When the rule is symmetric under omega -> -omega only the upper hemisphere is
/// kept with doubled weight; both directions produce the same post-collision pair.
struct LocalDirections {
    std::vector<double> s_cos, s_sin, mu, qb;
    double bsum = 0.0;
};

LocalDirections local_directions(const SphereQuadrature& sph, const KernelSpec& ks) {
    LocalDirections d;
    const bool symmetric = sph.n_theta % 2 == 0 && sph.n_phi % 2 == 0;
    for (std::size_t k = 0; k < sph.size(); ++k) {
        const double mu = sph.mu[k];
        if (symmetric && mu < 0.0) continue;
        const double factor = symmetric ? 2.0 : 1.0;
        d.s_cos.push_back(sph.directions[k][0]);
        d.s_sin.push_back(sph.directions[k][1]);
        d.mu.push_back(mu);
        d.qb.push_back(factor * sph.weights[k] * ks.btilde(mu));
    }
    for (double q : d.qb) d.bsum += q;
    return d;
}

struct MaxwellEval {
    double pref_sqrt;
    double inv4T;
    double u3;
    double operator()(double a, double b, double c) const {
        const double c3 = c - u3;
        return pref_sqrt * std::exp(-(a * a + b * b + c3 * c3) * inv4T);
    }
};

MaxwellEval sqrt_maxwell_eval(const FarField& ff) {
    return {std::sqrt(ff.rho * std::pow(2.0 * kPi * ff.T, -1.5)), 0.25 / ff.T, ff.u3};
}

/// Lattice geometry for the hot loops.
struct LatticeMap {
    double lo[3];
    double inv_h;
    int n;
    std::size_t n2;

    explicit LatticeMap(const VelocityGrid& g) : inv_h(1.0 / g.h), n(g.n_per_axis) {
        for (int d = 0; d < 3; ++d) lo[d] = g.center[d] - g.v_max;
        n2 = static_cast<std::size_t>(n) * n;
    }

    /// Three-point Lagrange stencil per axis around the nearest interior node, so
    /// quadratic polynomials are reproduced anywhere inside the closed box.
    template <class Emit>
    inline void quad_stencil(double x, double y, double z, Emit&& emit) const {
        const double p[3] = {(x - lo[0]) * inv_h - 0.5, (y - lo[1]) * inv_h - 0.5,
                             (z - lo[2]) * inv_h - 0.5};
        int k[3];
        double L[3][3];
        for (int d = 0; d < 3; ++d) {
            if (!(p[d] >= -0.5 && p[d] <= n - 0.5)) return;
            int kc = static_cast<int>(std::lround(p[d]));
            kc = std::clamp(kc, 1, n - 2);
            const double s = p[d] - kc;
            k[d] = kc - 1;
            L[d][0] = 0.5 * s * (s - 1.0);
            L[d][1] = 1.0 - s * s;
            L[d][2] = 0.5 * s * (s + 1.0);
        }
        for (int a = 0; a < 3; ++a) {
            const std::size_t ia = static_cast<std::size_t>(k[0] + a) * n2;
            for (int b = 0; b < 3; ++b) {
                const double wab = L[0][a] * L[1][b];
                const std::size_t ib = ia + static_cast<std::size_t>(k[1] + b) * n;
                for (int c = 0; c < 3; ++c) emit(ib + static_cast<std::size_t>(k[2] + c), wab * L[2][c]);
            }
        }
    }
};

/// Visits every quadrature pair (v_j, omega_k) for fixed v_i with j != i.
/// visit_pair(j, cj) precedes visit(j, ck, v', v_*') for its directions; cj is the
/// v_*-weight w_j sqrtM_j |v_j - v_i|^gamma and ck = cj * q_k * btilde_k.
template <class PairFn, class DirFn>
void for_each_collision(std::size_t i, const VelocityGrid& grid, const std::vector<double>& sM,
                        const LocalDirections& dirs, double gamma, PairFn&& visit_pair,
                        DirFn&& visit) {
    const Vec3& vi = grid.nodes[i];
    const std::size_t N = grid.size();
    const std::size_t K = dirs.mu.size();
    for (std::size_t j = 0; j < N; ++j) {
        if (j == i) continue;
        const Vec3& vj = grid.nodes[j];
        const Vec3 w{vj[0] - vi[0], vj[1] - vi[1], vj[2] - vi[2]};
        const double r = std::sqrt(norm2(w));
        const double cj = grid.weights[j] * sM[j] * (gamma == 1.0 ? r : std::pow(r, gamma));
        visit_pair(j, cj);
        const Vec3 e3{w[0] / r, w[1] / r, w[2] / r};
        Vec3 e1, e2;
        complete_frame(e3, e1, e2);
        for (std::size_t k = 0; k < K; ++k) {
            const double d = r * dirs.mu[k];
            const double o0 = dirs.s_cos[k] * e1[0] + dirs.s_sin[k] * e2[0] + dirs.mu[k] * e3[0];
            const double o1 = dirs.s_cos[k] * e1[1] + dirs.s_sin[k] * e2[1] + dirs.mu[k] * e3[1];
            const double o2 = dirs.s_cos[k] * e1[2] + dirs.s_sin[k] * e2[2] + dirs.mu[k] * e3[2];
            const Vec3 vp{vi[0] + d * o0, vi[1] + d * o1, vi[2] + d * o2};
            const Vec3 vsp{vj[0] - d * o0, vj[1] - d * o1, vj[2] - d * o2};
            visit(j, cj * dirs.qb[k], vp, vsp);
        }
    }
}

std::vector<double> sqrt_maxwellian_nodes(const VelocityGrid& grid, const FarField& ff) {
    std::vector<double> sM(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) sM[i] = sqrt_maxwellian(grid.nodes[i], ff);
    return sM;
}

}  // namespace

double FarField::sound_speed() const { return std::sqrt(5.0 * T / 3.0); }
double FarField::mach() const { return u3 / sound_speed(); }

void FarField::validate() const {
    if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be finite and positive");
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("T must be finite and positive");
    if (!std::isfinite(u3)) throw ConfigError("u3 must be finite");
}

double KernelSpec::btilde(double cos_theta) const {
    switch (profile) {
        case AngularProfile::HardSphere: return std::abs(cos_theta) / (2.0 * kPi);
        case AngularProfile::CosSquared: return 3.0 * cos_theta * cos_theta / (4.0 * kPi);
    }
    return 0.0;
}

double KernelSpec::b0() const {
    return profile == AngularProfile::HardSphere ? 1.0 / (2.0 * kPi) : 3.0 / (4.0 * kPi);
}

void KernelSpec::validate() const {
    if (!(gamma > -3.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (−3, 1]");
}

AngularProfile parse_profile(const std::string& name) {
    if (name == "hard_sphere") return AngularProfile::HardSphere;
    if (name == "cos_squared") return AngularProfile::CosSquared;
    throw ConfigError("unknown angular profile '" + name + "' (expected hard_sphere or cos_squared)");
}

std::string profile_name(AngularProfile p) {
    return p == AngularProfile::HardSphere ? "hard_sphere" : "cos_squared";
}

double maxwellian(const Vec3& v, const FarField& ff) {
    const double d3 = v[2] - ff.u3;
    const double r2 = v[0] * v[0] + v[1] * v[1] + d3 * d3;
    return ff.rho * std::pow(2.0 * kPi * ff.T, -1.5) * std::exp(-r2 / (2.0 * ff.T));
}

double sqrt_maxwellian(const Vec3& v, const FarField& ff) {
    return sqrt_maxwell_eval(ff)(v[0], v[1], v[2]);
}

std::pair<double, double> sound_speed_mach(const FarField& ff) {
    return {ff.sound_speed(), ff.mach()};
}

std::pair<Vec3, Vec3> post_collision(const Vec3& v, const Vec3& v_star, const Vec3& omega) {
    if (std::abs(norm2(omega) - 1.0) > 2e-12) throw ContractError("post_collision: omega is not a unit vector");
    const Vec3 w{v_star[0] - v[0], v_star[1] - v[1], v_star[2] - v[2]};
    const double s = dot(w, omega);
    Vec3 vp, vsp;
    for (int d = 0; d < 3; ++d) {
        vp[d] = v[d] + s * omega[d];
        vsp[d] = v_star[d] - s * omega[d];
    }
    return {vp, vsp};
}

double collision_frequency(const Vec3& v, const KernelSpec& ks, const FarField& ff) {
    ks.validate();
    const double g = ks.gamma;
    const double T = ff.T;
    const double a = std::sqrt(v[0] * v[0] + v[1] * v[1] + (v[2] - ff.u3) * (v[2] - ff.u3));
    // Angular average of the shifted Gaussian: exp(-(r-a)^2/2T) * (1 - e^{-z}) / z, z = 2ar/T.
    auto radial = [&](double r) {
        const double z = 2.0 * a * r / T;
        const double phi = z < 1e-12 ? 1.0 - 0.5 * z : -std::expm1(-z) / z;
        return 4.0 * kPi * std::exp(-(r - a) * (r - a) / (2.0 * T)) * phi;
    };
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    // Depth is capped: near machine precision the error estimate stalls and recursion explodes.
    const double tol = 1e-13;
    const unsigned depth = 12;
    const double sT = std::sqrt(T);
    const double r0 = 0.5 * sT;
    const double r_end = a + 14.0 * sT;

    double head;
    if (g < 0.0) {
        // r = r0 t^m with m (3 + gamma) = 2 removes the endpoint singularity.
        const double m = 2.0 / (3.0 + g);
        auto f = [&](double t) {
            if (t <= 0.0) return 0.0;
            return radial(r0 * std::pow(t, m)) * m * std::pow(r0, 3.0 + g) * t;
        };
        head = GK::integrate(f, 0.0, 1.0, depth, tol);
    } else {
        head = GK::integrate([&](double r) { return std::pow(r, 2.0 + g) * radial(r); }, 0.0, r0, depth, tol);
    }
    auto body = [&](double r) { return std::pow(r, 2.0 + g) * radial(r); };
    double tail = 0.0;
    const double mid = std::max(r0, a);
    if (mid > r0) tail += GK::integrate(body, r0, mid, depth, tol);
    tail += GK::integrate(body, mid, r_end, depth, tol);
    return ff.rho * std::pow(2.0 * kPi * T, -1.5) * (head + tail);
}

double cell_power_integral(double h, double gamma) {
    // Six pyramids with apex at the origin: w = x (1, s, t), x in [0, 1/2], s, t in [-1, 1].
    std::vector<double> x, w;
    gauss_legendre(24, x, w);
    double face = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a)
        for (std::size_t b = 0; b < x.size(); ++b)
            face += w[a] * w[b] * std::pow(1.0 + x[a] * x[a] + x[b] * x[b], 0.5 * gamma);
    return 6.0 * std::pow(0.5, 3.0 + gamma) / (3.0 + gamma) * face * std::pow(h, 3.0 + gamma);
}

std::uint64_t operator_cache_key(const VelocityGrid& grid, const SphereQuadrature& sph,
                                 const KernelSpec& ks, const FarField& ff) {
    std::uint64_t h = grid.hash();
    h = mixd(h, grid.center[0]);
    h = mixd(h, grid.center[1]);
    h = mixd(h, grid.center[2] - ff.u3);
    h = mix(h, static_cast<std::uint64_t>(sph.n_theta));
    h = mix(h, static_cast<std::uint64_t>(sph.n_phi));
    h = mixd(h, ks.gamma);
    h = mix(h, static_cast<std::uint64_t>(ks.profile));
    h = mixd(h, ff.rho);
    h = mixd(h, ff.T);
    return h;
}

namespace {
constexpr char kMagic[8] = {'K', 'B', 'L', 'O', 'P', 'E', 'R', '1'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void write_operator_cache(const std::string& path, const LinearizedOperator& op, double gamma,
                          std::uint64_t key) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ConfigError("cannot write operator cache " + tmp);
        const std::uint64_t n = op.size();
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&kCacheVersion), sizeof kCacheVersion);
        out.write(reinterpret_cast<const char*>(&gamma), sizeof gamma);
        const std::uint64_t gh = op.grid.hash();
        out.write(reinterpret_cast<const char*>(&gh), sizeof gh);
        out.write(reinterpret_cast<const char*>(&key), sizeof key);
        out.write(reinterpret_cast<const char*>(&n), sizeof n);
        out.write(reinterpret_cast<const char*>(op.nu.data()), static_cast<std::streamsize>(n * sizeof(double)));
        out.write(reinterpret_cast<const char*>(op.K.data()), static_cast<std::streamsize>(n * n * sizeof(double)));
    }
    std::filesystem::rename(tmp, path);
}

bool read_operator_cache(const std::string& path, LinearizedOperator& op, double gamma,
                         std::uint64_t key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    std::uint32_t version = 0;
    double g = 0.0;
    std::uint64_t gh = 0, k = 0, n = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&g), sizeof g);
    in.read(reinterpret_cast<char*>(&gh), sizeof gh);
    in.read(reinterpret_cast<char*>(&k), sizeof k);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || std::memcmp(magic, kMagic, 8) != 0 || version != kCacheVersion || g != gamma ||
        gh != op.grid.hash() || k != key || n != op.grid.size())
        return false;
    op.nu.resize(n);
    op.K.resize(n * n);
    in.read(reinterpret_cast<char*>(op.nu.data()), static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(op.K.data()), static_cast<std::streamsize>(n * n * sizeof(double)));
    return static_cast<bool>(in);
}

LinearizedOperator assemble_linearized(const VelocityGrid& grid, const SphereQuadrature& sph,
                                       const KernelSpec& ks, const FarField& ff,
                                       const AssemblyOptions& opts) {
    ks.validate();
    ff.validate();
    const std::size_t N = grid.size();
    const double entries = static_cast<double>(N) * static_cast<double>(N);
    if (entries > opts.max_entries) {
        std::ostringstream msg;
        msg << "dense operator needs " << entries << " entries (" << entries * 8.0 / 1073741824.0
            << " GiB), above the cap of " << opts.max_entries << "; reduce n_per_axis";
        throw ConfigError(msg.str());
    }

    LinearizedOperator op;
    op.grid = grid;
    const std::uint64_t key = operator_cache_key(grid, sph, ks, ff);
    std::string cache_path;
    if (!opts.cache_dir.empty()) {
        std::filesystem::create_directories(opts.cache_dir);
        std::ostringstream name;
        name << opts.cache_dir << "/op_" << std::hex << key << ".bin";
        cache_path = name.str();
        if (read_operator_cache(cache_path, op, ks.gamma, key)) return op;
    }

    op.nu.resize(N);
    parallel_for(N, [&](std::size_t i) { op.nu[i] = collision_frequency(grid.nodes[i], ks, ff); });

    const std::vector<double> sM = sqrt_maxwellian_nodes(grid, ff);
    const LocalDirections dirs = local_directions(sph, ks);
    const MaxwellEval sqrtM = sqrt_maxwell_eval(ff);
    const LatticeMap lat(grid);
    const double gamma = ks.gamma;
    // Self pair: the gain (two slots) minus the loss leaves one copy of M_i times the
    // v_*-measure of the cell, which for soft potentials is the exact cell integral.
    const double self_measure =
        gamma < 0.0 ? cell_power_integral(grid.h, gamma) : (gamma == 0.0 ? grid.h * grid.h * grid.h : 0.0);

    op.K.assign(N * N, 0.0);
    parallel_for(N, [&](std::size_t i) {
        double* row = op.K.data() + i * N;
        const double sMi = sM[i];
        for_each_collision(
            i, grid, sM, dirs, gamma,
            [&](std::size_t j, double cj) { row[j] -= cj * sMi * dirs.bsum; },
            [&](std::size_t j, double ck, const Vec3& vp, const Vec3& vsp) {
                const double mp = sqrtM(vp[0], vp[1], vp[2]);
                const double msp = sMi * sM[j] / mp;
                const double a = ck * msp;
                const double b = ck * mp;
                lat.quad_stencil(vp[0], vp[1], vp[2], [&](std::size_t m, double w) { row[m] += a * w; });
                lat.quad_stencil(vsp[0], vsp[1], vsp[2], [&](std::size_t m, double w) { row[m] += b * w; });
            });
        row[i] += sMi * sMi * self_measure * dirs.bsum;
    });

    for (double x : op.K)
        if (!std::isfinite(x)) throw NumericError("assembled K has a non-finite entry");
    if (!cache_path.empty()) write_operator_cache(cache_path, op, ks.gamma, key);
    return op;
}

std::vector<double> apply_L(const LinearizedOperator& op, std::span<const double> f) {
    const std::size_t N = op.size();
    if (f.size() != N) throw ContractError("apply_L: length mismatch");
    std::vector<double> in(f.begin(), f.end());
    const auto& W = op.grid.weights;
    auto project_out = [&](std::vector<double>& x) {
        for (const auto& q : op.null_basis) {
            double c = 0.0;
            for (std::size_t i = 0; i < N; ++i) c += W[i] * q[i] * x[i];
            for (std::size_t i = 0; i < N; ++i) x[i] -= c * q[i];
        }
    };
    project_out(in);
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double* row = op.K.data() + i * N;
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) s += row[j] * in[j];
        out[i] = op.nu[i] * in[i] - s;
    }
    project_out(out);
    return out;
}

std::vector<double> gamma_bilinear(std::span<const double> f, std::span<const double> g,
                                   const VelocityGrid& grid, const SphereQuadrature& sph,
                                   const KernelSpec& ks, const FarField& ff) {
    const std::size_t N = grid.size();
    if (f.size() != N || g.size() != N) throw ContractError("gamma_bilinear: length mismatch");
    ks.validate();
    const std::vector<double> sM = sqrt_maxwellian_nodes(grid, ff);
    const LocalDirections dirs = local_directions(sph, ks);
    const LatticeMap lat(grid);
    std::vector<double> out(N, 0.0);
    parallel_for(N, [&](std::size_t i) {
        double gain = 0.0, loss = 0.0;
        for_each_collision(
            i, grid, sM, dirs, ks.gamma,
            [&](std::size_t j, double cj) { loss += cj * dirs.bsum * g[j]; },
            [&](std::size_t, double ck, const Vec3& vp, const Vec3& vsp) {
                double fp = 0.0, gsp = 0.0;
                lat.quad_stencil(vp[0], vp[1], vp[2], [&](std::size_t m, double w) { fp += w * f[m]; });
                if (fp == 0.0) return;
                lat.quad_stencil(vsp[0], vsp[1], vsp[2], [&](std::size_t m, double w) { gsp += w * g[m]; });
                gain += ck * fp * gsp;
            });
        out[i] = gain - f[i] * loss;
    });
    return out;
}

std::vector<double> gamma_diagonal_batch(std::span<const double> F, std::size_t rows,
                                         const VelocityGrid& grid, const SphereQuadrature& sph,
                                         const KernelSpec& ks, const FarField& ff, double skip_rel) {
    const std::size_t N = grid.size();
    if (F.size() != rows * N) throw ContractError("gamma_diagonal_batch: shape mismatch");
    std::vector<double> out(rows * N, 0.0);
    double fmax = 0.0;
    for (double x : F) fmax = std::max(fmax, std::abs(x));
    if (fmax == 0.0) return out;

    std::vector<std::size_t> active;
    for (std::size_t r = 0; r < rows; ++r) {
        double m = 0.0;
        for (std::size_t i = 0; i < N; ++i) m = std::max(m, std::abs(F[r * N + i]));
        if (m > skip_rel * fmax) active.push_back(r);
    }
    const std::size_t R = active.size();
    if (R == 0) return out;
    // Velocity-major copy so every gather reads R contiguous values.
    std::vector<double> FT(N * R);
    for (std::size_t a = 0; a < R; ++a)
        for (std::size_t i = 0; i < N; ++i) FT[i * R + a] = F[active[a] * N + i];

    const std::vector<double> sM = sqrt_maxwellian_nodes(grid, ff);
    const LocalDirections dirs = local_directions(sph, ks);
    const LatticeMap lat(grid);
    std::vector<double> outT(N * R, 0.0);
    parallel_for(N, [&](std::size_t i) {
        std::vector<double> acc(R, 0.0), loss(R, 0.0), fp(R), gsp(R);
        const double* fi = FT.data() + i * R;
        for_each_collision(
            i, grid, sM, dirs, ks.gamma,
            [&](std::size_t j, double cj) {
                const double c = cj * dirs.bsum;
                const double* fj = FT.data() + j * R;
                for (std::size_t a = 0; a < R; ++a) loss[a] += c * fj[a];
            },
            [&](std::size_t, double ck, const Vec3& vp, const Vec3& vsp) {
                std::fill(fp.begin(), fp.end(), 0.0);
                std::fill(gsp.begin(), gsp.end(), 0.0);
                bool any = false;
                lat.quad_stencil(vp[0], vp[1], vp[2], [&](std::size_t m, double w) {
                    const double* src = FT.data() + m * R;
                    for (std::size_t a = 0; a < R; ++a) fp[a] += w * src[a];
                    any = true;
                });
                if (!any) return;
                lat.quad_stencil(vsp[0], vsp[1], vsp[2], [&](std::size_t m, double w) {
                    const double* src = FT.data() + m * R;
                    for (std::size_t a = 0; a < R; ++a) gsp[a] += w * src[a];
                });
                for (std::size_t a = 0; a < R; ++a) acc[a] += ck * fp[a] * gsp[a];
            });
        double* o = outT.data() + i * R;
        for (std::size_t a = 0; a < R; ++a) o[a] = acc[a] - fi[a] * loss[a];
    });
    for (std::size_t a = 0; a < R; ++a)
        for (std::size_t i = 0; i < N; ++i) out[active[a] * N + i] = outT[i * R + a];
    return out;
}

}  // namespace kbl
