#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kbl/grid.hpp"

namespace kbl {

struct FarField {
    double rho = 1.0;
    double T = 1.0;
    double u3 = 0.0;

    Vec3 u() const { return {0.0, 0.0, u3}; }
    double sound_speed() const;
    double mach() const;
    void validate() const;
};

enum class AngularProfile {
    HardSphere,  ///< |cos(theta)| / (2 pi), b0 = 1/(2 pi)
    CosSquared,  ///< 3 cos^2(theta) / (4 pi), b0 = 3/(4 pi)
};

struct KernelSpec {
    double gamma = 1.0;
    AngularProfile profile = AngularProfile::HardSphere;

    double btilde(double cos_theta) const;
    double b0() const;
    void validate() const;
};

AngularProfile parse_profile(const std::string& name);
std::string profile_name(AngularProfile p);

/// L f = nu * f - K f on a velocity lattice. K is dense and row-major.
/// A non-empty null_basis (orthonormal in the weighted inner product) switches
/// apply_L to the conservative form P_perp (nu - K) P_perp.
struct LinearizedOperator {
    VelocityGrid grid;
    std::vector<double> nu;
    std::vector<double> K;
    std::vector<std::vector<double>> null_basis;

    std::size_t size() const { return nu.size(); }
    double k(std::size_t i, std::size_t j) const { return K[i * nu.size() + j]; }
};

struct AssemblyOptions {
    double max_entries = 2.5e8;  ///< refuse dense K above this many entries
    std::string cache_dir;      ///< empty disables the binary cache
};

double maxwellian(const Vec3& v, const FarField& ff);
double sqrt_maxwellian(const Vec3& v, const FarField& ff);

/// (c, mach) with c = sqrt(5T/3).
std::pair<double, double> sound_speed_mach(const FarField& ff);

/// Elastic post-collision pair for unit omega.
std::pair<Vec3, Vec3> post_collision(const Vec3& v, const Vec3& v_star, const Vec3& omega);

/// nu(v) from the one-dimensional radial integral after exact angular integration.
double collision_frequency(const Vec3& v, const KernelSpec& ks, const FarField& ff);

/// Integral of |w|^gamma over the cube [-h/2, h/2]^3 (gamma > -3).
double cell_power_integral(double h, double gamma);

LinearizedOperator assemble_linearized(const VelocityGrid& grid, const SphereQuadrature& sph,
                                       const KernelSpec& ks, const FarField& ff,
                                       const AssemblyOptions& opts = {});

std::vector<double> apply_L(const LinearizedOperator& op, std::span<const double> f);

/// Gamma(f, g) with f in the unprimed/primed slots and g in the starred slots.
std::vector<double> gamma_bilinear(std::span<const double> f, std::span<const double> g,
                                   const VelocityGrid& grid, const SphereQuadrature& sph,
                                   const KernelSpec& ks, const FarField& ff);

/// Gamma(f_m, f_m) for every row f_m of a row-major (rows x N) block. Rows whose sup
/// norm is below skip_rel times the block sup norm are returned as zero.
std::vector<double> gamma_diagonal_batch(std::span<const double> F, std::size_t rows,
                                         const VelocityGrid& grid, const SphereQuadrature& sph,
                                         const KernelSpec& ks, const FarField& ff,
                                         double skip_rel = 0.0);

/// Cache key covering every input that changes the assembled matrix.
std::uint64_t operator_cache_key(const VelocityGrid& grid, const SphereQuadrature& sph,
                                 const KernelSpec& ks, const FarField& ff);
void write_operator_cache(const std::string& path, const LinearizedOperator& op, double gamma,
                          std::uint64_t key);
bool read_operator_cache(const std::string& path, LinearizedOperator& op, double gamma,
                         std::uint64_t key);

}  // namespace kbl
