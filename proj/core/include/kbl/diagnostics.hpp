#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kbl/transport.hpp"

namespace kbl {

/// Per-node weights shared by every functional on one (slab, lattice, parameter) triple.
struct NormContext {
    const SlabGrid* slab = nullptr;
    const SpectralData* sd = nullptr;
    WeightParams p;
    std::size_t nx = 0, nv = 0;
    std::vector<double> sx_half;      ///< sigma_x^{1/2}, row-major (x, v)
    std::vector<double> sigma;        ///< sigma, row-major (x, v)
    std::vector<double> w_b;          ///< w_{beta, vartheta}
    std::vector<double> w_bg;         ///< w_{beta + beta_gamma, vartheta}
    std::vector<double> z_ma;         ///< z_{-alpha}
    std::vector<double> z_one;        ///< z_1
    std::vector<double> nu;
    std::vector<double> y;            ///< delta x + l at each slab node
};

NormContext make_norm_context(const SpectralData& sd, const SlabGrid& slab, const WeightParams& p);

struct EnergyComponents {
    double inf = 0.0, cro = 0.0, two = 0.0, two_weighted = 0.0;
    double total() const { return inf + cro + two + two_weighted; }
};

struct NormReport {
    EnergyComponents E, A, B, C;
    double D = 0.0;
    std::string note;
    WeightParams params;
};

/// E_inf, E_cro, E2(w g), E2(g) of a field on the context slab.
EnergyComponents functional_E(const Field& g, const NormContext& ctx);
/// Same E_inf through a materialised weighted field; agrees bit-for-bit with functional_E.
double functional_E_inf_materialized(const Field& g, const NormContext& ctx);

EnergyComponents functional_A(const Field& h, const NormContext& ctx);
/// Far-boundary data, read on v3 < 0 nodes only.
EnergyComponents functional_B(std::span<const double> phi, const NormContext& ctx);
/// Wall data, read on v3 > 0 nodes only.
EnergyComponents functional_C(std::span<const double> f_b, const NormContext& ctx);
/// E of e^{hbar sigma} v3^{-1} int_x^inf Pbb h dy. Zero with a note when I0 is empty.
double functional_D(const Field& h, const NormContext& ctx, std::string* note = nullptr);

/// e^{scale * hbar * sigma} g, the sigma-transform (scale = 1) and its inverse (scale = -1).
Field sigma_transform(const Field& g, const NormContext& ctx, double scale = 1.0);

struct ProbeResult {
    double constant = 0.0;              ///< max ratio over samples and x
    std::vector<double> per_sample;     ///< max over x for each random field
    bool hypothesis_violation = false;  ///< alpha >= mu_gamma
    std::uint64_t seed = 0;
};

/// Ratio of int |nu^{-1/2} z_{-alpha} sigma_x^{1/2} w K_hbar g|^2 to int |nu^{1/2} sigma_x^{1/2} w g|^2
/// over random smooth g (Gaussian-weighted cubic polynomials) at the given x values.
ProbeResult operator_bound_probe(const LinearizedOperator& op, const WeightParams& p, const FarField& ff,
                                 int n_samples, std::uint64_t seed, const std::vector<double>& x_samples);

struct StabilityRun {
    double energy = 0.0;   ///< E(g_sigma)
    double sources = 0.0;  ///< A(h_sigma) + B(phi_sigma) + C(f_b_sigma)
};

struct StabilityFit {
    bool valid = false;
    double constant = 0.0;
    int used = 0, skipped = 0;
    std::vector<std::string> notes;
};

StabilityFit stability_constant(const std::vector<StabilityRun>& runs);

std::string norm_report_json(const NormReport& r);

}  // namespace kbl
