#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "kbl/collision.hpp"

namespace kbl {

/// psi_0..psi_4 evaluated at the lattice nodes, as written (not re-orthogonalised).
struct NullBasis {
    std::array<std::vector<double>, 5> psi;
    std::array<double, 5> norms{};   ///< (psi_i, psi_i)_W
    std::array<double, 5> fluxes{};  ///< P(psi_i, psi_i)
};

struct MachClassification {
    std::vector<int> i_plus, i_zero, i_minus;
    int n_plus = 0;  ///< |i_plus| + |i_zero|
};

struct XjSolution {
    int j = 0;
    std::vector<double> X;
    std::vector<double> LX;       ///< image under the conservative operator
    double gram = 0.0;            ///< (X_j, L X_j)_W
    double residual = 0.0;        ///< ||L X - v3 psi_j||_W / ||v3 psi_j||_W for the operator passed in
    double residual_cons = 0.0;   ///< ||L X - P_perp v3 psi_j||_W / ||v3 psi_j||_W, conservative operator
    double flux_defect = 0.0;     ///< ||P v3 psi_j||_W / ||v3 psi_j||_W
    std::array<double, 5> overlaps{};  ///< (X_j, psi_i)_W / ||psi_i||_W
};

struct DampingData {
    std::vector<XjSolution> X;
    const XjSolution* find(int j) const;
};

/// Everything the damped solver needs about L on one lattice.
struct SpectralData {
    FarField ff;
    NullBasis basis;
    MachClassification cls;
    DampingData damping;
    LinearizedOperator op;           ///< conservative form of the assembled operator
    double null_residual = 0.0;      ///< max_m ||L psi_m||_W / ||psi_m||_W of the assembled operator
    double symmetry_defect = 0.0;    ///< ||WK - (WK)^T||_F / ||WK||_F of the assembled operator
};

NullBasis build_null_basis(const VelocityGrid& grid, const FarField& ff);

double weighted_dot(std::span<const double> f, std::span<const double> g, const VelocityGrid& grid);
double entropy_flux(std::span<const double> f, std::span<const double> g, const VelocityGrid& grid);

MachClassification classify(const FarField& ff, double tol_mach = 1e-9);
MachClassification classify_mach(double mach, double tol_mach = 1e-9);

std::vector<double> project_null(std::span<const double> f, const NullBasis& basis, const VelocityGrid& grid);

double null_residual(const LinearizedOperator& op, const NullBasis& basis);
double symmetry_defect(const LinearizedOperator& op);

/// Symmetrised operator 1/2 (K + W^{-1} K^T W) with the null space projected out.
LinearizedOperator make_conservative(const LinearizedOperator& op, const NullBasis& basis);

/// L X = v3 psi_j with X orthogonal to the null space, solved on the conservative form.
/// Residuals are reported against `reference`. Throws NumericError when the
/// conservative residual exceeds `tol`.
XjSolution solve_Xj(const LinearizedOperator& conservative, const LinearizedOperator& reference,
                    const NullBasis& basis, int j, double tol = 1e-8);
XjSolution solve_Xj(const LinearizedOperator& op, const NullBasis& basis, int j, double tol = 1e-8);

SpectralData build_spectral(const LinearizedOperator& assembled, const FarField& ff, double tol_mach = 1e-9);

std::vector<double> apply_Pplus(std::span<const double> f, const SpectralData& sd);
std::vector<double> apply_P0(std::span<const double> f, const SpectralData& sd);
std::vector<double> apply_Pbb(std::span<const double> f, const SpectralData& sd);

/// Orthogonality, flux and residual tables as a JSON document.
std::string spectral_report_json(const SpectralData& sd);

}  // namespace kbl
