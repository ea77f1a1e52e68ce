#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kbl/halfspace.hpp"

namespace kbl {

enum class RunMode { Linear, Nonlinear, Classify, Verify, DecayFit };

RunMode parse_mode(const std::string& name);
std::string mode_name(RunMode m);

struct RunConfig {
    RunMode mode = RunMode::Linear;
    FarField ff{1.0, 1.0, -2.0 * 1.2909944487358056};  ///< mach = -2: no solvability conditions
    double gamma = 1.0;
    std::string profile = "hard_sphere";
    int n_per_axis = 16;
    double v_max = 6.0;  ///< resolved to 6 sqrt(T) when absent
    int n_theta = 8, n_phi = 16;
    WeightParams weights = WeightParams::defaults(1.0);
    double damping_multiplier = 5.0;  ///< alpha_bar = beta_bar = multiplier * hbar
    double A = 30.0;
    std::vector<double> A_sequence;   ///< empty: single slab of length A
    int n_x = 160;
    double grading = 10.0;
    double tol_rel = 1e-10, tol_abs = 1e-14;
    int max_iter = 4000;
    std::string method = "source_iteration";
    double cauchy_tol = 1e-6;
    double nonlinear_tol = 1e-8;
    int nonlinear_max_iter = 40;
    std::string source_preset = "none";
    double source_amplitude = 0.0;
    double source_rate = 0.5;
    std::string boundary_preset = "none";
    double boundary_amplitude = 0.0;
    bool shooting = false;
    std::string cache_dir;

    DampingConfig damping() const;
    KernelSpec kernel() const;
};

/// JSON document -> config with defaults; unknown keys, type mismatches and (PH)
/// violations raise ConfigError naming the key.
RunConfig parse_config(const std::string& text);
/// Canonical JSON with every field resolved.
std::string serialize_config(const RunConfig& c);
std::uint64_t config_hash(const RunConfig& c);

/// Analytic presets sampled on a lattice.
LinearProblem make_problem(const RunConfig& c, const VelocityGrid& grid);

struct RunOutcome {
    int exit_code = 0;
    std::string message;
};

/// Executes one run and writes report.json (plus profile.csv / convergence.csv for solving
/// modes and timings.json) into out_dir. Errors are mapped to exit codes 2 / 3 / 4.
RunOutcome run(const RunConfig& c, const std::string& out_dir, std::uint64_t seed, std::ostream& log);

int exit_code_for(const std::exception& e);

}  // namespace kbl
