#include "kbl/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kbl/errors.hpp"

namespace kbl {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"far_field", {"rho", "T", "u3"}},
        {"kernel", {"gamma", "profile"}},
        {"grid", {"n_per_axis", "v_max", "n_theta", "n_phi"}},
        {"weights", {"delta", "l", "hbar", "vartheta", "beta", "alpha", "damping_multiplier"}},
        {"slab", {"A", "A_sequence", "n_x", "grading"}},
        {"solver", {"tol_rel", "tol_abs", "max_iter", "method", "cauchy_tol", "nonlinear_tol", "nonlinear_max_iter"}},
        {"source", {"preset", "amplitude", "rate"}},
        {"boundary", {"preset", "amplitude", "shooting"}},
    };
    return s;
}

std::string key_path(const std::string& sec, const std::string& key) { return sec.empty() ? key : sec + "." + key; }

void read(const json& obj, const std::string& sec, const std::string& key, double& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(key_path(sec, key) + ": expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(key_path(sec, key) + ": must be finite");
}

void read(const json& obj, const std::string& sec, const std::string& key, int& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) throw ConfigError(key_path(sec, key) + ": expected an integer");
    out = v.get<int>();
}

void read(const json& obj, const std::string& sec, const std::string& key, bool& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError(key_path(sec, key) + ": expected a boolean");
    out = v.get<bool>();
}

void read(const json& obj, const std::string& sec, const std::string& key, std::string& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_string()) throw ConfigError(key_path(sec, key) + ": expected a string");
    out = v.get<std::string>();
}

void read(const json& obj, const std::string& sec, const std::string& key, std::vector<double>& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array()) throw ConfigError(key_path(sec, key) + ": expected an array of numbers");
    out.clear();
    for (const json& e : v) {
        if (!e.is_number()) throw ConfigError(key_path(sec, key) + ": expected an array of numbers");
        out.push_back(e.get<double>());
    }
}

const json& section(const json& doc, const std::string& name) {
    static const json empty = json::object();
    if (!doc.contains(name)) return empty;
    const json& s = doc.at(name);
    if (!s.is_object()) throw ConfigError(name + ": expected an object");
    const auto& allowed = schema().at(name);
    for (auto it = s.begin(); it != s.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key " + name + "." + it.key());
    return s;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double rel_speed2(const Vec3& v, const FarField& ff) {
    const double d3 = v[2] - ff.u3;
    return v[0] * v[0] + v[1] * v[1] + d3 * d3;
}

json classification_json(const FarField& ff, const MachClassification& cls) {
    const double rc = ff.rho * ff.sound_speed(), m = ff.mach();
    return {{"mach", m},
            {"sound_speed", ff.sound_speed()},
            {"I_plus", cls.i_plus},
            {"I_zero", cls.i_zero},
            {"I_minus", cls.i_minus},
            {"n_plus", cls.n_plus},
            {"conditions", count_conditions(m)},
            {"fluxes", {rc * m, rc * m, rc * m, rc * (m + 1.0), rc * (m - 1.0)}}};
}

}  // namespace

RunMode parse_mode(const std::string& name) {
    if (name == "linear") return RunMode::Linear;
    if (name == "nonlinear") return RunMode::Nonlinear;
    if (name == "classify") return RunMode::Classify;
    if (name == "verify") return RunMode::Verify;
    if (name == "decay-fit") return RunMode::DecayFit;
    throw ConfigError("mode: unknown mode '" + name + "'");
}

std::string mode_name(RunMode m) {
    switch (m) {
        case RunMode::Linear: return "linear";
        case RunMode::Nonlinear: return "nonlinear";
        case RunMode::Classify: return "classify";
        case RunMode::Verify: return "verify";
        case RunMode::DecayFit: return "decay-fit";
    }
    return "linear";
}

DampingConfig RunConfig::damping() const {
    DampingConfig d = DampingConfig::from(weights);
    d.alpha_bar = d.beta_bar = damping_multiplier * weights.hbar;
    return d;
}

KernelSpec RunConfig::kernel() const { return KernelSpec{gamma, parse_profile(profile)}; }

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not well-formed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (it.key() != "mode" && it.key() != "cache_dir" && !schema().count(it.key()))
            throw ConfigError("unknown key " + it.key());

    RunConfig c;
    std::string mode = mode_name(c.mode);
    read(doc, "", "mode", mode);
    c.mode = parse_mode(mode);
    read(doc, "", "cache_dir", c.cache_dir);

    const json& ff = section(doc, "far_field");
    read(ff, "far_field", "rho", c.ff.rho);
    read(ff, "far_field", "T", c.ff.T);
    read(ff, "far_field", "u3", c.ff.u3);

    const json& k = section(doc, "kernel");
    read(k, "kernel", "gamma", c.gamma);
    read(k, "kernel", "profile", c.profile);

    const json& g = section(doc, "grid");
    read(g, "grid", "n_per_axis", c.n_per_axis);
    c.v_max = 6.0 * std::sqrt(c.ff.T > 0.0 ? c.ff.T : 1.0);
    read(g, "grid", "v_max", c.v_max);
    read(g, "grid", "n_theta", c.n_theta);
    read(g, "grid", "n_phi", c.n_phi);

    const json& w = section(doc, "weights");
    c.weights = WeightParams::defaults(c.gamma);
    read(w, "weights", "delta", c.weights.delta);
    read(w, "weights", "l", c.weights.l);
    read(w, "weights", "hbar", c.weights.hbar);
    read(w, "weights", "vartheta", c.weights.vartheta);
    read(w, "weights", "beta", c.weights.beta);
    read(w, "weights", "alpha", c.weights.alpha);
    read(w, "weights", "damping_multiplier", c.damping_multiplier);
    c.weights.alpha_bar = c.weights.beta_bar = c.damping_multiplier * c.weights.hbar;

    const json& s = section(doc, "slab");
    read(s, "slab", "A", c.A);
    read(s, "slab", "A_sequence", c.A_sequence);
    read(s, "slab", "n_x", c.n_x);
    read(s, "slab", "grading", c.grading);

    const json& so = section(doc, "solver");
    read(so, "solver", "tol_rel", c.tol_rel);
    read(so, "solver", "tol_abs", c.tol_abs);
    read(so, "solver", "max_iter", c.max_iter);
    read(so, "solver", "method", c.method);
    read(so, "solver", "cauchy_tol", c.cauchy_tol);
    read(so, "solver", "nonlinear_tol", c.nonlinear_tol);
    read(so, "solver", "nonlinear_max_iter", c.nonlinear_max_iter);

    const json& src = section(doc, "source");
    read(src, "source", "preset", c.source_preset);
    read(src, "source", "amplitude", c.source_amplitude);
    read(src, "source", "rate", c.source_rate);

    const json& b = section(doc, "boundary");
    read(b, "boundary", "preset", c.boundary_preset);
    read(b, "boundary", "amplitude", c.boundary_amplitude);
    read(b, "boundary", "shooting", c.shooting);

    // Validation, in dependency order.
    c.ff.validate();
    c.weights.gamma = c.gamma;
    c.kernel().validate();
    c.weights.validate();
    if (c.n_per_axis < 2 || c.n_per_axis % 2) throw ConfigError("grid.n_per_axis must be a positive even integer");
    if (!(c.v_max > 0.0)) throw ConfigError("grid.v_max must be positive");
    if (c.n_theta < 2 || c.n_theta % 2) throw ConfigError("grid.n_theta must be a positive even integer");
    if (c.n_phi < 2 || c.n_phi % 2) throw ConfigError("grid.n_phi must be a positive even integer");
    if (!(c.damping_multiplier >= 0.0)) throw ConfigError("weights.damping_multiplier must be nonnegative");
    if (!(c.A > 0.0)) throw ConfigError("slab.A must be positive");
    for (double a : c.A_sequence)
        if (!(a > 0.0)) throw ConfigError("slab.A_sequence entries must be positive");
    if (c.n_x < 5) throw ConfigError("slab.n_x must be at least 5");
    if (!(c.grading >= 1.0)) throw ConfigError("slab.grading must be >= 1");
    if (!(c.tol_rel > 0.0)) throw ConfigError("solver.tol_rel must be positive");
    if (!(c.tol_abs >= 0.0)) throw ConfigError("solver.tol_abs must be nonnegative");
    if (c.max_iter < 1) throw ConfigError("solver.max_iter must be at least 1");
    if (c.method != "source_iteration" && c.method != "krylov")
        throw ConfigError("solver.method must be 'source_iteration' or 'krylov'");
    if (!(c.cauchy_tol > 0.0)) throw ConfigError("solver.cauchy_tol must be positive");
    if (!(c.nonlinear_tol > 0.0)) throw ConfigError("solver.nonlinear_tol must be positive");
    if (c.nonlinear_max_iter < 1) throw ConfigError("solver.nonlinear_max_iter must be at least 1");
    if (c.source_preset != "none" && c.source_preset != "shear" && c.source_preset != "heat_flux")
        throw ConfigError("source.preset must be one of none, shear, heat_flux");
    if (!(c.source_rate > 0.0)) throw ConfigError("source.rate must be positive");
    if (c.boundary_preset != "none" && c.boundary_preset != "slip" && c.boundary_preset != "temperature" &&
        c.boundary_preset != "density")
        throw ConfigError("boundary.preset must be one of none, slip, temperature, density");
    return c;
}

std::string serialize_config(const RunConfig& c) {
    json j;
    j["mode"] = mode_name(c.mode);
    j["cache_dir"] = c.cache_dir;
    j["far_field"] = {{"rho", c.ff.rho}, {"T", c.ff.T}, {"u3", c.ff.u3}};
    j["kernel"] = {{"gamma", c.gamma}, {"profile", c.profile}};
    j["grid"] = {{"n_per_axis", c.n_per_axis}, {"v_max", c.v_max}, {"n_theta", c.n_theta}, {"n_phi", c.n_phi}};
    j["weights"] = {{"delta", c.weights.delta},       {"l", c.weights.l},         {"hbar", c.weights.hbar},
                    {"vartheta", c.weights.vartheta}, {"beta", c.weights.beta},   {"alpha", c.weights.alpha},
                    {"damping_multiplier", c.damping_multiplier}};
    j["slab"] = {{"A", c.A}, {"A_sequence", c.A_sequence}, {"n_x", c.n_x}, {"grading", c.grading}};
    j["solver"] = {{"tol_rel", c.tol_rel},       {"tol_abs", c.tol_abs},           {"max_iter", c.max_iter},
                   {"method", c.method},         {"cauchy_tol", c.cauchy_tol},     {"nonlinear_tol", c.nonlinear_tol},
                   {"nonlinear_max_iter", c.nonlinear_max_iter}};
    j["source"] = {{"preset", c.source_preset}, {"amplitude", c.source_amplitude}, {"rate", c.source_rate}};
    j["boundary"] = {{"preset", c.boundary_preset}, {"amplitude", c.boundary_amplitude}, {"shooting", c.shooting}};
    return j.dump();
}

std::uint64_t config_hash(const RunConfig& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : serialize_config(c)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

LinearProblem make_problem(const RunConfig& c, const VelocityGrid& grid) {
    const std::size_t N = grid.size();
    const FarField ff = c.ff;
    const double sT = std::sqrt(ff.T);
    LinearProblem prob;
    prob.f_b.assign(N, 0.0);
    if (c.boundary_preset != "none" && c.boundary_amplitude != 0.0) {
        for (std::size_t i = 0; i < N; ++i) {
            const Vec3& v = grid.nodes[i];
            if (v[2] <= 0.0) continue;
            const double sm = sqrt_maxwellian(v, ff);
            double shape = 1.0;
            if (c.boundary_preset == "slip") shape = v[0] / sT;
            else if (c.boundary_preset == "temperature") shape = 0.5 * (rel_speed2(v, ff) / ff.T - 3.0);
            prob.f_b[i] = c.boundary_amplitude * shape * sm;
        }
    }
    if (c.source_preset != "none" && c.source_amplitude != 0.0) {
        std::vector<double> phi(N);
        for (std::size_t i = 0; i < N; ++i) {
            const Vec3& v = grid.nodes[i];
            const double sm = sqrt_maxwellian(v, ff);
            const double x1 = v[0] / sT, x2 = v[1] / sT, x3 = (v[2] - ff.u3) / sT;
            phi[i] = c.source_preset == "shear" ? x1 * x2 * sm : x3 * (x1 * x1 + x2 * x2 + x3 * x3 - 5.0) * sm;
        }
        if (c.source_preset == "heat_flux") {
            // The lattice basis is only nearly orthogonal; repeated removal converges to P_perp phi.
            const NullBasis basis = build_null_basis(grid, ff);
            for (int pass = 0; pass < 4; ++pass) {
                const std::vector<double> p = project_null(phi, basis, grid);
                for (std::size_t i = 0; i < N; ++i) phi[i] -= p[i];
            }
        }
        const WeightParams p = c.weights;
        const double amp = c.source_amplitude, rate = c.source_rate;
        const double y0 = std::pow(p.l, p.stretch());
        prob.source = [phi, p, amp, rate, y0](double x, std::size_t i) {
            return amp * std::exp(-rate * (std::pow(p.delta * x + p.l, p.stretch()) - y0)) * phi[i];
        };
    }
    return prob;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const ConvergenceError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

namespace {

struct Check {
    std::string name;
    std::function<std::string()> body;  ///< empty string on success, otherwise the violation
};

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

std::vector<Check> verify_checks(const RunConfig& c, const SpectralData& sd, const SphereQuadrature& sph,
                                 const SlabGrid& slab, std::uint64_t seed) {
    const VelocityGrid& grid = sd.op.grid;
    const std::size_t N = grid.size();
    std::vector<Check> out;
    out.push_back({"sphere_weights_sum", [&] {
                       double s = 0.0;
                       for (double q : sph.weights) s += q;
                       const double e = std::abs(s - 4.0 * M_PI);
                       return e <= 1e-12 ? std::string() : fmt("sum of weights off 4 pi by %.3e (%g)", e, 0);
                   }});
    out.push_back({"elastic_conservation", [&, seed] {
                       std::mt19937_64 rng(seed);
                       std::normal_distribution<double> n;
                       double worst = 0.0;
                       for (int k = 0; k < 200; ++k) {
                           const Vec3 v{n(rng), n(rng), n(rng)}, vs{n(rng), n(rng), n(rng)};
                           Vec3 w{n(rng), n(rng), n(rng)};
                           const double r = std::sqrt(norm2(w));
                           for (double& x : w) x /= r;
                           const auto [a, b] = post_collision(v, vs, w);
                           for (int d = 0; d < 3; ++d) worst = std::max(worst, std::abs(a[d] + b[d] - v[d] - vs[d]));
                           worst = std::max(worst, std::abs(norm2(a) + norm2(b) - norm2(v) - norm2(vs)) /
                                                       std::max(1.0, norm2(v) + norm2(vs)));
                       }
                       return worst <= 1e-12 ? std::string() : fmt("defect %.3e (%g)", worst, 0);
                   }});
    out.push_back({"collision_frequency_positive", [&] {
                       for (double v : sd.op.nu)
                           if (!(v > 0.0) || !std::isfinite(v)) return std::string("nonpositive or non-finite nu");
                       return std::string();
                   }});
    out.push_back({"solvability_count", [&] {
                       const int n = count_conditions(sd.ff.mach());
                       return n == sd.cls.n_plus ? std::string() : fmt("count %g vs n_plus %g", n, sd.cls.n_plus);
                   }});
    out.push_back({"null_orthogonality", [&] {
                       double worst = 0.0;
                       for (int a = 0; a < 5; ++a)
                           for (int b = a + 1; b < 5; ++b)
                               worst = std::max(worst, std::abs(weighted_dot(sd.basis.psi[a], sd.basis.psi[b], grid)) /
                                                           std::sqrt(sd.basis.norms[a] * sd.basis.norms[b]));
                       return worst <= 1e-6 ? std::string() : fmt("max relative overlap %.3e (%g)", worst, 0);
                   }});
    out.push_back({"operator_symmetric_nonnegative", [&, seed] {
                       std::mt19937_64 rng(seed ^ 0x1);
                       std::normal_distribution<double> n;
                       double worst_sym = 0.0, worst_neg = 0.0;
                       for (int k = 0; k < 5; ++k) {
                           std::vector<double> f(N), g(N);
                           for (std::size_t i = 0; i < N; ++i) {
                               const double sm = sqrt_maxwellian(grid.nodes[i], sd.ff);
                               f[i] = n(rng) * sm;
                               g[i] = n(rng) * sm;
                           }
                           const auto Lf = apply_L(sd.op, f), Lg = apply_L(sd.op, g);
                           const double a = weighted_dot(f, Lg, grid), b = weighted_dot(Lf, g, grid);
                           const double scale = std::sqrt(weighted_dot(Lf, Lf, grid) * weighted_dot(g, g, grid));
                           worst_sym = std::max(worst_sym, std::abs(a - b) / scale);
                           worst_neg = std::min(worst_neg, weighted_dot(f, Lf, grid) / scale);
                       }
                       if (worst_sym > 1e-10) return fmt("symmetry defect %.3e (%g)", worst_sym, 0);
                       if (worst_neg < -1e-12) return fmt("negative quadratic form %.3e (%g)", worst_neg, 0);
                       return std::string();
                   }});
    out.push_back({"projection_idempotence", [&, seed] {
                       std::mt19937_64 rng(seed ^ 0x2);
                       std::normal_distribution<double> n;
                       double worst = 0.0;
                       for (int k = 0; k < 5; ++k) {
                           std::vector<double> f(N);
                           for (std::size_t i = 0; i < N; ++i) f[i] = n(rng) * sqrt_maxwellian(grid.nodes[i], sd.ff);
                           const double fn = std::sqrt(weighted_dot(f, f, grid));
                           for (auto P : {&apply_Pplus, &apply_P0, &apply_Pbb}) {
                               const auto a = P(f, sd), b = P(a, sd);
                               double d = 0.0;
                               for (std::size_t i = 0; i < N; ++i) d += grid.weights[i] * (a[i] - b[i]) * (a[i] - b[i]);
                               worst = std::max(worst, std::sqrt(d) / fn);
                           }
                       }
                       return worst <= 1e-8 ? std::string() : fmt("idempotence defect %.3e (%g)", worst, 0);
                   }});
    out.push_back({"sweep_exponential", [&] {
                       Field S(slab.size(), N);
                       BoundaryData bd = BoundaryData::zero(N);
                       std::vector<double> nu(N, 1.0);
                       for (std::size_t i = 0; i < N; ++i)
                           if (grid.nodes[i][2] > 0.0) bd.f_b[i] = 1.0;
                       const Field g = sweep(S, nu, bd, slab, grid);
                       double worst = 0.0;
                       for (std::size_t m = 0; m < slab.size(); ++m)
                           for (std::size_t i = 0; i < N; ++i)
                               if (grid.nodes[i][2] > 0.0)
                                   worst = std::max(worst, std::abs(g(m, i) - std::exp(-slab.x[m] / grid.nodes[i][2])));
                       return worst <= 1e-10 ? std::string() : fmt("sweep error %.3e (%g)", worst, 0);
                   }});
    out.push_back({"cutoff_values", [] {
                       if (upsilon(0.5).value != 1.0 || upsilon(2.5).value != 0.0 ||
                           std::abs(upsilon(1.5).value - 0.5) > 1e-15)
                           return std::string("cutoff values at 0.5 / 1.5 / 2.5 wrong");
                       return std::string();
                   }});
    out.push_back({"sigma_derivative", [&, seed] {
                       std::mt19937_64 rng(seed ^ 0x3);
                       std::uniform_real_distribution<double> ux(0.0, 50.0), ur(0.0, c.v_max);
                       double worst = 0.0;
                       for (int k = 0; k < 100; ++k) {
                           const double x = ux(rng) + 1e-3, r = ur(rng), hstep = 1e-4;
                           const double fd = (sigma_all(x + hstep, r, c.weights).sigma - sigma_all(x - hstep, r, c.weights).sigma) /
                                             (2 * hstep);
                           const double an = sigma_all(x, r, c.weights).sigma_x;
                           worst = std::max(worst, std::abs(fd - an) / std::abs(an));
                       }
                       return worst <= 1e-6 ? std::string() : fmt("sigma_x FD mismatch %.3e (%g)", worst, 0);
                   }});
    out.push_back({"kappa_monotone", [&] {
                       const KappaTable kt = build_kappa_table(slab.x, grid, sd.op.nu, c.weights, sd.ff);
                       for (std::size_t i = 0; i < N; ++i) {
                           if (kt.at(0, i) != 0.0) return std::string("kappa(0) != 0");
                           if (grid.nodes[i][2] <= 0.0) continue;
                           for (std::size_t m = 1; m < slab.size(); ++m)
                               if (!(kt.at(m, i) > kt.at(m - 1, i))) return std::string("kappa not increasing for v3 > 0");
                       }
                       return std::string();
                   }});
    out.push_back({"functional_homogeneity", [&, seed] {
                       const NormContext ctx = make_norm_context(sd, slab, c.weights);
                       std::mt19937_64 rng(seed ^ 0x4);
                       std::normal_distribution<double> n;
                       Field g(slab.size(), N), g2(slab.size(), N), zero(slab.size(), N);
                       for (std::size_t m = 0; m < slab.size(); ++m)
                           for (std::size_t i = 0; i < N; ++i) {
                               g(m, i) = std::exp(-0.2 * slab.x[m]) * n(rng) * sqrt_maxwellian(grid.nodes[i], sd.ff);
                               g2(m, i) = 2.0 * g(m, i);
                           }
                       const double a = functional_E(g, ctx).total(), b = functional_E(g2, ctx).total();
                       if (std::abs(b - 2.0 * a) > 1e-12 * b) return fmt("E(2g) = %.6e vs 2E(g) = %.6e", b, 2 * a);
                       if (functional_E(zero, ctx).total() != 0.0) return std::string("E(0) != 0");
                       if (functional_E_inf_materialized(g, ctx) != functional_E(g, ctx).inf)
                           return std::string("E_inf code paths disagree");
                       return std::string();
                   }});
    out.push_back({"zero_problem", [&] {
                       Field h(slab.size(), N);
                       const auto [g, rep] =
                           solve_damped_slab(h, BoundaryData::zero(N), sd, c.damping(), slab, c.weights);
                       for (double v : g.data)
                           if (v != 0.0) return std::string("nonzero solution for zero data");
                       return rep.iterations == 1 ? std::string() : std::string("zero problem took more than one iteration");
                   }});
    return out;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + p.string() + " for writing");
    os << s;
}

}  // namespace

RunOutcome run(const RunConfig& c, const std::string& out_dir, std::uint64_t seed, std::ostream& log) {
    namespace fs = std::filesystem;
    using clock = std::chrono::steady_clock;
    RunOutcome outcome;
    json timings = json::object();
    auto stamp = [&](const char* what, clock::time_point t0) {
        timings[what] = std::chrono::duration<double>(clock::now() - t0).count();
    };
    try {
        fs::create_directories(out_dir);
        json report;
        report["version"] = kVersion;
        report["config"] = json::parse(serialize_config(c));
        report["config_hash"] = hex64(config_hash(c));
        report["seed"] = seed;
        report["mode"] = mode_name(c.mode);
        const MachClassification cls = classify(c.ff);
        report["classification"] = classification_json(c.ff, cls);
        log << "mode " << mode_name(c.mode) << ", mach " << c.ff.mach() << ", n+ = " << cls.n_plus << "\n";

        if (c.mode == RunMode::Classify) {
            write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
            write_text(fs::path(out_dir) / "timings.json", timings.dump(2) + "\n");
            return outcome;
        }

        auto t0 = clock::now();
        const VelocityGrid grid = build_velocity_grid(c.n_per_axis, c.v_max, c.ff.u());
        const SphereQuadrature sph = build_sphere_quadrature(c.n_theta, c.n_phi);
        const KernelSpec ks = c.kernel();
        AssemblyOptions ao;
        ao.cache_dir = c.cache_dir;
        const LinearizedOperator op = assemble_linearized(grid, sph, ks, c.ff, ao);
        stamp("assembly", t0);
        t0 = clock::now();
        const SpectralData sd = build_spectral(op, c.ff);
        stamp("spectral", t0);
        report["spectral"] = json::parse(spectral_report_json(sd));
        const SigmaConstants sc = validate_weights(c.weights, ks, c.ff, c.v_max);
        report["weight_constants"] = {{"transport_c", sc.transport_c},
                                      {"c_hbar_delta", c_hbar_delta(c.weights, sc.transport_c)},
                                      {"sigma_lower", sc.sigma_lower},
                                      {"sigma_x_upper", sc.sigma_x_upper}};

        SlabSolverOptions so;
        so.tol_rel = c.tol_rel;
        so.tol_abs = c.tol_abs;
        so.max_iter = c.max_iter;
        so.method = c.method == "krylov" ? SlabMethod::Krylov : SlabMethod::SourceIteration;
        const SlabGrid slab = build_slab(c.A, c.n_x, c.grading);
        const DampingConfig dc = c.damping();
        const LinearProblem prob = make_problem(c, grid);

        if (c.mode == RunMode::Verify) {
            json checks = json::array();
            for (const Check& ch : verify_checks(c, sd, sph, slab, seed)) {
                const std::string v = ch.body();
                checks.push_back({{"name", ch.name}, {"pass", v.empty()}});
                log << (v.empty() ? "PASS " : "FAIL ") << ch.name << (v.empty() ? "" : ": " + v) << "\n";
                if (!v.empty()) {
                    report["verify"] = checks;
                    report["first_violation"] = ch.name + ": " + v;
                    write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
                    outcome.exit_code = 4;
                    outcome.message = "property violated: " + ch.name + ": " + v;
                    return outcome;
                }
            }
            report["verify"] = checks;
            write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
            write_text(fs::path(out_dir) / "timings.json", timings.dump(2) + "\n");
            return outcome;
        }

        t0 = clock::now();
        HalfspaceSolution sol;
        IterationReport conv;
        if (c.mode == RunMode::Nonlinear) {
            NonlinearOptions no;
            no.tol = c.nonlinear_tol;
            no.max_iter = c.nonlinear_max_iter;
            no.slab = so;
            sol = solve_nonlinear(prob, c.weights, sd, dc, slab, CollisionContext{sph, ks}, no);
            conv.diff = sol.report.nonlinear_diffs;
            conv.ratio.assign(1, 0.0);
            conv.ratio.insert(conv.ratio.end(), sol.report.nonlinear_ratios.begin(), sol.report.nonlinear_ratios.end());
        } else {
            if (!c.A_sequence.empty()) {
                HalfspaceOptions ho;
                ho.A_sequence = c.A_sequence;
                ho.n_x = c.n_x;
                ho.grading = c.grading;
                ho.cauchy_tol = c.cauchy_tol;
                ho.slab = so;
                sol = solve_linear_halfspace(prob, c.weights, sd, dc, ho);
            } else if (c.shooting) {
                sol = solve_with_shooting(prob, c.weights, sd, dc, slab, so);
            } else {
                sol = solve_linear_on_slab(prob, c.weights, sd, dc, slab, so);
            }
            conv = sol.report.slab;
            if (c.mode == RunMode::DecayFit) {
                sol.report.decay = fit_decay(sol.f, sol.slab, grid, c.weights, c.ff);
                sol.report.has_decay = true;
            }
        }
        stamp("solve", t0);
        report["solve"] = json::parse(solve_report_json(sol.report));

        const NormContext ctx = make_norm_context(sd, sol.slab, c.weights);
        NormReport nr;
        nr.params = c.weights;
        const Field h = sample_source(prob, sol.slab, grid.size());
        nr.E = functional_E(sigma_transform(sol.f, ctx), ctx);
        nr.A = functional_A(sigma_transform(h, ctx), ctx);
        nr.B = functional_B(std::vector<double>(grid.size(), 0.0), ctx);
        std::vector<double> fbs(sol.f_b_used);
        for (std::size_t i = 0; i < fbs.size(); ++i) fbs[i] *= std::exp(c.weights.hbar * ctx.sigma[i]);
        nr.C = functional_C(fbs, ctx);
        nr.D = functional_D(h, ctx, &nr.note);
        report["norms"] = json::parse(norm_report_json(nr));

        write_solution_csv((fs::path(out_dir) / "profile.csv").string(), sol.f, sol.slab, grid);
        write_convergence_csv((fs::path(out_dir) / "convergence.csv").string(), conv);
        write_text(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
        write_text(fs::path(out_dir) / "timings.json", timings.dump(2) + "\n");
        log << "done: " << sol.report.iterations << " iterations\n";
    } catch (const std::exception& e) {
        outcome.exit_code = exit_code_for(e);
        outcome.message = e.what();
    }
    return outcome;
}

}  // namespace kbl
