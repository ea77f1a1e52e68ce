#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "kbl/cli.hpp"
#include "kbl/errors.hpp"

using namespace kbl;
namespace fs = std::filesystem;

namespace {
std::string config_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

nlohmann::json read_json(const fs::path& p) {
    std::ifstream is(p);
    return nlohmann::json::parse(is);
}
}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("empty document yields the defaults") {
        const RunConfig c = parse_config("{}");
        CHECK(c.mode == RunMode::Linear);
        CHECK(c.n_per_axis == 16);
        CHECK(c.ff.mach() == doctest::Approx(-2.0));
        CHECK(c.gamma == 1.0);
        CHECK(c.method == "source_iteration");
        CHECK(c.A == 30.0);
        CHECK(config_hash(c) == config_hash(RunConfig{}));
    }

    TEST_CASE("invalid documents name the offending key") {
        CHECK(config_error(R"({"kernel": {"gamma": 1.5}})") == "gamma must lie in (−3, 1]");
        CHECK(config_error(R"({"grid": {"n_per_axes": 8}})").find("grid.n_per_axes") != std::string::npos);
        CHECK(config_error(R"({"bogus": 1})").find("bogus") != std::string::npos);
        CHECK(config_error(R"({"grid": {"n_per_axis": "eight"}})").find("n_per_axis") != std::string::npos);
        CHECK(config_error(R"({"grid": {"n_per_axis": 7}})").find("n_per_axis") != std::string::npos);
        CHECK(config_error(R"({"solver": {"method": "newton"}})").find("method") != std::string::npos);
        CHECK(config_error(R"({"kernel": {"profile": "maxwell"}})") != "");
        CHECK(config_error(R"({"source": {"preset": "vortex"}})").find("preset") != std::string::npos);
        CHECK(config_error("[1, 2") != "");
        CHECK_THROWS_AS(parse_mode("solve"), ConfigError);
        for (RunMode m : {RunMode::Linear, RunMode::Nonlinear, RunMode::Classify, RunMode::Verify, RunMode::DecayFit})
            CHECK(parse_mode(mode_name(m)) == m);
    }

    TEST_CASE("serialisation round trip preserves the hash") {
        const RunConfig c = parse_config(R"({"mode": "nonlinear", "far_field": {"u3": 0.4, "T": 1.2},
            "grid": {"n_per_axis": 10}, "slab": {"A": 12, "n_x": 50}, "source": {"preset": "shear", "amplitude": 0.01}})");
        const std::string s = serialize_config(c);
        const RunConfig d = parse_config(s);
        CHECK(serialize_config(d) == s);
        CHECK(config_hash(d) == config_hash(c));
        CHECK(config_hash(parse_config("{}")) != config_hash(c));
        CHECK(d.v_max == doctest::Approx(6.0 * std::sqrt(1.2)));
    }

    TEST_CASE("presets are orthogonal to the null space and live on incoming velocities") {
        const RunConfig c = parse_config(R"({"far_field": {"u3": 0.3}, "source": {"preset": "heat_flux", "amplitude": 1},
            "boundary": {"preset": "slip", "amplitude": 0.2}})");
        const auto grid = build_velocity_grid(8, c.v_max, c.ff.u());
        const LinearProblem prob = make_problem(c, grid);
        const auto basis = build_null_basis(grid, c.ff);
        std::vector<double> s(grid.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = prob.source(1.0, i);
        CHECK(fx::sup_abs(project_null(s, basis, grid)) < 1e-10 * fx::sup_abs(s));
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (grid.nodes[i][2] < 0.0) CHECK(prob.f_b[i] == 0.0);
        CHECK(fx::sup_abs(prob.f_b) > 0.0);
    }

    TEST_CASE("exit code mapping") {
        CHECK(exit_code_for(ConfigError("x")) == 2);
        CHECK(exit_code_for(InadmissibleSourceError("x")) == 2);
        CHECK(exit_code_for(ConvergenceError("x")) == 3);
        CHECK(exit_code_for(DivergenceError("x")) == 3);
        CHECK(exit_code_for(ExtendDomainError("x")) == 3);
        CHECK(exit_code_for(NumericError("x")) == 4);
        CHECK(exit_code_for(std::runtime_error("x")) == 1);
    }

    TEST_CASE("classify run writes the classification only") {
        TempDir out("kbl_unit_classify");
        RunConfig c = parse_config(R"({"mode": "classify", "far_field": {"u3": 0.6454972243679028}})");
        std::ostringstream log;
        const RunOutcome r = run(c, out.path.string(), 7, log);
        REQUIRE(r.exit_code == 0);
        const auto j = read_json(out.path / "report.json");
        CHECK(j["classification"]["n_plus"] == 4);
        CHECK(j["seed"] == 7);
        CHECK(j["mode"] == "classify");
        CHECK_FALSE(j.contains("timings"));
        CHECK(fs::exists(out.path / "timings.json"));
        CHECK_FALSE(fs::exists(out.path / "profile.csv"));
    }

    TEST_CASE("linear run without data produces a zero profile") {
        TempDir out("kbl_unit_linear");
        const RunConfig c = parse_config(R"({"grid": {"n_per_axis": 6}, "slab": {"A": 10, "n_x": 30}})");
        std::ostringstream log;
        const RunOutcome r = run(c, out.path.string(), 1, log);
        REQUIRE(r.exit_code == 0);
        std::ifstream is(out.path / "profile.csv");
        std::string line;
        std::getline(is, line);
        CHECK(line == "x,v1,v2,v3,g");
        int rows = 0;
        while (std::getline(is, line)) {
            CHECK(std::stod(line.substr(line.rfind(',') + 1)) == 0.0);
            ++rows;
        }
        CHECK(rows == 30 * 216);
        const auto j = read_json(out.path / "report.json");
        CHECK(j["norms"]["E"]["total"].get<double>() == 0.0);
        CHECK(fs::exists(out.path / "convergence.csv"));
    }

    TEST_CASE("configuration errors surface as exit code 2") {
        TempDir out("kbl_unit_bad");
        RunConfig c = parse_config(R"({"grid": {"n_per_axis": 6}, "slab": {"A": 10, "n_x": 30}})");
        c.weights.hbar = 5.0;
        std::ostringstream log;
        const RunOutcome r = run(c, out.path.string(), 1, log);
        CHECK(r.exit_code == 2);
        CHECK(r.message.find("c_{hbar,delta}") != std::string::npos);
    }

    TEST_CASE("verify on a coarse lattice fails fast on the first violated property") {
        TempDir out("kbl_unit_verify");
        const RunConfig c = parse_config(R"({"mode": "verify", "grid": {"n_per_axis": 8}, "slab": {"A": 10, "n_x": 30}})");
        std::ostringstream log;
        const RunOutcome r = run(c, out.path.string(), 1, log);
        CHECK(r.exit_code == 4);
        CHECK(r.message.find("null_orthogonality") != std::string::npos);
        const auto j = read_json(out.path / "report.json");
        CHECK(j["first_violation"].get<std::string>().rfind("null_orthogonality", 0) == 0);
        CHECK(j["verify"].back()["pass"] == false);
    }
}
