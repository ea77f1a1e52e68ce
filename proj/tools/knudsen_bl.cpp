// knudsen-bl <mode> --config <path> [--out <dir>] [--seed <u64>]
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "kbl/cli.hpp"
#include "kbl/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Discrete-velocity Knudsen boundary-layer solver"};
    std::string mode, config_path, out_dir = ".";
    std::uint64_t seed = 0;
    app.add_option("mode", mode, "linear | nonlinear | classify | verify | decay-fit")->required();
    app.add_option("--config", config_path, "JSON configuration file")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "seed for random probe fields");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        std::ifstream in(config_path);
        if (!in) throw kbl::ConfigError("cannot read config file " + config_path);
        std::ostringstream text;
        text << in.rdbuf();
        kbl::RunConfig cfg = kbl::parse_config(text.str());
        // The positional mode overrides the document.
        cfg.mode = kbl::parse_mode(mode);
        const kbl::RunOutcome r = kbl::run(cfg, out_dir, seed, std::cerr);
        if (r.exit_code != 0) std::cerr << "error: " << r.message << "\n";
        return r.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kbl::exit_code_for(e);
    }
}
