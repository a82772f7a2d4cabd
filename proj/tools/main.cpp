#include "fbsde/app.hpp"
#include "fbsde/error.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
    namespace app = fbsde::app;

    CLI::App cli{"Controlled FBSDE solver: extended HJB iteration, Monte Carlo checks, benchmarks"};
    cli.require_subcommand(1);
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    cli.add_option("--config", config_path, "INI run configuration (default: builtin utility problem)");
    cli.add_option("--out-dir", out_dir, "output directory (overrides [output] dir)");
    cli.add_option("--seed", seed, "master seed (overrides [mc] seed)");
    cli.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);

    auto* solve = cli.add_subcommand("solve", "solve the extended HJB system");
    auto* simulate = cli.add_subcommand("simulate", "simulate the forward-backward system");
    auto* verify = cli.add_subcommand("verify", "solve, then run the four verification checks");
    auto* dpp = cli.add_subcommand("check-dpp", "dynamic programming check at the split time");
    auto* bench = cli.add_subcommand("bench", "run a benchmark");
    bool no_solve = false;
    verify->add_flag("--no-solve", no_solve, "reuse artifacts from the output directory");
    dpp->add_flag("--no-solve", no_solve, "reuse artifacts from the output directory");
    std::string which;
    bench->add_option("which", which, "utility | meanvar | viscosity")
        ->required()
        ->check(CLI::IsMember({"utility", "meanvar", "viscosity"}));

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? app::kOk : app::kConfigError;
    }

    try {
        app::RunConfig cfg;
        if (!config_path.empty()) {
            cfg = app::load_config(config_path);
        } else {
            cfg.builtin = "utility";
        }
        if (out_dir) cfg.out_dir = *out_dir;
        if (seed) cfg.seed = *seed;
        cfg.threads = threads;
        cfg.validate();

        if (*solve) return app::cmd_solve(cfg, std::cerr);
        if (*simulate) return app::cmd_simulate(cfg, std::cerr);
        if (*verify) return app::cmd_verify(cfg, no_solve, std::cerr);
        if (*dpp) return app::cmd_check_dpp(cfg, no_solve, std::cerr);
        return app::cmd_bench(cfg, which, std::cerr);
    } catch (const fbsde::ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return app::kConfigError;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return app::kConfigError;
    }
}
