#include "fbsde/app.hpp"
#include "fbsde/error.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace fbsde;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

app::RunConfig parse(const std::string& text) {
    std::istringstream is(text);
    return app::parse_config(is);
}

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::path("cli_out") / name;
    fs::remove_all(p);
    return p.string();
}

const char* kLq = R"(
[dims]
n = 1
m = 1
k = 1

[horizon]
T = 1

[coefficients]
mu = u
sigma = 0.3
f = 0.5 * x^2 + 0.5 * u^2
phi = x
g_terminal = x^2

[control]
lower = -2
upper = 2
lipschitz_k = 5

[grid]
x_lo = -2
x_hi = 2
nx = 41
nt = 100

[mc]
x0 = 0.5
paths = 2000
steps = 32
seed = 77

[verify]
dpp_paths = 2000
)";

int run_cli(const std::string& args) {
    const int status = std::system(fmt::format("{} {} > /dev/null 2>&1", FBSDE_CLI, args).c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("effective config round trip") {
    const app::RunConfig cfg = parse(kLq);
    const app::ResolvedProblem p = app::resolve(cfg);
    std::ostringstream first;
    app::write_effective_config(first, cfg, p);
    const app::RunConfig again = parse(first.str());
    std::ostringstream second;
    app::write_effective_config(second, again, app::resolve(again));
    CHECK(first.str() == second.str());
    CHECK(again.seed == 77);
    CHECK(again.paths == 2000);
    CHECK(again.exprs.f == "0.5 * x^2 + 0.5 * u^2");
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[grid]\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[nowhere]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[mc]\npaths = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[mc]\npaths = -5\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[solver]\nmax_iter = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[solver]\nstepper = sideways\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[verify]\nsplit = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse("[mc]\npaths = 10\n"), ConfigError);
    CHECK_THROWS_AS(parse("[builtin]\nname = utility\n[solver]\ntol = abc\n"), ConfigError);
    try {
        parse("[builtin]\nname = utility\n[grid]\nnx = 2\n");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("grid too small") != std::string::npos);
    }
    const app::RunConfig unknown = parse("[builtin]\nname = utility\nwobble = 3\n");
    CHECK_THROWS_AS(app::resolve(unknown), ConfigError);
}

TEST_CASE("utility solve writes every artifact") {
    app::RunConfig cfg = parse("[builtin]\nname = utility\n");
    cfg.out_dir = fresh_dir("utility");
    std::ostringstream log;
    CHECK(app::cmd_solve(cfg, log) == app::kOk);
    for (const char* f : {"v.csv", "g.csv", "z.csv", "u_star.csv", "report.txt", "effective.ini"}) {
        CHECK(fs::exists(fs::path(cfg.out_dir) / f));
    }
    CHECK(slurp(fs::path(cfg.out_dir) / "report.txt").find("converged true") != std::string::npos);

    // impossible tolerance on the stored artifacts
    cfg.residual_tol = 0.0;
    cfg.paths = 2000;
    cfg.dpp_paths = 2000;
    CHECK(app::cmd_verify(cfg, true, log) == app::kVerificationFailed);
    CHECK(slurp(fs::path(cfg.out_dir) / "verify.txt").find("pde_residual") != std::string::npos);
}

TEST_CASE("missing artifacts") {
    app::RunConfig cfg = parse(kLq);
    cfg.out_dir = fresh_dir("empty");
    std::ostringstream log;
    CHECK_THROWS_AS(app::cmd_verify(cfg, true, log), ConfigError);
    CHECK_THROWS_AS(app::cmd_check_dpp(cfg, true, log), ConfigError);
}

TEST_CASE("rerunning from the echoed config reproduces the artifacts") {
    app::RunConfig cfg = parse(kLq);
    cfg.out_dir = fresh_dir("lq_a");
    std::ostringstream log;
    REQUIRE(app::cmd_solve(cfg, log) == app::kOk);
    std::ifstream echo(fs::path(cfg.out_dir) / "effective.ini");
    app::RunConfig again = app::parse_config(echo);
    again.out_dir = fresh_dir("lq_b");
    REQUIRE(app::cmd_solve(again, log) == app::kOk);
    for (const char* f : {"v.csv", "g.csv", "z.csv", "u_star.csv", "report.txt"}) {
        CHECK(slurp(fs::path(cfg.out_dir) / f) == slurp(fs::path(again.out_dir) / f));
    }
}

TEST_CASE("non-convergence exit code") {
    app::RunConfig cfg = parse(kLq);
    cfg.tol = 0.0;
    cfg.max_iter = 1;
    cfg.out_dir = fresh_dir("capped");
    std::ostringstream log;
    CHECK(app::cmd_solve(cfg, log) == app::kNotConverged);
}

TEST_CASE("simulate is deterministic") {
    app::RunConfig cfg = parse(kLq);
    cfg.out_dir = fresh_dir("sim_a");
    std::ostringstream log;
    REQUIRE(app::cmd_simulate(cfg, log) == app::kOk);
    cfg.out_dir = fresh_dir("sim_b");
    cfg.threads = 3;
    REQUIRE(app::cmd_simulate(cfg, log) == app::kOk);
    CHECK(slurp(fs::path("cli_out/sim_a/summary.csv")) == slurp(fs::path("cli_out/sim_b/summary.csv")));
}

TEST_CASE("variance problem summary starts at x0") {
    app::RunConfig cfg = parse("[builtin]\nname = meanvar\nx0 = 1\n[mc]\npaths = 20000\nsteps = 64\n");
    cfg.out_dir = fresh_dir("meanvar");
    std::ostringstream log;
    REQUIRE(app::cmd_simulate(cfg, log) == app::kOk);
    std::istringstream is(slurp(fs::path(cfg.out_dir) / "summary.csv"));
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(header == "k,t,mean_X,std_X,mean_Y,mean_Z");
    double k, t, mx, sx, my;
    char c;
    std::istringstream fields(row);
    fields >> k >> c >> t >> c >> mx >> c >> sx >> c >> my;
    CHECK(my == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("benchmarks") {
    app::RunConfig cfg = parse("[builtin]\nname = utility\n[mc]\npaths = 20000\nsteps = 64\n");
    cfg.out_dir = fresh_dir("bench");
    std::ostringstream log;
    CHECK(app::cmd_bench(cfg, "viscosity", log) == app::kOk);
    const std::string report = slurp(fs::path(cfg.out_dir) / "viscosity.txt");
    CHECK(report.find(": -2") != std::string::npos);
    CHECK(report.find(": 2") != std::string::npos);
    CHECK(app::cmd_bench(cfg, "meanvar", log) == app::kOk);
    CHECK(slurp(fs::path(cfg.out_dir) / "meanvar.txt").find("gap in combined standard errors") != std::string::npos);
    CHECK_THROWS_AS(app::cmd_bench(cfg, "nothing", log), ConfigError);
}

TEST_CASE("exit codes of the binary") {
    fs::create_directories("cli_out");
    {
        std::ofstream os("cli_out/small_grid.ini");
        os << "[builtin]\nname = utility\n[grid]\nnx = 2\n";
    }
    CHECK(run_cli("--config cli_out/small_grid.ini solve") == 1);
    CHECK(run_cli("--config cli_out/does_not_exist.ini solve") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("--out-dir cli_out/bin_visc bench viscosity") == 0);
    CHECK(run_cli("--out-dir cli_out/nothing_here verify --no-solve") == 1);
}
