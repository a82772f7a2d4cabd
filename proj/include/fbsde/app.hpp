#pragma once

#include "fbsde/bench.hpp"
#include "fbsde/grid.hpp"
#include "fbsde/hjb.hpp"
#include "fbsde/problem.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fbsde::app {

// Exit codes shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kNotConverged = 2;
inline constexpr int kVerificationFailed = 3;

// Everything a run needs. Loaded from an INI file; every field has a default
// except the coefficients of an expression problem.
struct RunConfig {
    // [builtin]
    std::optional<std::string> builtin;
    std::map<std::string, double> builtin_params;

    // [dims], [horizon]
    Dimensions dims;
    double horizon = 1.0;
    double t0 = 0.0;

    // [coefficients]
    ExpressionSet exprs;
    bool has_coefficients = false;

    // [control]
    std::vector<double> control_lower{0.0};
    std::vector<double> control_upper{0.0};
    double lipschitz_k = 1.0;
    std::vector<double> initial_control;  // empty: midpoint of U

    // [grid]; unset values fall back to the builtin's grid
    std::optional<double> x_lo, x_hi;
    std::optional<std::size_t> nx, nt;

    // [mc]
    std::vector<double> x0;  // empty: the builtin's x0, else 0
    std::size_t paths = 100000;
    std::size_t steps = 256;
    std::uint64_t seed = 12345;
    unsigned degree = 3;
    bool dump_paths = false;
    std::string policy_file;  // simulate under this u_star.csv instead of the initial control

    // [solver]
    double tol = 1e-6;
    std::size_t max_iter = 50;
    std::size_t candidates = 101;
    Stepper stepper = Stepper::explicit_euler;

    // [verify]
    double residual_tol = 0.05;
    double cost_rel_tol = 0.02;
    double dpp_rel_tol = 0.01;
    double z_tol = 0.05;
    double split = 0.5;  // fraction of [t0, T]
    std::size_t dpp_paths = 20000;
    std::size_t dpp_steps = 128;

    // [output]
    std::string out_dir = "out";

    // Not part of the file: set from --threads.
    unsigned threads = 1;

    // Throws ConfigError.
    void validate() const;
};

RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);

// The problem a config describes, with gamma already folded in.
struct ResolvedProblem {
    ProblemSpec spec;      // solver form (transformed, minimisation)
    ProblemSpec original;  // before transform_gamma
    GridSpec grid;
    std::vector<double> x0;
    std::optional<bench::UtilityParams> utility;
    std::optional<bench::MeanVarianceParams> meanvar;
};
ResolvedProblem resolve(const RunConfig& cfg);

// Effective configuration with every default written out. Reading it back
// reproduces the run.
void write_effective_config(std::ostream& os, const RunConfig& cfg, const ResolvedProblem& problem);

// Commands. Each writes its artifacts to cfg.out_dir, logs to `log`, and
// returns one of the exit codes above. Errors other than ConfigError
// propagate to the caller.
int cmd_solve(const RunConfig& cfg, std::ostream& log);
int cmd_simulate(const RunConfig& cfg, std::ostream& log);
int cmd_verify(const RunConfig& cfg, bool no_solve, std::ostream& log);
int cmd_check_dpp(const RunConfig& cfg, bool no_solve, std::ostream& log);
int cmd_bench(const RunConfig& cfg, const std::string& which, std::ostream& log);

// Solve artifacts (v.csv is written in the reported sign convention).
void write_solve_artifacts(const std::string& dir, const ResolvedProblem& problem, const FieldPair& fields,
                           const SolveReport& report);
FieldPair read_solve_artifacts(const std::string& dir, const ResolvedProblem& problem);

}  // namespace fbsde::app
