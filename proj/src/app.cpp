#include "fbsde/app.hpp"

#include "fbsde/error.hpp"
#include "fbsde/mc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

namespace fbsde::app {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

// ---------------------------------------------------------------------------
// Value parsing

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_number(const std::string& where, const std::string& text) {
    const std::string s = trim(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size() || !std::isfinite(v)) {
        throw ConfigError(fmt::format("{}: '{}' is not a finite number", where, text));
    }
    return v;
}

std::uint64_t to_count(const std::string& where, const std::string& text) {
    const std::string s = trim(text);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(fmt::format("{}: '{}' is not a nonnegative integer", where, text));
    }
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{}: '{}' is out of range", where, text));
    }
}

bool to_bool(const std::string& where, const std::string& text) {
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(fmt::format("{}: '{}' is not a boolean", where, text));
}

std::vector<std::string> split_bar(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, '|')) out.push_back(trim(part));
    return out;
}

std::vector<double> to_vector(const std::string& where, const std::string& text) {
    std::vector<double> out;
    for (const auto& part : split_bar(text)) out.push_back(to_number(where, part));
    return out;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i ? " | " : "", v[i]);
    return s;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " | " : "") + v[i];
    return s;
}

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"dims", {"n", "m", "k"}},
        {"horizon", {"T", "t0"}},
        {"coefficients", {"mu", "sigma", "h", "f", "phi", "g_terminal", "gamma", "gamma_y", "gamma_yy"}},
        {"control", {"lower", "upper", "lipschitz_k", "initial"}},
        {"builtin", {}},  // name plus the builtin's own parameters
        {"grid", {"x_lo", "x_hi", "nx", "nt"}},
        {"mc", {"x0", "paths", "steps", "seed", "degree", "dump_paths", "policy_file"}},
        {"solver", {"tol", "max_iter", "candidates", "stepper"}},
        {"verify", {"residual_tol", "cost_rel_tol", "dpp_rel_tol", "z_tol", "split", "dpp_paths", "dpp_steps"}},
        {"output", {"dir"}},
    };
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError(fmt::format("cannot write {}", path.string()));
    return os;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError(fmt::format("missing artifact: {}", path.string()));
    return is;
}

void prepare_output(const RunConfig& cfg, const ResolvedProblem& problem) {
    fs::create_directories(cfg.out_dir);
    auto os = open_out(fs::path(cfg.out_dir) / "effective.ini");
    write_effective_config(os, cfg, problem);
}

const char* stepper_name(Stepper s) { return s == Stepper::implicit ? "implicit" : "explicit"; }

std::map<std::string, double> resolved_builtin_params(const ResolvedProblem& p) {
    if (p.utility) {
        const auto& u = *p.utility;
        return {{"r", u.r},       {"mu", u.mu}, {"sigma", u.sigma},
                {"gamma", u.gamma}, {"T", u.horizon}, {"x0", p.x0.at(0)},
                {"lipschitz_k", p.spec.lipschitz_k}};
    }
    if (p.meanvar) {
        const auto& m = *p.meanvar;
        return {{"a", m.a}, {"sigma", m.sigma}, {"x0", m.x0}, {"T", m.horizon}};
    }
    return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_config(std::istream& is) {
    pt::ptree tree;
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
    }
    RunConfig cfg;
    bool have_lower = false, have_upper = false;
    for (const auto& [section, body] : tree) {
        const auto known = schema().find(section);
        if (known == schema().end()) throw ConfigError(fmt::format("unknown config section [{}]", section));
        if (body.empty() && !body.data().empty()) {
            throw ConfigError(fmt::format("config key '{}' lies outside any section", section));
        }
        for (const auto& [key, node] : body) {
            const std::string value = node.data();
            const std::string where = fmt::format("[{}] {}", section, key);
            if (section != "builtin" && !known->second.contains(key)) {
                throw ConfigError(fmt::format("unknown config key {}", where));
            }
            if (section == "builtin") {
                if (key == "name") {
                    cfg.builtin = trim(value);
                } else {
                    cfg.builtin_params[key] = to_number(where, value);
                }
            } else if (section == "dims") {
                const auto v = static_cast<int>(std::min<std::uint64_t>(to_count(where, value), 1 << 20));
                (key == "n" ? cfg.dims.n : key == "m" ? cfg.dims.m : cfg.dims.k) = v;
            } else if (section == "horizon") {
                (key == "T" ? cfg.horizon : cfg.t0) = to_number(where, value);
            } else if (section == "coefficients") {
                cfg.has_coefficients = true;
                const std::string text = trim(value);
                if (key == "mu") cfg.exprs.mu = split_bar(text);
                else if (key == "sigma") cfg.exprs.sigma = split_bar(text);
                else if (key == "h") cfg.exprs.h = text;
                else if (key == "f") cfg.exprs.f = text;
                else if (key == "phi") cfg.exprs.phi = text;
                else if (key == "g_terminal") cfg.exprs.g_terminal = text;
                else if (key == "gamma") cfg.exprs.gamma = text;
                else if (key == "gamma_y") cfg.exprs.gamma_y = text;
                else cfg.exprs.gamma_yy = text;
            } else if (section == "control") {
                if (key == "lower") {
                    cfg.control_lower = to_vector(where, value);
                    have_lower = true;
                } else if (key == "upper") {
                    cfg.control_upper = to_vector(where, value);
                    have_upper = true;
                } else if (key == "lipschitz_k") {
                    cfg.lipschitz_k = to_number(where, value);
                } else {
                    cfg.initial_control = to_vector(where, value);
                }
            } else if (section == "grid") {
                if (key == "x_lo") cfg.x_lo = to_number(where, value);
                else if (key == "x_hi") cfg.x_hi = to_number(where, value);
                else if (key == "nx") cfg.nx = to_count(where, value);
                else cfg.nt = to_count(where, value);
            } else if (section == "mc") {
                if (key == "x0") cfg.x0 = to_vector(where, value);
                else if (key == "paths") cfg.paths = to_count(where, value);
                else if (key == "steps") cfg.steps = to_count(where, value);
                else if (key == "seed") cfg.seed = to_count(where, value);
                else if (key == "degree") cfg.degree = static_cast<unsigned>(to_count(where, value));
                else if (key == "dump_paths") cfg.dump_paths = to_bool(where, value);
                else cfg.policy_file = trim(value);
            } else if (section == "solver") {
                if (key == "tol") cfg.tol = to_number(where, value);
                else if (key == "max_iter") cfg.max_iter = to_count(where, value);
                else if (key == "candidates") cfg.candidates = to_count(where, value);
                else {
                    const std::string s = trim(value);
                    if (s == "explicit") cfg.stepper = Stepper::explicit_euler;
                    else if (s == "implicit") cfg.stepper = Stepper::implicit;
                    else throw ConfigError(fmt::format("{}: expected explicit or implicit", where));
                }
            } else if (section == "verify") {
                if (key == "dpp_paths") cfg.dpp_paths = to_count(where, value);
                else if (key == "dpp_steps") cfg.dpp_steps = to_count(where, value);
                else {
                    const double v = to_number(where, value);
                    if (key == "residual_tol") cfg.residual_tol = v;
                    else if (key == "cost_rel_tol") cfg.cost_rel_tol = v;
                    else if (key == "dpp_rel_tol") cfg.dpp_rel_tol = v;
                    else if (key == "z_tol") cfg.z_tol = v;
                    else cfg.split = v;
                }
            } else {
                cfg.out_dir = trim(value);
            }
        }
    }
    if (have_lower != have_upper) throw ConfigError("[control] needs both lower and upper");
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(fmt::format("cannot open config {}", path));
    return parse_config(is);
}

void RunConfig::validate() const {
    if (!builtin && !has_coefficients) throw ConfigError("config needs a [builtin] or a [coefficients] section");
    if (builtin && builtin->empty()) throw ConfigError("[builtin] name is empty");
    if (!(horizon > 0.0)) throw ConfigError("[horizon] T must be positive");
    if (!(t0 >= 0.0)) throw ConfigError("[horizon] t0 must be nonnegative");
    if (nx && *nx < 3) throw ConfigError("grid too small: nx must be at least 3");
    if (nt && *nt < 1) throw ConfigError("grid too small: nt must be at least 1");
    if (x_lo && x_hi && !(*x_lo < *x_hi)) throw ConfigError("[grid] needs x_lo < x_hi");
    if (paths < 1) throw ConfigError("[mc] paths must be at least 1");
    if (steps < 1) throw ConfigError("[mc] steps must be at least 1");
    if (degree < 1) throw ConfigError("[mc] degree must be at least 1");
    if (!(tol >= 0.0)) throw ConfigError("[solver] tol must be nonnegative");
    if (max_iter < 1) throw ConfigError("[solver] max_iter must be at least 1");
    if (candidates < 1) throw ConfigError("[solver] candidates must be at least 1");
    if (!(residual_tol >= 0.0) || !(cost_rel_tol >= 0.0) || !(dpp_rel_tol >= 0.0) || !(z_tol >= 0.0)) {
        throw ConfigError("[verify] tolerances must be nonnegative");
    }
    if (!(split > 0.0 && split < 1.0)) throw ConfigError("[verify] split must lie in (0, 1)");
    if (dpp_paths < 1) throw ConfigError("[verify] dpp_paths must be at least 1");
    if (!(lipschitz_k >= 0.0)) throw ConfigError("[control] lipschitz_k must be nonnegative");
    if (out_dir.empty()) throw ConfigError("[output] dir is empty");
    if (!builtin) {
        if (dims.n < 1 || dims.m < 1 || dims.k < 1) throw ConfigError("[dims] n, m, k must be at least 1");
        if (control_lower.size() != static_cast<std::size_t>(dims.k) ||
            control_upper.size() != static_cast<std::size_t>(dims.k)) {
            throw ConfigError(fmt::format("[control] lower and upper need {} entries", dims.k));
        }
    }
}

ResolvedProblem resolve(const RunConfig& cfg) {
    ResolvedProblem p;
    if (cfg.builtin) {
        bench::Builtin b = bench::make_builtin(*cfg.builtin, cfg.builtin_params);
        p.original = std::move(b.spec);
        p.grid = b.grid;
        p.x0 = cfg.x0.empty() ? std::vector<double>{b.x0} : cfg.x0;
        p.utility = b.utility;
        p.meanvar = b.meanvar;
    } else {
        p.original = problem_from_expressions(cfg.exprs, cfg.dims, cfg.horizon,
                                              ControlBox{cfg.control_lower, cfg.control_upper}, cfg.lipschitz_k);
        if (!cfg.x_lo || !cfg.x_hi) throw ConfigError("[grid] x_lo and x_hi are required for expression problems");
        p.grid.nx = 201;
        p.grid.nt = 800;
        p.x0 = cfg.x0.empty() ? std::vector<double>(static_cast<std::size_t>(cfg.dims.n), 0.0) : cfg.x0;
    }
    if (cfg.x_lo) p.grid.x_lo = *cfg.x_lo;
    if (cfg.x_hi) p.grid.x_hi = *cfg.x_hi;
    if (cfg.nx) p.grid.nx = *cfg.nx;
    if (cfg.nt) p.grid.nt = *cfg.nt;
    p.grid.t0 = cfg.t0;
    p.grid.t_end = p.original.horizon;
    if (!(p.grid.t0 < p.grid.t_end)) throw ConfigError("[horizon] t0 must be below T");
    if (p.x0.size() != static_cast<std::size_t>(p.original.dims.n)) {
        throw ConfigError(fmt::format("[mc] x0 needs {} entries", p.original.dims.n));
    }
    p.original.validate();
    p.spec = resolve_gamma(p.original);
    return p;
}

void write_effective_config(std::ostream& os, const RunConfig& cfg, const ResolvedProblem& problem) {
    auto num = [](double v) { return fmt::format("{:.17g}", v); };
    if (cfg.builtin) {
        os << "[builtin]\nname = " << *cfg.builtin << '\n';
        for (const auto& [k, v] : resolved_builtin_params(problem)) os << k << " = " << num(v) << '\n';
        os << "\n[horizon]\nt0 = " << num(cfg.t0) << '\n';
        if (!cfg.initial_control.empty()) os << "\n[control]\ninitial = " << join(cfg.initial_control) << '\n';
    } else {
        fmt::print(os, "[dims]\nn = {}\nm = {}\nk = {}\n\n", cfg.dims.n, cfg.dims.m, cfg.dims.k);
        os << "[horizon]\nT = " << num(cfg.horizon) << "\nt0 = " << num(cfg.t0) << "\n\n";
        os << "[coefficients]\nmu = " << join(cfg.exprs.mu) << "\nsigma = " << join(cfg.exprs.sigma) << '\n';
        os << "h = " << cfg.exprs.h << "\nf = " << cfg.exprs.f << "\nphi = " << cfg.exprs.phi << '\n';
        os << "g_terminal = " << cfg.exprs.g_terminal << '\n';
        if (cfg.exprs.gamma) os << "gamma = " << *cfg.exprs.gamma << '\n';
        if (cfg.exprs.gamma_y) os << "gamma_y = " << *cfg.exprs.gamma_y << '\n';
        if (cfg.exprs.gamma_yy) os << "gamma_yy = " << *cfg.exprs.gamma_yy << '\n';
        os << "\n[control]\nlower = " << join(cfg.control_lower) << "\nupper = " << join(cfg.control_upper) << '\n';
        os << "lipschitz_k = " << num(cfg.lipschitz_k) << '\n';
        if (!cfg.initial_control.empty()) os << "initial = " << join(cfg.initial_control) << '\n';
    }
    const GridSpec& g = problem.grid;
    fmt::print(os, "\n[grid]\nx_lo = {:.17g}\nx_hi = {:.17g}\nnx = {}\nnt = {}\n", g.x_lo, g.x_hi, g.nx, g.nt);
    fmt::print(os, "\n[mc]\nx0 = {}\npaths = {}\nsteps = {}\nseed = {}\ndegree = {}\ndump_paths = {}\n",
               join(problem.x0), cfg.paths, cfg.steps, cfg.seed, cfg.degree, cfg.dump_paths ? "true" : "false");
    if (!cfg.policy_file.empty()) os << "policy_file = " << cfg.policy_file << '\n';
    fmt::print(os, "\n[solver]\ntol = {:.17g}\nmax_iter = {}\ncandidates = {}\nstepper = {}\n", cfg.tol, cfg.max_iter,
               cfg.candidates, stepper_name(cfg.stepper));
    fmt::print(os,
               "\n[verify]\nresidual_tol = {:.17g}\ncost_rel_tol = {:.17g}\ndpp_rel_tol = {:.17g}\nz_tol = {:.17g}\n"
               "split = {:.17g}\ndpp_paths = {}\ndpp_steps = {}\n",
               cfg.residual_tol, cfg.cost_rel_tol, cfg.dpp_rel_tol, cfg.z_tol, cfg.split, cfg.dpp_paths,
               cfg.dpp_steps);
    os << "\n[output]\ndir = " << cfg.out_dir << '\n';
}

// ---------------------------------------------------------------------------
// Artifacts

void write_solve_artifacts(const std::string& dir, const ResolvedProblem& problem, const FieldPair& fields,
                           const SolveReport& report) {
    const fs::path d(dir);
    fs::create_directories(d);
    const double sign = problem.spec.reported_value_sign();
    {
        auto os = open_out(d / "v.csv");
        fields.v.write_csv(os, sign);
    }
    {
        auto os = open_out(d / "g.csv");
        fields.g.write_csv(os);
    }
    {
        auto os = open_out(d / "z.csv");
        fields.z.write_csv(os);
    }
    {
        auto os = open_out(d / "u_star.csv");
        write_policy_csv(os, fields.u_star);
    }
    auto os = open_out(d / "report.txt");
    const GridSpec& g = problem.grid;
    fmt::print(os, "problem {}\n", problem.spec.name);
    fmt::print(os, "sense {}\n", problem.spec.sense == Sense::maximize ? "maximize" : "minimize");
    fmt::print(os, "grid x [{:.17g}, {:.17g}] nx {} t [{:.17g}, {:.17g}] nt {}\n", g.x_lo, g.x_hi, g.nx, g.t0,
               g.t_end, g.nt);
    report.write(os);
}

FieldPair read_solve_artifacts(const std::string& dir, const ResolvedProblem& problem) {
    const fs::path d(dir);
    FieldPair f;
    const double sign = problem.spec.reported_value_sign();
    {
        auto is = open_in(d / "v.csv");
        f.v = ScalarField::read_csv(is, sign);
    }
    {
        auto is = open_in(d / "g.csv");
        f.g = ScalarField::read_csv(is);
    }
    {
        auto is = open_in(d / "z.csv");
        f.z = ScalarField::read_csv(is);
    }
    {
        auto is = open_in(d / "u_star.csv");
        f.u_star = read_policy_csv(is, problem.spec.control, problem.spec.lipschitz_k);
    }
    const GridSpec& g = f.v.grid();
    if (f.g.grid().nx != g.nx || f.g.grid().nt != g.nt || f.z.grid().nx != g.nx || f.z.grid().nt != g.nt ||
        f.u_star.nodes().size() != g.nx || f.u_star.times().size() != g.nt + 1) {
        throw ConfigError("solve artifacts do not share one grid");
    }
    return f;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Solved {
    ResolvedProblem problem;
    FieldPair fields;
    SolveReport report;
    bool converged = true;
};

Solved run_solve(const RunConfig& cfg, std::ostream& log) {
    Solved s;
    s.problem = resolve(cfg);
    s.problem.grid.validate();
    prepare_output(cfg, s.problem);
    const ControlCandidates candidates = ControlCandidates::uniform(s.problem.spec.control, cfg.candidates);
    const FeedbackPolicy u0 = initial_policy(s.problem.spec, s.problem.grid, cfg.initial_control);
    SolverOptions opts;
    opts.tol = cfg.tol;
    opts.max_iter = cfg.max_iter;
    opts.stepper = cfg.stepper;
    opts.threads = cfg.threads;
    auto [fields, report] = solve_extended_hjb(s.problem.spec, s.problem.grid, u0, candidates, opts);
    fmt::print(log, "solve: {} iterations, converged {}, g {:.2f}s v {:.2f}s projection {:.2f}s\n",
               report.iterations, report.converged, report.seconds_g, report.seconds_v, report.seconds_projection);
    write_solve_artifacts(cfg.out_dir, s.problem, fields, report);
    s.converged = report.converged;
    s.fields = std::move(fields);
    s.report = std::move(report);
    return s;
}

Solved load_or_solve(const RunConfig& cfg, bool no_solve, std::ostream& log) {
    if (!no_solve) {
        Solved s = run_solve(cfg, log);
        if (!s.converged) log << "warning: the solve did not converge; verifying the best iterate\n";
        return s;
    }
    Solved s;
    s.problem = resolve(cfg);
    s.fields = read_solve_artifacts(cfg.out_dir, s.problem);
    s.problem.grid = s.fields.v.grid();
    return s;
}

void require_grid_problem(const ResolvedProblem& p) {
    if (p.spec.dims.n != 1 || p.spec.dims.m != 1) throw ConfigError("this command needs n = m = 1");
}

struct CheckLine {
    std::string name;
    double value;
    double tolerance;
    bool pass;
};

void write_checks(std::ostream& os, const std::vector<CheckLine>& checks) {
    os << "check,value,tolerance,status\n";
    for (const auto& c : checks) {
        fmt::print(os, "{},{:.6e},{:.6e},{}\n", c.name, c.value, c.tolerance, c.pass ? "pass" : "FAIL");
    }
}

// Perturbations as fractions of the control range.
const std::vector<double> kDppShifts{-0.4, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.4};

struct DppOutcome {
    DppReport report;
    bool optimal_gap_ok = false;
    bool perturbed_ok = false;
    double allowance = 0.0;
};

DppOutcome run_dpp(const RunConfig& cfg, const Solved& s) {
    const auto& p = s.problem;
    const double x0 = p.x0.at(0);
    const double t0 = cfg.t0;
    const double split = t0 + cfg.split * (p.spec.horizon - t0);
    const std::vector<FeedbackPolicy> shifted = shifted_policies(s.fields.u_star, kDppShifts);
    std::vector<const ControlLaw*> candidates{&s.fields.u_star};
    for (const auto& c : shifted) candidates.push_back(&c);
    SimulationSetup setup;
    setup.paths = cfg.dpp_paths;
    setup.steps = cfg.dpp_steps;
    setup.seed = cfg.seed + 1;
    setup.threads = cfg.threads;
    DppOutcome out;
    out.report = check_dpp(p.spec, s.fields.v, s.fields.g, s.fields.z, t0, x0, split, candidates, setup);
    const auto& r = out.report;
    const double se = r.rhs[0].std_error;
    out.allowance = 3.0 * se + cfg.dpp_rel_tol * std::abs(r.lhs);
    out.optimal_gap_ok = std::abs(r.rhs[0].mean - r.lhs) <= out.allowance;
    out.perturbed_ok = true;
    for (std::size_t c = 1; c < r.rhs.size(); ++c) {
        out.perturbed_ok = out.perturbed_ok && r.rhs[c].mean >= r.rhs[0].mean - 3.0 * se;
    }
    return out;
}

void write_dpp(std::ostream& os, const DppOutcome& d) {
    const auto& r = d.report;
    fmt::print(os, "lhs v(t0,x0) {:.17g}\n", r.lhs);
    os << "candidate,rhs,std_error,paired_se\n";
    for (std::size_t c = 0; c < r.rhs.size(); ++c) {
        fmt::print(os, "{},{:.17g},{:.17g},{:.17g}\n", c == 0 ? std::string("u_star") : fmt::format("shift{:+g}", kDppShifts[c - 1]),
                   r.rhs[c].mean, r.rhs[c].std_error, r.paired_se[c]);
    }
    fmt::print(os, "best {}\nmin_rhs {:.17g}\ngap {:.17g}\n", r.best, r.min_rhs, r.gap);
    fmt::print(os, "optimal_gap {:.17g}\nallowance {:.17g}\n", r.rhs[0].mean - r.lhs, d.allowance);
    const double disc = r.discretization;
    fmt::print(os, "dt_plus_dx2 {:.17g}\nimplied_C {:.17g}\n", disc, disc > 0 ? std::abs(r.rhs[0].mean - r.lhs) / disc : 0.0);
    fmt::print(os, "optimal_gap_ok {}\nperturbed_not_better {}\n", d.optimal_gap_ok, d.perturbed_ok);
}

}  // namespace

int cmd_solve(const RunConfig& cfg, std::ostream& log) {
    const Solved s = run_solve(cfg, log);
    return s.converged ? kOk : kNotConverged;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
    const ResolvedProblem p = resolve(cfg);
    prepare_output(cfg, p);
    std::unique_ptr<ControlLaw> policy;
    if (!cfg.policy_file.empty()) {
        std::ifstream is(cfg.policy_file);
        if (!is) throw ConfigError(fmt::format("cannot open policy file {}", cfg.policy_file));
        policy = std::make_unique<FeedbackPolicy>(read_policy_csv(is, p.spec.control, p.spec.lipschitz_k));
    } else {
        std::vector<double> u = cfg.initial_control.empty() ? p.spec.control.midpoint() : cfg.initial_control;
        if (!p.spec.control.contains(u)) throw ConfigError("initial control lies outside U");
        policy = std::make_unique<ConstantPolicy>(u);
    }
    SimulationSetup setup;
    setup.t0 = cfg.t0;
    setup.steps = cfg.steps;
    setup.paths = cfg.paths;
    setup.seed = cfg.seed;
    setup.threads = cfg.threads;
    const auto start = std::chrono::steady_clock::now();
    PathEnsemble e = simulate_forward(p.spec, *policy, p.x0, setup);
    backward_regression(p.spec, e, cfg.degree);
    fmt::print(log, "simulate: {} paths x {} steps in {:.2f}s\n", e.paths, e.steps, seconds_since(start));
    for (const auto& w : e.warnings) log << "warning: " << w << '\n';
    {
        auto os = open_out(fs::path(cfg.out_dir) / "summary.csv");
        e.write_summary(os);
    }
    if (cfg.dump_paths) {
        auto os = open_out(fs::path(cfg.out_dir) / "paths.csv");
        e.write_paths(os);
    }
    return kOk;
}

int cmd_verify(const RunConfig& cfg, bool no_solve, std::ostream& log) {
    Solved s = load_or_solve(cfg, no_solve, log);
    const ResolvedProblem& p = s.problem;
    require_grid_problem(p);
    if (no_solve) prepare_output(cfg, p);
    std::vector<CheckLine> checks;

    const Residuals res = pde_residuals(p.spec, s.fields);
    const double worst = std::max(res.v, res.g);
    checks.push_back({"pde_residual", worst, cfg.residual_tol, worst <= cfg.residual_tol});

    auto start = std::chrono::steady_clock::now();
    SimulationSetup setup;
    setup.t0 = cfg.t0;
    setup.steps = cfg.steps;
    setup.paths = cfg.paths;
    setup.seed = cfg.seed;
    setup.threads = cfg.threads;
    PathEnsemble e = simulate_forward(p.spec, s.fields.u_star, p.x0, setup);
    backward_regression(p.spec, e, cfg.degree);
    for (const auto& w : e.warnings) log << "warning: " << w << '\n';
    const CostEstimate cost = summarize(path_costs(p.spec, e, CostSource{}, cfg.threads), cfg.seed);
    const double v0 = s.fields.v.interpolate(cfg.t0, p.x0[0]);
    const double cost_tol = std::max(3.0 * cost.std_error, cfg.cost_rel_tol * std::abs(v0));
    checks.push_back({"cost_match", std::abs(cost.mean - v0), cost_tol, std::abs(cost.mean - v0) <= cost_tol});
    fmt::print(log, "verify: cost estimate in {:.2f}s\n", seconds_since(start));

    start = std::chrono::steady_clock::now();
    const DppOutcome dpp = run_dpp(cfg, s);
    const double gap0 = std::abs(dpp.report.rhs[0].mean - dpp.report.lhs);
    checks.push_back({"dpp_gap", gap0, dpp.allowance, dpp.optimal_gap_ok && dpp.perturbed_ok});
    fmt::print(log, "verify: dpp in {:.2f}s\n", seconds_since(start));

    const ZIdentity zi = z_identity(p.spec, e, s.fields.g);
    checks.push_back({"z_identity", zi.relative, cfg.z_tol, zi.samples > 0 && zi.relative <= cfg.z_tol});

    bool all = true;
    for (const auto& c : checks) all = all && c.pass;
    auto os = open_out(fs::path(cfg.out_dir) / "verify.txt");
    write_checks(os, checks);
    fmt::print(os, "\nresidual_v {:.17g}\nresidual_g {:.17g}\n", res.v, res.g);
    fmt::print(os, "v(t0,x0) {:.17g}\ncost_mean {:.17g}\ncost_se {:.17g}\n", v0, cost.mean, cost.std_error);
    fmt::print(os, "z_mean_abs_deviation {:.17g}\nz_scale {:.17g}\nz_samples {}\n", zi.mean_abs_deviation, zi.scale,
               zi.samples);
    os << "(values in the minimisation form used by the solver)\n\n";
    write_dpp(os, dpp);
    write_checks(log, checks);
    return all ? kOk : kVerificationFailed;
}

int cmd_check_dpp(const RunConfig& cfg, bool no_solve, std::ostream& log) {
    Solved s = load_or_solve(cfg, no_solve, log);
    require_grid_problem(s.problem);
    if (no_solve) prepare_output(cfg, s.problem);
    const DppOutcome d = run_dpp(cfg, s);
    auto os = open_out(fs::path(cfg.out_dir) / "dpp.txt");
    write_dpp(os, d);
    write_dpp(log, d);
    return d.optimal_gap_ok && d.perturbed_ok ? kOk : kVerificationFailed;
}

int cmd_bench(const RunConfig& cfg, const std::string& which, std::ostream& log) {
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    if (which == "viscosity") {
        const bench::KinkReport r = bench::check_kink_example();
        auto os = open_out(dir / "viscosity.txt");
        r.write(os);
        r.write(log);
        return r.ok() ? kOk : kVerificationFailed;
    }
    if (which == "meanvar") {
        bench::MeanVarianceParams mp;
        if (cfg.builtin == "meanvar") mp = *resolve(cfg).meanvar;
        const auto start = std::chrono::steady_clock::now();
        const bench::VarianceComparison c =
            bench::compare_variance(mp, cfg.paths, cfg.steps, cfg.seed, cfg.threads, cfg.degree);
        fmt::print(log, "meanvar: {:.2f}s\n", seconds_since(start));
        auto os = open_out(dir / "meanvar.txt");
        for (std::ostream* out : {static_cast<std::ostream*>(&os), &log}) {
            fmt::print(*out, "direct Var(X_T) {:.17g} se {:.17g}\n", c.direct, c.direct_se);
            fmt::print(*out, "transformed E[int Z^2 ds] {:.17g} se {:.17g}\n", c.transformed, c.transformed_se);
            fmt::print(*out, "gap in combined standard errors {:.6f} (limit 3)\n", c.gap_in_se);
        }
        return c.gap_in_se <= 3.0 ? kOk : kVerificationFailed;
    }
    if (which != "utility") throw ConfigError(fmt::format("unknown bench '{}' (utility, meanvar, viscosity)", which));

    RunConfig run = cfg;
    if (run.builtin != "utility") {
        run.builtin = "utility";
        run.builtin_params.clear();
        run.x0.clear();
        run.x_lo.reset();
        run.x_hi.reset();
    }
    const ResolvedProblem p = resolve(run);
    p.grid.validate();
    const bench::UtilityParams& up = *p.utility;
    const ControlCandidates candidates = ControlCandidates::uniform(p.spec.control, run.candidates);
    SolverOptions opts;
    opts.tol = run.tol;
    opts.max_iter = run.max_iter;
    opts.stepper = run.stepper;
    opts.threads = run.threads;
    const auto start = std::chrono::steady_clock::now();
    auto [fields, report] =
        solve_extended_hjb(p.spec, p.grid, initial_policy(p.spec, p.grid, run.initial_control), candidates, opts);
    fmt::print(log, "bench utility: solve {:.2f}s, {} iterations\n", seconds_since(start), report.iterations);

    const bench::UtilityErrors err = bench::utility_errors(up, fields);
    const GSolution gcf = solve_g(p.spec, bench::closed_form_policy(up, p.spec, p.grid), p.grid, {run.stepper, run.threads});
    const auto [first, last] = inner_nodes(p.grid, 0.6);
    double g_err = 0.0;
    for (std::size_t j = 0; j <= p.grid.nt; ++j) {
        for (std::size_t i = first; i <= last; ++i) {
            g_err = std::max(g_err, std::abs(gcf.g.at(j, i) - bench::closed_form(up, p.grid.t(j), p.grid.x(i)).g));
        }
    }
    const bench::OdeMesh mesh = bench::integrate_odes(up, 1000);
    double ode_err = 0.0;
    for (std::size_t i = 0; i < mesh.t.size(); ++i) {
        const bench::ClosedForm c = bench::closed_form(up, mesh.t[i], 0.0);
        ode_err = std::max({ode_err, std::abs(c.A - mesh.A[i]), std::abs(c.B - mesh.B[i]), std::abs(c.C - mesh.C[i]),
                            std::abs(c.D - mesh.D[i])});
    }
    const double spacing = candidates.spacing();
    std::vector<CheckLine> checks{
        {"v_max_rel_err", err.max_rel_v, 0.02, err.max_rel_v <= 0.02},
        {"pi_max_rel_err", err.max_rel_pi, 0.05, err.max_rel_pi <= 0.05},
        {"pi_x_variation", err.max_pi_variation, 2.0 * spacing, err.max_pi_variation <= 2.0 * spacing},
        {"g_closed_policy_abs_err", g_err, 1e-3, g_err <= 1e-3},
        {"ode_vs_closed_form", ode_err, 1e-8, ode_err <= 1e-8},
    };
    {
        auto os = open_out(dir / "benchmark.csv");
        bench::write_benchmark_csv(os, up, fields);
    }
    write_solve_artifacts(run.out_dir, p, fields, report);
    auto os = open_out(dir / "bench_report.txt");
    write_checks(os, checks);
    fmt::print(os, "\nsolved g max abs err {:.6e}\n", err.max_abs_g);
    os << '\n';
    bench::write_formula_report(os, up);
    write_checks(log, checks);
    bench::write_formula_report(log, up);
    bool all = true;
    for (const auto& c : checks) all = all && c.pass;
    return all ? kOk : kVerificationFailed;
}

}  // namespace fbsde::app
