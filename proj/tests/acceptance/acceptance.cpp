// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "fbsde/bench.hpp"
#include "fbsde/grid.hpp"
#include "fbsde/hjb.hpp"
#include "fbsde/mc.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <cstring>
#include <functional>
#include <limits>
#include <vector>

using namespace fbsde;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int n, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, fmt::format("threw: {}", e.what())};
    }
    if (!o.pass) ++failures;
    fmt::print("criterion {}: {}  {}\n", n, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
}

ProblemSpec scalar(const std::string& mu, const std::string& sigma, const std::string& h, const std::string& f,
                   const std::string& phi, const std::string& terminal, double lo, double hi, double k) {
    ExpressionSet e;
    e.mu = {mu};
    e.sigma = {sigma};
    e.h = h;
    e.f = f;
    e.phi = phi;
    e.g_terminal = terminal;
    return problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(lo, hi), k, "acceptance");
}

GridSpec grid(double lo, double hi, std::size_t nx, std::size_t nt) {
    GridSpec g;
    g.x_lo = lo;
    g.x_hi = hi;
    g.nx = nx;
    g.nt = nt;
    return g;
}

// The utility benchmark at its default settings, solved once.
struct Utility {
    bench::UtilityParams params;
    ProblemSpec spec;
    GridSpec grid;
    double x0 = 1.0;
    double spacing = 0.0;
    FieldPair fields;
    SolveReport report;
    double seconds = 0.0;
};

const Utility& utility() {
    static const Utility u = [] {
        Utility out;
        bench::Builtin b = bench::make_builtin("utility", {});
        out.params = *b.utility;
        out.spec = b.spec;
        out.grid = b.grid;
        out.x0 = b.x0;
        const ControlCandidates c = ControlCandidates::uniform(out.spec.control, 101);
        out.spacing = c.spacing();
        const auto start = Clock::now();
        auto [f, r] = solve_extended_hjb(out.spec, out.grid, initial_policy(out.spec, out.grid), c);
        out.seconds = since(start);
        out.fields = std::move(f);
        out.report = std::move(r);
        return out;
    }();
    return u;
}

// Ensemble under u_star with its regressed (Y, Z); shared by criteria 5 and 7.
const PathEnsemble& utility_ensemble() {
    static const PathEnsemble e = [] {
        const Utility& u = utility();
        SimulationSetup s;
        s.paths = 100000;
        s.steps = 256;
        s.seed = 20240601;
        PathEnsemble out = simulate_forward(u.spec, u.fields.u_star, std::vector<double>{u.x0}, s);
        backward_regression(u.spec, out, 3);
        return out;
    }();
    return e;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
               return std::memcmp(&x, &y, sizeof x) == 0;
           });
}

}  // namespace

int main() {
    report(1, [] {
        const Utility& u = utility();
        const auto e = bench::utility_errors(u.params, u.fields);
        const bool ok = e.max_rel_v <= 0.02 && u.seconds <= 60.0;
        return Outcome{ok, fmt::format("max rel err v {:.3e} (<= 2e-2), {} iterations, {:.1f}s (<= 60s)",
                                       e.max_rel_v, u.report.iterations, u.seconds)};
    });

    report(2, [] {
        const Utility& u = utility();
        const auto e = bench::utility_errors(u.params, u.fields);
        const bool ok = e.max_rel_pi <= 0.05 && e.max_pi_variation <= 2.0 * u.spacing;
        return Outcome{ok, fmt::format("sup rel err pi {:.3e} (<= 5e-2), x-variation {:.3e} (<= {:.3e})",
                                       e.max_rel_pi, e.max_pi_variation, 2.0 * u.spacing)};
    });

    report(3, [] {
        const Utility& u = utility();
        const GSolution sol = solve_g(u.spec, bench::closed_form_policy(u.params, u.spec, u.grid), u.grid);
        const auto [first, last] = inner_nodes(u.grid, 0.6);
        double err = 0.0;
        for (std::size_t j = 0; j <= u.grid.nt; ++j) {
            for (std::size_t i = first; i <= last; ++i) {
                const auto c = bench::closed_form(u.params, u.grid.t(j), u.grid.x(i));
                err = std::max(err, std::abs(sol.g.at(j, i) - c.g));
            }
        }
        return Outcome{err <= 1e-3, fmt::format("max abs err g {:.3e} (<= 1e-3)", err)};
    });

    report(4, [] {
        const bench::UtilityParams p;
        const bench::OdeMesh m = bench::integrate_odes(p, 1000);
        double err = 0.0, printed_b = 0.0, printed_d = 0.0;
        for (std::size_t i = 0; i < m.t.size(); ++i) {
            const auto c = bench::closed_form(p, m.t[i], 0.0);
            err = std::max({err, std::abs(m.A[i] - c.A), std::abs(m.B[i] - c.B), std::abs(m.C[i] - c.C),
                            std::abs(m.D[i] - c.D)});
            if (i % 50 == 0) {
                printed_b = std::max(printed_b, std::abs(bench::printed_b_quadrature(p, m.t[i]) - m.B[i]));
                printed_d = std::max(printed_d, std::abs(bench::printed_d_quadrature(p, m.t[i]) - m.D[i]));
            }
        }
        return Outcome{err <= 1e-8, fmt::format("RK4 vs closed form {:.3e} (<= 1e-8); printed B off by {:.1e}, "
                                                "printed D integral off by {:.3e} (sign)",
                                                err, printed_b, printed_d)};
    });

    report(5, [] {
        const Utility& u = utility();
        const PathEnsemble& e = utility_ensemble();
        const CostEstimate c = summarize(path_costs(u.spec, e, CostSource{}), e.seed);
        const double v0 = u.fields.v.interpolate(u.grid.t0, u.x0);
        const double tol = std::max(3.0 * c.std_error, 0.02 * std::abs(v0));
        const double diff = std::abs(c.mean - v0);
        return Outcome{diff <= tol, fmt::format("|J - v(t0,x0)| = {:.3e} (<= {:.3e}); J {:.6f} se {:.2e}, v {:.6f}",
                                                diff, tol, c.mean, c.std_error, v0)};
    });

    report(6, [] {
        const Utility& u = utility();
        const std::vector<double> deltas{-0.4, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.4};
        const auto shifted = shifted_policies(u.fields.u_star, deltas);
        std::vector<const ControlLaw*> cands{&u.fields.u_star};
        for (const auto& p : shifted) cands.push_back(&p);
        SimulationSetup s;
        s.paths = 20000;
        s.steps = 0;
        s.seed = 20240602;
        const double split = 0.5 * (u.grid.t0 + u.grid.t_end);
        const DppReport r = check_dpp(u.spec, u.fields.v, u.fields.g, u.fields.z, u.grid.t0, u.x0, split, cands, s);
        const double se = r.rhs[0].std_error;
        const double gap = r.rhs[0].mean - r.lhs;
        const double allowance = 3.0 * se + 0.01 * std::abs(r.lhs);
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t c = 1; c < r.rhs.size(); ++c) worst = std::min(worst, r.rhs[c].mean - r.rhs[0].mean);
        const bool ok = std::abs(gap) <= allowance && worst >= -3.0 * se;
        return Outcome{ok, fmt::format("optimal gap {:.3e} (|.| <= {:.3e}), min perturbed rhs - optimal {:.3e} "
                                       "(>= {:.3e}), C = {:.2f}",
                                       gap, allowance, worst, -3.0 * se, std::abs(gap) / r.discretization)};
    });

    report(7, [] {
        const Utility& u = utility();
        const ZIdentity z = z_identity(u.spec, utility_ensemble(), u.fields.g, 0.6);
        return Outcome{z.samples > 0 && z.relative <= 0.05,
                       fmt::format("mean |Z - sigma dg/dx| / scale = {:.3e} (<= 5e-2) over {} samples", z.relative,
                                   z.samples)};
    });

    report(8, [] {
        const bench::VarianceComparison c = bench::compare_variance(bench::MeanVarianceParams{}, 100000, 256, 8);
        return Outcome{c.gap_in_se <= 3.0,
                       fmt::format("direct {:.6f} (se {:.1e}), transformed {:.6f} (se {:.1e}), gap {:.2f} se (<= 3)",
                                   c.direct, c.direct_se, c.transformed, c.transformed_se, c.gap_in_se)};
    });

    report(9, [] {
        const auto start = Clock::now();
        const bench::KinkReport r = bench::check_kink_example();
        const double elapsed = since(start);
        const bool ok = r.negative_value == -2.0 && r.positive_value == 2.0 && r.smooth_value == 0.0 &&
                        r.v_is_viscosity && r.u_contradiction && r.v_above_at_kink.lo == -1.0 &&
                        r.v_above_at_kink.hi == 1.0 && r.u_above_at_kink.lo == -3.0 && r.u_above_at_kink.hi == 1.0 &&
                        elapsed < 1e-3;
        return Outcome{ok, fmt::format("values {:g} and {:g}, viscosity {}, {:.1f} us", r.negative_value,
                                       r.positive_value, r.v_is_viscosity, elapsed * 1e6)};
    });

    report(10, [] {
        std::vector<std::string> broken;

        // Lipschitz projection on random slices
        rng::Stream s(10, 0);
        for (int trial = 0; trial < 1000; ++trial) {
            const auto n = 2 + static_cast<std::size_t>(s.uniform() * 60.0);
            const double dx = s.uniform(0.01, 1.0), k = s.uniform(0.0, 5.0);
            const double lo = s.uniform(-3, 0), hi = s.uniform(0, 3);
            std::vector<double> u(n);
            for (auto& v : u) v = s.uniform(lo - 1, hi + 1);
            lipschitz_project(u, dx, k, lo, hi);
            bool ok = true;
            for (std::size_t i = 0; i + 1 < n; ++i) ok = ok && std::abs(u[i + 1] - u[i]) <= k * dx + 1e-12;
            for (double v : u) ok = ok && v >= lo && v <= hi;
            std::vector<double> again = u;
            lipschitz_project(again, dx, k, lo, hi);
            if (!ok || again != u) {
                broken.push_back("projection");
                break;
            }
        }

        // Feynman-Kac reduction
        {
            const ProblemSpec spec = scalar("0.2*u - 0.1*x", "0.3 + 0.1*tanh(x)", "0.3*x", "0.5*x + t", "x",
                                            "tanh(x)", 0.5, 0.5, 1.0);
            const GridSpec gr = grid(-2, 2, 41, 100);
            const auto [f, r] =
                solve_extended_hjb(spec, gr, initial_policy(spec, gr), ControlCandidates::uniform(spec.control, 1));
            std::vector<double> next(gr.nx), cur(gr.nx), mu(gr.nx), sig(gr.nx), src(gr.nx);
            for (std::size_t i = 0; i < gr.nx; ++i) next[i] = std::tanh(gr.x(i));
            double err = 0.0;
            for (std::size_t j = gr.nt; j-- > 0;) {
                for (std::size_t i = 0; i < gr.nx; ++i) {
                    const double x = gr.x(i);
                    mu[i] = 0.2 * 0.5 - 0.1 * x;
                    sig[i] = 0.3 + 0.1 * std::tanh(x);
                    src[i] = 0.5 * x + gr.t(j);
                }
                linear_step(Stepper::explicit_euler, next, mu, sig, src, gr.dt(), gr.dx(), cur);
                for (std::size_t i = 0; i < gr.nx; ++i) err = std::max(err, std::abs(cur[i] - f.v.at(j, i)));
                next = cur;
            }
            if (err > 1e-12) broken.push_back(fmt::format("feynman-kac ({:.1e})", err));
        }

        // comparison for z-free drivers
        {
            const GridSpec gr = grid(-2, 2, 41, 200);
            const ConstantPolicy zero({0.0});
            rng::Stream c(11, 0);
            for (int pair = 0; pair < 100; ++pair) {
                const std::string mu = fmt::format("{:.6f}*tanh(x)", c.uniform(-1, 1));
                const std::string sig = fmt::format("{:.6f}", c.uniform(0.05, 0.4));
                const std::string h = fmt::format("{:.6f}*y + {:.6f}*tanh(x)", c.uniform(-0.5, 0.5), c.uniform(-1, 1));
                const std::string phi = fmt::format("{:.6f}*tanh(x)", c.uniform(-2, 2));
                const ProblemSpec a = scalar(mu, sig, h, "0", phi, "0", 0, 0, 1);
                const ProblemSpec b = scalar(mu, sig, fmt::format("{} + {:.6f}", h, c.uniform(0, 0.5)), "0",
                                             fmt::format("{} + {:.6f}*abs(x)", phi, c.uniform(0, 1)), "0", 0, 0, 1);
                const GSolution ga = solve_g(a, zero, gr), gb = solve_g(b, zero, gr);
                bool ordered = true;
                for (std::size_t q = 0; q < ga.g.values().size(); ++q) {
                    ordered = ordered && ga.g.values()[q] <= gb.g.values()[q] + 1e-12;
                }
                if (!ordered) {
                    broken.push_back("comparison");
                    break;
                }
            }
        }

        // determinism and seed splitting
        {
            const ProblemSpec spec = scalar("u", "0.3", "0.1*y", "0.5*x^2 + 0.1*u^2", "x", "x^2", -2, 2, 5);
            const GridSpec gr = grid(-2, 2, 41, 100);
            const ControlCandidates c = ControlCandidates::uniform(spec.control, 41);
            SolverOptions three;
            three.threads = 3;
            const auto [a, ra] = solve_extended_hjb(spec, gr, initial_policy(spec, gr), c);
            const auto [b, rb] = solve_extended_hjb(spec, gr, initial_policy(spec, gr), c, three);
            if (!same_bits(a.v.values(), b.v.values()) || !same_bits(a.u_star.values(), b.u_star.values())) {
                broken.push_back("solve determinism");
            }
            SimulationSetup one;
            one.paths = 5000;
            one.steps = 50;
            one.seed = 5;
            SimulationSetup four = one;
            four.threads = 4;
            PathEnsemble e1 = simulate_forward(spec, a.u_star, std::vector<double>{0.5}, one);
            PathEnsemble e2 = simulate_forward(spec, a.u_star, std::vector<double>{0.5}, one);
            PathEnsemble e4 = simulate_forward(spec, a.u_star, std::vector<double>{0.5}, four);
            backward_regression(spec, e1);
            backward_regression(spec, e2);
            backward_regression(spec, e4);
            if (!same_bits(e1.x, e2.x) || !same_bits(e1.y, e2.y)) broken.push_back("replay");
            if (!same_bits(e1.x, e4.x) || !same_bits(e1.y, e4.y)) broken.push_back("seed split");
        }

        std::string detail = "projection, Feynman-Kac, comparison, determinism, seed split";
        if (!broken.empty()) {
            detail = "broken:";
            for (const auto& b : broken) detail += " " + b;
        }
        return Outcome{broken.empty(), detail};
    });

    return failures == 0 ? 0 : 1;
}
