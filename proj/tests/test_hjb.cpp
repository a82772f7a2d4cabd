#include "support.hpp"

#include "fbsde/bench.hpp"
#include "fbsde/error.hpp"
#include "fbsde/hjb.hpp"
#include "fbsde/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

using namespace fbsde;

namespace {

GridSpec grid(double lo, double hi, std::size_t nx, std::size_t nt) {
    GridSpec g;
    g.x_lo = lo;
    g.x_hi = hi;
    g.nx = nx;
    g.nt = nt;
    return g;
}

testing::Scalar lq(const std::string& extra = "") {
    testing::Scalar s;
    s.mu = "u";
    s.sigma = "0.3";
    s.h = "0.1*y";
    s.f = "0.5*x^2 + 0.1*u^2 + 0.05*y" + extra;
    s.phi = "x";
    s.g_terminal = "x^2";
    s.lo = -2;
    s.hi = 2;
    s.k = 5;
    return s;
}

std::pair<FieldPair, SolveReport> solve(const ProblemSpec& spec, const GridSpec& gr, std::size_t per_axis,
                                        SolverOptions opt = {}) {
    return solve_extended_hjb(spec, gr, initial_policy(spec, gr), ControlCandidates::uniform(spec.control, per_axis),
                              opt);
}

}  // namespace

TEST_CASE("uniform candidates are lexicographic") {
    const ControlCandidates c = ControlCandidates::uniform(ControlBox{{0, -1}, {1, 1}}, 3);
    REQUIRE(c.size() == 9);
    CHECK(c[0][0] == 0.0);
    CHECK(c[0][1] == -1.0);
    CHECK(c[1][1] == 0.0);
    CHECK(c[3][0] == 0.5);
    CHECK(c[8][0] == 1.0);
    CHECK(c[8][1] == 1.0);
    CHECK(c.spacing() == 0.5);
    CHECK(ControlCandidates::uniform(ControlBox::interval(2, 4), 1)[0][0] == 3.0);
}

TEST_CASE("argmin of a quadratic Hamiltonian") {
    testing::Scalar s;
    s.mu = "u";
    s.f = "u^2";
    s.lo = -10;
    s.hi = 10;
    const ProblemSpec spec = testing::scalar_problem(s);
    const HamiltonianMin m =
        hamiltonian_argmin(0.0, 0.0, -4.0, 0.0, 0.0, 0.0, spec, ControlCandidates::uniform(spec.control, 2001));
    const ControlCandidates c = ControlCandidates::uniform(spec.control, 2001);
    CHECK(c[m.index][0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.value == doctest::Approx(-4.0).epsilon(1e-12));
}

TEST_CASE("ties go to the smallest candidate") {
    testing::Scalar s;
    s.mu = "u*0";
    s.sigma = "0.5";
    s.f = "x";
    s.lo = -1;
    s.hi = 1;
    const ProblemSpec spec = testing::scalar_problem(s);
    const HamiltonianMin m =
        hamiltonian_argmin(0.3, 0.7, 1.5, -2.0, 0.0, 0.0, spec, ControlCandidates::uniform(spec.control, 11));
    CHECK(m.index == 0);
}

TEST_CASE("utility Hamiltonian is minimised at the closed-form fraction") {
    const bench::UtilityParams p;
    const ProblemSpec spec = bench::utility_problem(p);
    const ControlCandidates c = ControlCandidates::uniform(spec.control, 2501);
    for (double t : {0.0, 0.4, 0.9}) {
        for (double x : {0.5, 1.0, 1.7}) {
            const auto cf = bench::closed_form(p, t, x);
            const double v = -cf.v;  // minimisation form
            const double z = p.sigma * cf.pi_star * cf.C;
            const HamiltonianMin m = hamiltonian_argmin(t, x, cf.A * v, cf.A * cf.A * v, cf.g, z, spec, c);
            CHECK(c[m.index][0] == doctest::Approx(cf.pi_star).epsilon(1e-3));
        }
    }
}

TEST_CASE("projection examples") {
    std::vector<double> ok{0.0, 0.5, 1.0, 0.8};
    const std::vector<double> before = ok;
    lipschitz_project(ok, 1.0, 1.0, -5, 5);
    CHECK(ok == before);

    std::vector<double> flat{0, 5, 0};
    lipschitz_project(flat, 1.0, 0.0, -10, 10);
    CHECK(flat[0] == flat[1]);
    CHECK(flat[1] == flat[2]);

    std::vector<double> spike{0, 10, 0};
    lipschitz_project(spike, 1.0, 1.0, -10, 10);
    CHECK(std::abs(spike[1] - spike[0]) <= 1.0);
    CHECK(std::abs(spike[2] - spike[1]) <= 1.0);
}

TEST_CASE("projection bound, range and idempotence on random slices") {
    rng::Stream s(3, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 2 + static_cast<std::size_t>(s.uniform() * 60.0);
        const double dx = s.uniform(0.01, 1.0);
        const double k = trial % 10 == 0 ? 0.0 : s.uniform(0.0, 5.0);
        const double lo = s.uniform(-3, 0), hi = s.uniform(0, 3);
        std::vector<double> u(n);
        for (auto& v : u) v = s.uniform(lo - 1.0, hi + 1.0);
        lipschitz_project(u, dx, k, lo, hi);
        for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(u[i] >= lo);
            REQUIRE(u[i] <= hi);
            if (i + 1 < n) REQUIRE(std::abs(u[i + 1] - u[i]) <= k * dx + 1e-12);
        }
        std::vector<double> again = u;
        lipschitz_project(again, dx, k, lo, hi);
        REQUIRE(again == u);
    }
}

TEST_CASE("steering a linear terminal cost") {
    testing::Scalar s;
    s.mu = "u";
    s.sigma = "0.5";
    s.phi = "x";
    s.g_terminal = "x";
    s.lo = -1;
    s.hi = 1;
    const ProblemSpec spec = testing::scalar_problem(s);
    const GridSpec gr = grid(-3, 3, 61, 100);
    const auto [f, report] = solve(spec, gr, 21);
    CHECK(report.converged);
    const auto [first, last] = inner_nodes(gr, 0.6);
    for (std::size_t j = 0; j <= gr.nt; ++j) {
        for (std::size_t i = first; i <= last; ++i) {
            const double exact = gr.x(i) - (gr.t_end - gr.t(j));
            REQUIRE(std::abs(f.v.at(j, i) - exact) <= 0.01 * std::max(1.0, std::abs(exact)));
            if (j < gr.nt) REQUIRE(f.u_star.value(j, i) == -1.0);
        }
    }
}

TEST_CASE("huge tolerance stops after one iteration") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    SolverOptions opt;
    opt.tol = 1e9;
    const auto [f, report] = solve(spec, grid(-2, 2, 41, 100), 41, opt);
    CHECK(report.iterations == 1);
    CHECK(report.converged);
}

TEST_CASE("iteration cap reports non-convergence") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    SolverOptions opt;
    opt.tol = 0.0;
    opt.max_iter = 2;
    const auto [f, report] = solve(spec, grid(-2, 2, 41, 100), 41, opt);
    CHECK(report.iterations == 2);
    CHECK_FALSE(report.converged);
    CHECK(f.v.all_finite());
    opt.max_iter = 0;
    CHECK_THROWS_AS(solve(spec, grid(-2, 2, 41, 100), 41, opt), ConfigError);
}

TEST_CASE("terminal conditions are exact and the policy is admissible") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    const GridSpec gr = grid(-2, 2, 41, 100);
    for (Stepper st : {Stepper::explicit_euler, Stepper::implicit}) {
        SolverOptions opt;
        opt.stepper = st;
        const auto [f, report] = solve(spec, gr, 41, opt);
        CHECK(report.converged);
        for (std::size_t i = 0; i < gr.nx; ++i) {
            CHECK(f.v.at(gr.nt, i) == spec.cost_terminal1(gr.x(i)));
            CHECK(f.g.at(gr.nt, i) == spec.bsde_terminal1(gr.x(i)));
        }
        CHECK_NOTHROW(f.u_star.validate());
        CHECK(f.u_star.lipschitz_excess() <= 1e-12);
        CHECK(f.u_star.in_box());
    }
}

TEST_CASE("single control point reduces to the linear equation") {
    testing::Scalar s;
    s.mu = "0.2*u - 0.1*x";
    s.sigma = "0.3 + 0.1*tanh(x)";
    s.h = "0.3*x";
    s.f = "0.5*x + t";
    s.phi = "x";
    s.g_terminal = "tanh(x)";
    s.lo = 0.5;
    s.hi = 0.5;
    const ProblemSpec spec = testing::scalar_problem(s);
    const GridSpec gr = grid(-2, 2, 41, 100);
    for (Stepper st : {Stepper::explicit_euler, Stepper::implicit}) {
        SolverOptions opt;
        opt.stepper = st;
        const auto [f, report] = solve(spec, gr, 1, opt);

        // independent march of v_t + mu v_x + 1/2 sigma^2 v_xx + f = 0
        std::vector<double> next(gr.nx), cur(gr.nx), mu(gr.nx), sig(gr.nx), src(gr.nx);
        for (std::size_t i = 0; i < gr.nx; ++i) next[i] = std::tanh(gr.x(i));
        const double u = 0.5;
        double err = 0.0;
        for (std::size_t j = gr.nt; j-- > 0;) {
            const double t = gr.t(j);
            for (std::size_t i = 0; i < gr.nx; ++i) {
                const double x = gr.x(i);
                mu[i] = 0.2 * u - 0.1 * x;
                sig[i] = 0.3 + 0.1 * std::tanh(x);
                src[i] = 0.5 * x + t;
            }
            linear_step(st, next, mu, sig, src, gr.dt(), gr.dx(), cur);
            for (std::size_t i = 0; i < gr.nx; ++i) err = std::max(err, std::abs(cur[i] - f.v.at(j, i)));
            next = cur;
        }
        CHECK(err <= 1e-12);
    }
}

TEST_CASE("adding a constant to f leaves the policy unchanged") {
    const GridSpec gr = grid(-2, 2, 41, 100);
    const auto [a, ra] = solve(testing::scalar_problem(lq()), gr, 41);
    const auto [b, rb] = solve(testing::scalar_problem(lq(" + 5")), gr, 41);
    CHECK(a.u_star.values() == b.u_star.values());
    for (std::size_t j = 0; j <= gr.nt; j += 10) {
        const double shift = 5.0 * (gr.t_end - gr.t(j));
        CHECK(b.v.at(j, 20) - a.v.at(j, 20) == doctest::Approx(shift).epsilon(1e-9));
    }
}

TEST_CASE("solves are deterministic") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    const GridSpec gr = grid(-2, 2, 41, 100);
    SolverOptions one;
    SolverOptions three;
    three.threads = 3;
    const auto [a, ra] = solve(spec, gr, 41, one);
    const auto [b, rb] = solve(spec, gr, 41, one);
    const auto [c, rc] = solve(spec, gr, 41, three);
    for (const FieldPair* other : {&b, &c}) {
        CHECK(a.v.values() == other->v.values());
        CHECK(a.g.values() == other->g.values());
        CHECK(a.z.values() == other->z.values());
        CHECK(a.u_star.values() == other->u_star.values());
    }
    std::ostringstream wa, wb;
    ra.write(wa);
    rb.write(wb);
    CHECK(wa.str() == wb.str());
}

TEST_CASE("residuals are small for a converged solve") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    const auto [f, report] = solve(spec, grid(-2, 2, 81, 400), 81);
    CHECK(report.residuals.v < 0.05);
    CHECK(report.residuals.g < 0.05);
}

TEST_CASE("policy CSV round trip") {
    const ProblemSpec spec = testing::scalar_problem(lq());
    const auto [f, report] = solve(spec, grid(-2, 2, 41, 100), 41);
    std::stringstream ss;
    write_policy_csv(ss, f.u_star);
    const FeedbackPolicy back = read_policy_csv(ss, spec.control, spec.lipschitz_k);
    CHECK(back.values() == f.u_star.values());
    CHECK(back.times() == f.u_star.times());
    CHECK(back.nodes() == f.u_star.nodes());
}
