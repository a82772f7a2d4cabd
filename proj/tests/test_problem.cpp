#include "support.hpp"

#include "fbsde/assumptions.hpp"
#include "fbsde/error.hpp"
#include "fbsde/expr.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

using namespace fbsde;

namespace {

const std::vector<std::string> kAll = variables_for("txyzu", 1, 1, 1);

double eval(const Expr& e, double t, double x, double y = 0, double z = 0, double u = 0) {
    return e.evaluate({t, {&x, 1}, y, {&z, 1}, {&u, 1}});
}

// Random expression over every production of the grammar.
Expr random_tree(rng::Stream& s, int depth) {
    using Op = Expr::Op;
    const double pick = s.uniform();
    if (depth == 0 || pick < 0.2) {
        if (s.uniform() < 0.4) return Expr::constant(std::round(s.uniform(-50, 50)) / 8.0);
        const auto slot = static_cast<VarSlot>(static_cast<int>(s.uniform() * 5.0) % 5);
        return Expr::variable(slot);
    }
    static const Op unary[] = {Op::neg, Op::exp, Op::log, Op::sqrt, Op::abs, Op::tanh};
    static const Op binary[] = {Op::add, Op::sub, Op::mul, Op::div, Op::pow, Op::min, Op::max};
    if (pick < 0.45) return Expr::unary(unary[static_cast<int>(s.uniform() * 6.0) % 6], random_tree(s, depth - 1));
    return Expr::binary(binary[static_cast<int>(s.uniform() * 7.0) % 7], random_tree(s, depth - 1),
                        random_tree(s, depth - 1));
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST_CASE("identity expression") {
    const Expr e = parse_expression("x", {"t", "x"});
    CHECK(eval(e, 0.0, 3.0) == 3.0);
}

TEST_CASE("z*z evaluates the squared gradient") {
    const Expr e = parse_expression("z*z", kAll);
    CHECK(eval(e, 0, 0, 0, 2.0) == 4.0);
}

TEST_CASE("exponential utility expression") {
    const Expr e = parse_expression("-(1/1)*exp(-1*x)", kAll);
    CHECK(eval(e, 0, 1.0) == doctest::Approx(-0.36787944117144233).epsilon(1e-15));
}

TEST_CASE("precedence and associativity") {
    CHECK(eval(parse_expression("2+3*4", kAll), 0, 0) == 14.0);
    CHECK(eval(parse_expression("2^3^2", kAll), 0, 0) == 512.0);
    CHECK(eval(parse_expression("-2^2", kAll), 0, 0) == -4.0);
    CHECK(eval(parse_expression("8/4/2", kAll), 0, 0) == 1.0);
    CHECK(eval(parse_expression("10-4-3", kAll), 0, 0) == 3.0);
    CHECK(eval(parse_expression("max(1, min(5, 3))", kAll), 0, 0) == 3.0);
    CHECK(eval(parse_expression("pow(2, 10)", kAll), 0, 0) == 1024.0);
}

TEST_CASE("parse errors") {
    CHECK_THROWS_AS(parse_expression("x +", kAll), ParseError);
    CHECK_THROWS_AS(parse_expression("foo(x)", kAll), ParseError);
    CHECK_THROWS_AS(parse_expression("(x", kAll), ParseError);
    try {
        parse_expression("x + u", {"t", "x"});
        FAIL("expected a ParseError");
    } catch (const ParseError& e) {
        CHECK(e.kind() == ParseError::Kind::variable_not_allowed);
        CHECK(e.position() == 4);
    }
}

TEST_CASE("render then parse reproduces every random tree") {
    rng::Stream s(2024, 0);
    for (int tree = 0; tree < 300; ++tree) {
        const Expr e = random_tree(s, 4);
        const Expr back = parse_expression(e.to_string(), kAll);
        for (int i = 0; i < 100; ++i) {
            const double t = s.uniform(0, 1), x = s.uniform(-3, 3), y = s.uniform(-3, 3);
            const double z = s.uniform(-3, 3), u = s.uniform(-3, 3);
            const double a = eval(e, t, x, y, z, u);
            const double b = eval(back, t, x, y, z, u);
            INFO(e.to_string());
            REQUIRE(same(a, b));
        }
    }
}

TEST_CASE("gamma transform of the variance problem") {
    ExpressionSet e;
    e.mu = {"0"};
    e.sigma = {"0.2"};
    e.phi = "x";
    e.g_terminal = "x^2";
    e.gamma = "-y^2";
    const ProblemSpec spec = problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(0, 0), 0.0);
    const ProblemSpec tr = transform_gamma(spec);
    const double u = 0.0;
    for (double z : {-1.5, 0.0, 0.3, 2.0}) {
        CHECK(tr.running_cost1(0.3, 0.7, 1.1, z, {&u, 1}) == doctest::Approx(z * z).epsilon(1e-6));
    }
    for (double x : {-2.0, 0.5, 3.0}) CHECK(std::abs(tr.cost_terminal1(x)) < 1e-12);
    CHECK_FALSE(tr.gamma.has_value());
    CHECK_THROWS_AS(transform_gamma(tr), ConfigError);
}

TEST_CASE("zero gamma leaves f and G unchanged") {
    ExpressionSet e;
    e.mu = {"x"};
    e.sigma = {"1"};
    e.h = "y";
    e.f = "x*u + z";
    e.g_terminal = "exp(x)";
    e.gamma = "0";
    const ProblemSpec spec = problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(-1, 1), 1.0);
    const ProblemSpec tr = transform_gamma(spec);
    const double u = 0.4;
    for (double x : {-1.0, 0.2, 2.0}) {
        CHECK(tr.running_cost1(0.1, x, 0.5, 0.7, {&u, 1}) == spec.running_cost1(0.1, x, 0.5, 0.7, {&u, 1}));
        CHECK(tr.cost_terminal1(x) == spec.cost_terminal1(x));
    }
}

TEST_CASE("linear gamma with unit driver") {
    ExpressionSet e;
    e.mu = {"0"};
    e.sigma = {"1"};
    e.h = "1";
    e.phi = "3*x";
    e.g_terminal = "x^2";
    e.gamma = "y";
    e.gamma_y = "1";
    e.gamma_yy = "0";
    const ProblemSpec tr =
        transform_gamma(problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(0, 0), 0.0));
    const double u = 0.0;
    CHECK(tr.running_cost1(0.2, 1.3, -0.4, 0.9, {&u, 1}) == 1.0);
    CHECK(tr.cost_terminal1(2.0) == 4.0 + 6.0);
}

TEST_CASE("numerical gamma derivatives match analytic ones") {
    ExpressionSet e;
    e.mu = {"0"};
    e.sigma = {"1"};
    e.h = "x";
    e.f = "0";
    e.gamma = "exp(y)";
    const ProblemSpec numeric =
        transform_gamma(problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(0, 0), 0.0));
    e.gamma_y = "exp(y)";
    e.gamma_yy = "exp(y)";
    const ProblemSpec exact =
        transform_gamma(problem_from_expressions(e, {1, 1, 1}, 1.0, ControlBox::interval(0, 0), 0.0));
    const double u = 0.0;
    for (double y : {-1.0, 0.0, 0.8}) {
        CHECK(numeric.running_cost1(0, 0.5, y, 0.6, {&u, 1}) ==
              doctest::Approx(exact.running_cost1(0, 0.5, y, 0.6, {&u, 1})).epsilon(1e-6));
    }
}

TEST_CASE("invalid problems are rejected") {
    testing::Scalar s;
    s.horizon = 0.0;
    CHECK_THROWS_AS(testing::scalar_problem(s), ConfigError);
    s.horizon = 1.0;
    s.lo = 1.0;
    s.hi = 0.0;
    CHECK_THROWS_AS(testing::scalar_problem(s), ConfigError);
    s.lo = 0.0;
    s.mu = "u + y";  // y is not an argument of the drift
    CHECK_THROWS_AS(testing::scalar_problem(s), ParseError);
}

TEST_CASE("assumption checker: Lipschitz drift") {
    testing::Scalar s;
    s.mu = "2*x";
    AssumptionOptions opt;
    opt.lipschitz_c = 2.1;
    opt.growth_c = 2.1;
    const AssumptionReport r = check_assumptions(testing::scalar_problem(s), 10000, 7, opt);
    const auto& mu = r.coefficient("mu");
    CHECK(mu.lipschitz >= 1.9);
    CHECK(mu.lipschitz <= 2.0 + 1e-12);
    CHECK(mu.lipschitz_ok);
}

TEST_CASE("assumption checker: quadratic terminal fails linear growth") {
    testing::Scalar s;
    s.phi = "x^2";
    AssumptionOptions opt;
    opt.growth_c = 5.0;
    opt.lipschitz_c = 100.0;
    const AssumptionReport r = check_assumptions(testing::scalar_problem(s), 10000, 7, opt);
    const auto& phi = r.coefficient("phi");
    CHECK(phi.growth > 5.0);
    CHECK(phi.growth <= 100.0 / 11.0 + 1e-12);
    CHECK_FALSE(phi.growth_ok);
    CHECK_FALSE(r.all_ok());
}

TEST_CASE("assumption checker: constant policy has no variation") {
    testing::Scalar s;
    s.lo = -1;
    s.hi = 1;
    const ConstantPolicy u({0.3});
    AssumptionOptions opt;
    opt.policy = &u;
    const AssumptionReport r = check_assumptions(testing::scalar_problem(s), 1000, 1, opt);
    REQUIRE_FALSE(r.variation.empty());
    for (const auto& v : r.variation) CHECK(v.total_variation == 0.0);
    CHECK(r.sup_u_at_zero == doctest::Approx(0.3));
}

TEST_CASE("assumption report is reproducible and thread independent") {
    testing::Scalar s;
    s.mu = "tanh(x) + u";
    s.h = "0.5*y - abs(z)";
    s.lo = -1;
    s.hi = 1;
    const ProblemSpec spec = testing::scalar_problem(s);
    AssumptionOptions one;
    AssumptionOptions four;
    four.threads = 4;
    const AssumptionReport a = check_assumptions(spec, 5000, 99, one);
    const AssumptionReport b = check_assumptions(spec, 5000, 99, four);
    REQUIRE(a.coefficients.size() == b.coefficients.size());
    for (std::size_t i = 0; i < a.coefficients.size(); ++i) {
        CHECK(a.coefficients[i].lipschitz == b.coefficients[i].lipschitz);
        CHECK(a.coefficients[i].growth == b.coefficients[i].growth);
    }
    CHECK_THROWS_AS(check_assumptions(spec, 10, 1), ConfigError);
}

TEST_CASE("philox known answers") {
    using rng::Block;
    CHECK(rng::philox4x32({0, 0, 0, 0}, {0, 0}) == Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(rng::philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(rng::philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("normal draws have unit moments") {
    double s1 = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng::normal(5, static_cast<std::uint64_t>(i % 1000), static_cast<std::uint64_t>(i / 1000));
        s1 += z;
        s2 += z * z;
    }
    CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}
