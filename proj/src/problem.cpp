#include "fbsde/problem.hpp"

#include "fbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <fmt/format.h>

namespace fbsde {

bool ControlBox::contains(std::span<const double> u) const {
    if (u.size() != lower.size()) return false;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(u[i] >= lower[i] && u[i] <= upper[i])) return false;
    }
    return true;
}

void ControlBox::clamp(std::span<double> u) const {
    for (std::size_t i = 0; i < u.size() && i < lower.size(); ++i) {
        u[i] = std::clamp(u[i], lower[i], upper[i]);
    }
}

std::vector<double> ControlBox::midpoint() const {
    std::vector<double> mid(lower.size());
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (lower[i] + upper[i]);
    return mid;
}

bool ControlBox::is_point() const {
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (lower[i] != upper[i]) return false;
    }
    return true;
}

void ProblemSpec::validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon T must be positive");
    if (dims.n < 1 || dims.m < 1 || dims.k < 1) throw ConfigError("dimensions n, m, k must be >= 1");
    if (control.lower.size() != static_cast<std::size_t>(dims.k) ||
        control.upper.size() != static_cast<std::size_t>(dims.k)) {
        throw ConfigError(fmt::format("control box must have {} coordinates", dims.k));
    }
    for (std::size_t i = 0; i < control.lower.size(); ++i) {
        if (!(control.lower[i] <= control.upper[i])) {
            throw ConfigError(fmt::format("control box is empty in coordinate {}", i + 1));
        }
    }
    if (!(lipschitz_k >= 0.0)) throw ConfigError("lipschitz_k must be nonnegative");
    if (!drift || !vol || !driver || !running_cost || !bsde_terminal || !cost_terminal) {
        throw ConfigError("every coefficient function must be set");
    }
}

double ProblemSpec::drift1(double t, double x, std::span<const double> u) const {
    double out = 0.0;
    drift(t, std::span<const double>(&x, 1), u, std::span<double>(&out, 1));
    return out;
}

double ProblemSpec::vol1(double t, double x, std::span<const double> u) const {
    double out = 0.0;
    vol(t, std::span<const double>(&x, 1), u, std::span<double>(&out, 1));
    return out;
}

double ProblemSpec::driver1(double t, double x, double y, double z, std::span<const double> u) const {
    return driver(t, std::span<const double>(&x, 1), y, std::span<const double>(&z, 1), u);
}

double ProblemSpec::running_cost1(double t, double x, double y, double z, std::span<const double> u) const {
    return running_cost(t, std::span<const double>(&x, 1), y, std::span<const double>(&z, 1), u);
}

double ProblemSpec::bsde_terminal1(double x) const { return bsde_terminal(std::span<const double>(&x, 1)); }

double ProblemSpec::cost_terminal1(double x) const { return cost_terminal(std::span<const double>(&x, 1)); }

Expr parse_coefficient(std::string_view source, const std::vector<std::string>& allowed) {
    return parse_expression(source, allowed);
}

namespace {

std::vector<Expr> compile_all(const std::vector<std::string>& sources, std::size_t expected,
                              const std::vector<std::string>& vars, const char* what) {
    if (sources.size() != expected) {
        throw ConfigError(fmt::format("{} needs {} entries, got {}", what, expected, sources.size()));
    }
    std::vector<Expr> out;
    out.reserve(sources.size());
    for (const auto& s : sources) out.push_back(parse_coefficient(s, vars));
    return out;
}

}  // namespace

ProblemSpec problem_from_expressions(const ExpressionSet& exprs, Dimensions dims, double horizon,
                                     ControlBox control, double lipschitz_k, std::string name) {
    const auto vars_txu = variables_for("txu", dims.n, dims.m, dims.k);
    const auto vars_txyzu = variables_for("txyzu", dims.n, dims.m, dims.k);
    const auto vars_x = variables_for("x", dims.n, dims.m, dims.k);
    const auto vars_y = variables_for("y", dims.n, dims.m, dims.k);

    auto mu = std::make_shared<const std::vector<Expr>>(
        compile_all(exprs.mu, static_cast<std::size_t>(dims.n), vars_txu, "mu"));
    auto sigma = std::make_shared<const std::vector<Expr>>(
        compile_all(exprs.sigma, static_cast<std::size_t>(dims.n * dims.m), vars_txu, "sigma"));
    auto h = std::make_shared<const Expr>(parse_coefficient(exprs.h, vars_txyzu));
    auto f = std::make_shared<const Expr>(parse_coefficient(exprs.f, vars_txyzu));
    auto phi = std::make_shared<const Expr>(parse_coefficient(exprs.phi, vars_x));
    auto g_term = std::make_shared<const Expr>(parse_coefficient(exprs.g_terminal, vars_x));

    ProblemSpec spec;
    spec.name = std::move(name);
    spec.dims = dims;
    spec.horizon = horizon;
    spec.control = std::move(control);
    spec.lipschitz_k = lipschitz_k;

    auto vector_fn = [](std::shared_ptr<const std::vector<Expr>> entries) {
        return [entries](double t, std::span<const double> x, std::span<const double> u, std::span<double> out) {
            const EvalPoint p{t, x, 0.0, {}, u};
            for (std::size_t i = 0; i < entries->size(); ++i) out[i] = (*entries)[i].evaluate(p);
        };
    };
    spec.drift = vector_fn(mu);
    spec.vol = vector_fn(sigma);
    auto driver_fn = [](std::shared_ptr<const Expr> e) {
        return [e](double t, std::span<const double> x, double y, std::span<const double> z,
                   std::span<const double> u) { return e->evaluate(EvalPoint{t, x, y, z, u}); };
    };
    spec.driver = driver_fn(h);
    spec.running_cost = driver_fn(f);
    auto terminal_fn = [](std::shared_ptr<const Expr> e) {
        return [e](std::span<const double> x) { return e->evaluate(EvalPoint{0.0, x}); };
    };
    spec.bsde_terminal = terminal_fn(phi);
    spec.cost_terminal = terminal_fn(g_term);

    if (exprs.gamma) {
        auto scalar_fn = [&](const std::string& src) -> ScalarFn {
            auto e = std::make_shared<const Expr>(parse_coefficient(src, vars_y));
            return [e](double y) { return e->evaluate(EvalPoint{0.0, {}, y}); };
        };
        GammaTerm gamma;
        gamma.value = scalar_fn(*exprs.gamma);
        if (exprs.gamma_y) gamma.first = scalar_fn(*exprs.gamma_y);
        if (exprs.gamma_yy) gamma.second = scalar_fn(*exprs.gamma_yy);
        spec.gamma = std::move(gamma);
    }
    spec.validate();
    return spec;
}

ProblemSpec transform_gamma(const ProblemSpec& spec) {
    if (!spec.gamma) throw ConfigError("transform_gamma: problem has no gamma term");

    constexpr double step = 1e-5;
    const GammaTerm gamma = *spec.gamma;
    ScalarFn g1 = gamma.first;
    if (!g1) {
        g1 = [v = gamma.value](double y) { return (v(y + step) - v(y - step)) / (2.0 * step); };
    }
    ScalarFn g2 = gamma.second;
    if (!g2) {
        g2 = [v = gamma.value](double y) {
            return (v(y + step) - 2.0 * v(y) + v(y - step)) / (step * step);
        };
    }

    ProblemSpec out = spec;
    out.gamma.reset();
    out.running_cost = [f = spec.running_cost, h = spec.driver, g1, g2](
                           double t, std::span<const double> x, double y, std::span<const double> z,
                           std::span<const double> u) {
        double zz = 0.0;
        for (double zi : z) zz += zi * zi;
        return f(t, x, y, z, u) + h(t, x, y, z, u) * g1(y) - 0.5 * zz * g2(y);
    };
    out.cost_terminal = [g = spec.cost_terminal, phi = spec.bsde_terminal, v = gamma.value](
                            std::span<const double> x) { return g(x) + v(phi(x)); };
    return out;
}

ProblemSpec resolve_gamma(const ProblemSpec& spec) {
    return spec.gamma ? transform_gamma(spec) : spec;
}

}  // namespace fbsde
