#include "fbsde/bench.hpp"

#include "fbsde/error.hpp"
#include "fbsde/mc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace fbsde::bench {

void UtilityParams::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("utility: sigma must be positive");
    if (!(gamma > 0.0)) throw ConfigError("utility: gamma must be positive");
    if (!(horizon > 0.0)) throw ConfigError("utility: T must be positive");
    if (!std::isfinite(r) || !std::isfinite(mu) || !std::isfinite(beta())) {
        throw ConfigError("utility: r, mu and beta must be finite");
    }
}

ClosedForm closed_form(const UtilityParams& p, double t, double x) {
    const double T = p.horizon;
    if (!(t >= 0.0 && t <= T)) throw Error(fmt::format("closed_form: t = {} lies outside [0, {}]", t, T));
    const double beta2 = p.beta() * p.beta();
    ClosedForm c{};
    c.C = std::exp(-p.r * (t - T));
    c.A = -p.gamma * c.C;
    c.D = beta2 * (T - t) / p.gamma;
    const double k = 0.5 * beta2;
    if (k == 0.0) {
        c.B = 1.0 + (T - t);
    } else {
        const double E = std::exp(k * (t - T));
        // (E - E^2)/k written with expm1 so small k keeps its digits.
        c.B = E + E * -std::expm1(k * (t - T)) / k;
    }
    c.v = -(1.0 / p.gamma) * std::exp(c.A * x) * c.B;
    c.g = c.C * x + c.D;
    c.pi_star = (p.mu - p.r) * std::exp(p.r * (t - T)) / (p.gamma * p.sigma * p.sigma);
    return c;
}

OdeMesh integrate_odes(const UtilityParams& p, std::size_t steps) {
    if (steps < 10) throw ConfigError("integrate_odes: steps must be at least 10");
    const double beta2 = p.beta() * p.beta();
    using State = std::array<double, 3>;  // C, D, B
    auto rhs = [&](const State& s) -> State {
        const double A = -p.gamma * s[0];
        return {-p.r * s[0], beta2 * s[0] / A, 0.5 * beta2 * s[2] - std::exp(-p.gamma * s[1])};
    };
    OdeMesh mesh;
    mesh.t.resize(steps + 1);
    mesh.A.resize(steps + 1);
    mesh.B.resize(steps + 1);
    mesh.C.resize(steps + 1);
    mesh.D.resize(steps + 1);
    const double h = -p.horizon / static_cast<double>(steps);
    State s{1.0, 0.0, 1.0};
    auto store = [&](std::size_t i, double t) {
        mesh.t[i] = t;
        mesh.C[i] = s[0];
        mesh.D[i] = s[1];
        mesh.B[i] = s[2];
        mesh.A[i] = -p.gamma * s[0];
    };
    store(steps, p.horizon);
    for (std::size_t i = steps; i-- > 0;) {
        const State k1 = rhs(s);
        State tmp;
        for (int q = 0; q < 3; ++q) tmp[q] = s[q] + 0.5 * h * k1[q];
        const State k2 = rhs(tmp);
        for (int q = 0; q < 3; ++q) tmp[q] = s[q] + 0.5 * h * k2[q];
        const State k3 = rhs(tmp);
        for (int q = 0; q < 3; ++q) tmp[q] = s[q] + h * k3[q];
        const State k4 = rhs(tmp);
        for (int q = 0; q < 3; ++q) s[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        store(i, p.horizon * static_cast<double>(i) / static_cast<double>(steps));
    }
    return mesh;
}

namespace {

template <class F>
double simpson(F&& f, double a, double b, std::size_t n = 2000) {
    if (a == b) return 0.0;
    const double h = (b - a) / static_cast<double>(n);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace

double printed_b_quadrature(const UtilityParams& p, double t) {
    const double T = p.horizon;
    const double k = 0.5 * p.beta() * p.beta();
    return std::exp(k * (t - T)) + simpson([&](double s) { return std::exp(k * (t + s - 2.0 * T)); }, t, T);
}

double printed_d_quadrature(const UtilityParams& p, double t) {
    const double beta2 = p.beta() * p.beta();
    return simpson(
        [&](double s) {
            const double C = std::exp(-p.r * (s - p.horizon));
            return beta2 * C / (-p.gamma * C);
        },
        t, p.horizon);
}

// ---------------------------------------------------------------------------

ProblemSpec utility_problem(const UtilityParams& p, double lipschitz_k) {
    p.validate();
    ProblemSpec s;
    s.name = "utility";
    s.horizon = p.horizon;
    const double r = p.r, premium = p.mu - p.r, sigma = p.sigma, gamma = p.gamma;
    s.drift = [r, premium](double, std::span<const double> x, std::span<const double> u, std::span<double> out) {
        out[0] = r * x[0] + premium * u[0];
    };
    s.vol = [sigma](double, std::span<const double>, std::span<const double> u, std::span<double> out) {
        out[0] = sigma * u[0];
    };
    s.driver = [](double, std::span<const double>, double, std::span<const double>, std::span<const double>) {
        return 0.0;
    };
    // Reward U(y) negated.
    s.running_cost = [gamma](double, std::span<const double>, double y, std::span<const double>,
                             std::span<const double>) { return std::exp(-gamma * y) / gamma; };
    s.bsde_terminal = [](std::span<const double> x) { return x[0]; };
    s.cost_terminal = [gamma](std::span<const double> x) { return std::exp(-gamma * x[0]) / gamma; };
    const double pi_t = p.terminal_pi();
    if (pi_t == 0.0) {
        s.control = ControlBox::interval(-1.0, 1.0);
    } else {
        s.control = ControlBox::interval(std::min(0.0, 2.0 * pi_t), std::max(0.0, 2.0 * pi_t));
    }
    s.lipschitz_k = lipschitz_k;
    s.sense = Sense::maximize;
    return s;
}

GridSpec utility_grid(const UtilityParams& p, double x0, std::size_t nx, std::size_t nt) {
    const double pibar = p.terminal_pi() == 0.0 ? 1.0 : std::abs(p.terminal_pi());
    const double half = 6.0 * p.sigma * std::sqrt(p.horizon) * pibar;
    GridSpec g;
    g.x_lo = x0 - half;
    g.x_hi = x0 + half;
    g.nx = nx;
    g.nt = nt;
    g.t0 = 0.0;
    g.t_end = p.horizon;
    return g;
}

FeedbackPolicy closed_form_policy(const UtilityParams& p, const ProblemSpec& spec, const GridSpec& grid) {
    FeedbackPolicy policy(grid.times(), grid.nodes(), spec.control, spec.lipschitz_k);
    for (std::size_t j = 0; j <= grid.nt; ++j) {
        const double pi = std::clamp(closed_form(p, grid.t(j), 0.0).pi_star, spec.control.lower[0],
                                     spec.control.upper[0]);
        for (std::size_t i = 0; i < grid.nx; ++i) policy.value(j, i) = pi;
    }
    return policy;
}

UtilityErrors utility_errors(const UtilityParams& p, const FieldPair& fields, double inner_fraction,
                             double time_fraction) {
    const GridSpec& grid = fields.v.grid();
    const auto [first, last] = inner_nodes(grid, inner_fraction);
    const double t_max = time_fraction * p.horizon + 1e-12;
    UtilityErrors e;
    for (std::size_t j = 0; j <= grid.nt; ++j) {
        const double t = grid.t(j);
        double lo = fields.u_star.value(j, first), hi = lo;
        for (std::size_t i = first; i <= last; ++i) {
            const ClosedForm c = closed_form(p, t, grid.x(i));
            if (t <= t_max) {
                // The solver works with -v.
                e.max_rel_v = std::max(e.max_rel_v, std::abs(-fields.v.at(j, i) - c.v) / std::abs(c.v));
            }
            e.max_abs_g = std::max(e.max_abs_g, std::abs(fields.g.at(j, i) - c.g));
            const double u = fields.u_star.value(j, i);
            const double scale = c.pi_star != 0.0 ? std::abs(c.pi_star) : 1.0;
            e.max_rel_pi = std::max(e.max_rel_pi, std::abs(u - c.pi_star) / scale);
            lo = std::min(lo, u);
            hi = std::max(hi, u);
        }
        e.max_pi_variation = std::max(e.max_pi_variation, hi - lo);
    }
    return e;
}

void write_benchmark_csv(std::ostream& os, const UtilityParams& p, const FieldPair& fields, double inner_fraction) {
    const GridSpec& grid = fields.v.grid();
    const auto [first, last] = inner_nodes(grid, inner_fraction);
    const std::size_t t_stride = std::max<std::size_t>(1, grid.nt / 16);
    const std::size_t x_stride = std::max<std::size_t>(1, (last - first) / 40);
    os << "t,x,v_closed,v_grid,g_closed,g_grid,pi_closed,pi_grid,abs_err_v,abs_err_g,abs_err_pi\n";
    for (std::size_t j = 0; j <= grid.nt; j += t_stride) {
        for (std::size_t i = first; i <= last; i += x_stride) {
            const double t = grid.t(j), x = grid.x(i);
            const ClosedForm c = closed_form(p, t, x);
            const double v = -fields.v.at(j, i);
            const double g = fields.g.at(j, i);
            const double u = fields.u_star.value(j, i);
            fmt::print(os, "{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", t,
                       x, c.v, v, c.g, g, c.pi_star, u, std::abs(v - c.v), std::abs(g - c.g), std::abs(u - c.pi_star));
        }
    }
}

void write_formula_report(std::ostream& os, const UtilityParams& p) {
    constexpr std::size_t steps = 1000;
    const OdeMesh mesh = integrate_odes(p, steps);
    double b_closed = 0.0, b_printed = 0.0, d_closed = 0.0, d_printed_gap = 0.0;
    for (std::size_t i = 0; i <= steps; i += 10) {
        const double t = mesh.t[i];
        const ClosedForm c = closed_form(p, t, 0.0);
        b_closed = std::max(b_closed, std::abs(c.B - mesh.B[i]));
        b_printed = std::max(b_printed, std::abs(printed_b_quadrature(p, t) - mesh.B[i]));
        d_closed = std::max(d_closed, std::abs(c.D - mesh.D[i]));
        d_printed_gap = std::max(d_printed_gap, std::abs(printed_d_quadrature(p, t) - mesh.D[i]));
    }
    const double d0_printed = printed_d_quadrature(p, 0.0);
    fmt::print(os, "formula check against the RK4 solution of the ODEs ({} steps)\n", steps);
    fmt::print(os, "B closed form (antiderivative)      max abs diff {:.3e}\n", b_closed);
    fmt::print(os, "B printed form (quadrature)         max abs diff {:.3e}\n", b_printed);
    fmt::print(os, "D = beta^2 (T-t)/gamma              max abs diff {:.3e}\n", d_closed);
    fmt::print(os, "D printed integral of beta^2 C/A    max abs diff {:.3e}\n", d_printed_gap);
    fmt::print(os, "D(0): ODE {:.12g}, printed integral {:.12g}\n", mesh.D[0], d0_printed);
    const double tol = 1e-8;
    fmt::print(os, "B printed form {} the ODE\n", b_printed <= tol ? "agrees with" : "DISAGREES with");
    if (d_printed_gap > tol) {
        fmt::print(os,
                   "D printed integral has the opposite sign of the ODE solution (A < 0); "
                   "the closed form beta^2 (T-t)/gamma is used\n");
    } else {
        os << "D printed integral agrees with the ODE\n";
    }
}

// ---------------------------------------------------------------------------

ProblemSpec mean_variance_problem(const MeanVarianceParams& p) {
    if (!(p.sigma >= 0.0) || !(p.horizon > 0.0)) throw ConfigError("meanvar: need sigma >= 0 and T > 0");
    ProblemSpec s;
    s.name = "meanvar";
    s.horizon = p.horizon;
    const double a = p.a, sigma = p.sigma;
    s.drift = [a](double, std::span<const double> x, std::span<const double>, std::span<double> out) {
        out[0] = a * x[0];
    };
    s.vol = [sigma](double, std::span<const double>, std::span<const double>, std::span<double> out) {
        out[0] = sigma;
    };
    auto zero = [](double, std::span<const double>, double, std::span<const double>, std::span<const double>) {
        return 0.0;
    };
    s.driver = zero;
    s.running_cost = zero;
    s.bsde_terminal = [](std::span<const double> x) { return x[0]; };
    s.cost_terminal = [](std::span<const double> x) { return x[0] * x[0]; };
    s.gamma = GammaTerm{[](double y) { return -y * y; }, [](double y) { return -2.0 * y; },
                        [](double) { return -2.0; }};
    s.control = ControlBox::interval(0.0, 0.0);
    s.lipschitz_k = 1.0;
    return s;
}

GridSpec mean_variance_grid(const MeanVarianceParams& p, std::size_t nx, std::size_t nt) {
    const double spread = std::max(p.sigma, 0.05) * std::sqrt(p.horizon) * std::exp(std::abs(p.a) * p.horizon);
    const double centre = p.x0 * std::exp(p.a * p.horizon / 2.0);
    GridSpec g;
    g.x_lo = centre - 6.0 * spread;
    g.x_hi = centre + 6.0 * spread;
    g.nx = nx;
    g.nt = nt;
    g.t_end = p.horizon;
    return g;
}

VarianceComparison compare_variance(const MeanVarianceParams& p, std::size_t paths, std::size_t steps,
                                    std::uint64_t seed, unsigned threads, unsigned degree) {
    const ProblemSpec spec = mean_variance_problem(p);
    const ConstantPolicy zero({0.0});
    const double x0[1] = {p.x0};
    SimulationSetup setup;
    setup.steps = steps;
    setup.paths = paths;
    setup.seed = seed;
    setup.threads = threads;

    VarianceComparison out;
    {
        const PathEnsemble e = simulate_forward(spec, zero, x0, setup);
        std::vector<double> xt(paths);
        for (std::size_t q = 0; q < paths; ++q) xt[q] = e.state(q, steps)[0];
        double mean = 0.0;
        for (double x : xt) mean += x;
        mean /= static_cast<double>(paths);
        double m2 = 0.0, m4 = 0.0;
        for (double x : xt) {
            const double d = (x - mean) * (x - mean);
            m2 += d;
            m4 += d * d;
        }
        const double P = static_cast<double>(paths);
        out.direct = m2 / (P - 1.0);
        m4 /= P;
        out.direct_se = std::sqrt(std::max(0.0, m4 - out.direct * out.direct) / P);
    }
    {
        const ProblemSpec transformed = transform_gamma(spec);
        setup.seed = seed + 1;
        const CostEstimate c = estimate_cost(transformed, zero, x0, setup, CostSource{CostSource::Kind::regression, degree});
        out.transformed = c.mean;
        out.transformed_se = c.std_error;
    }
    const double combined = std::hypot(out.direct_se, out.transformed_se);
    out.gap_in_se = combined > 0.0 ? std::abs(out.direct - out.transformed) / combined : 0.0;
    return out;
}

// ---------------------------------------------------------------------------

Builtin make_builtin(const std::string& name, const std::map<std::string, double>& params) {
    auto take = [&](const std::vector<std::string>& allowed) {
        for (const auto& [key, value] : params) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                throw ConfigError(fmt::format("builtin {}: unknown parameter '{}'", name, key));
            }
            if (!std::isfinite(value)) throw ConfigError(fmt::format("builtin {}: '{}' is not finite", name, key));
        }
    };
    auto get = [&](const char* key, double fallback) {
        const auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    };
    Builtin b;
    if (name == "utility") {
        take({"r", "mu", "sigma", "gamma", "T", "x0", "lipschitz_k"});
        UtilityParams p;
        p.r = get("r", p.r);
        p.mu = get("mu", p.mu);
        p.sigma = get("sigma", p.sigma);
        p.gamma = get("gamma", p.gamma);
        p.horizon = get("T", p.horizon);
        b.x0 = get("x0", 1.0);
        b.spec = utility_problem(p, get("lipschitz_k", 1.0));
        b.grid = utility_grid(p, b.x0);
        b.utility = p;
    } else if (name == "meanvar") {
        take({"a", "sigma", "x0", "T"});
        MeanVarianceParams p;
        p.a = get("a", p.a);
        p.sigma = get("sigma", p.sigma);
        p.x0 = get("x0", p.x0);
        p.horizon = get("T", p.horizon);
        b.x0 = p.x0;
        b.spec = mean_variance_problem(p);
        b.grid = mean_variance_grid(p);
        b.meanvar = p;
    } else {
        throw ConfigError(fmt::format("unknown builtin problem '{}' (expected utility or meanvar)", name));
    }
    return b;
}

// ---------------------------------------------------------------------------

PiecewiseLinear1D::PiecewiseLinear1D(std::vector<double> breakpoints, std::vector<double> values)
    : xs_(std::move(breakpoints)), ys_(std::move(values)) {
    if (xs_.size() < 2 || xs_.size() != ys_.size()) {
        throw Error("piecewise-linear function needs at least two breakpoints and one value each");
    }
    for (std::size_t i = 0; i + 1 < xs_.size(); ++i) {
        if (!(xs_[i] < xs_[i + 1])) throw Error("breakpoints must be strictly increasing");
    }
}

std::size_t PiecewiseLinear1D::segment(double x) const {
    if (!(x >= xs_.front() && x <= xs_.back())) {
        throw Error(fmt::format("x = {} lies outside [{}, {}]", x, xs_.front(), xs_.back()));
    }
    const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    const auto s = static_cast<std::size_t>(it - xs_.begin());
    return std::min(s, xs_.size() - 1) - 1;
}

double PiecewiseLinear1D::operator()(double x) const {
    const std::size_t s = segment(x);
    const double w = (x - xs_[s]) / (xs_[s + 1] - xs_[s]);
    return ys_[s] + w * (ys_[s + 1] - ys_[s]);
}

double PiecewiseLinear1D::right_slope(double x) const {
    std::size_t s = segment(x);
    if (x == xs_.back()) s = xs_.size() - 2;
    return (ys_[s + 1] - ys_[s]) / (xs_[s + 1] - xs_[s]);
}

double PiecewiseLinear1D::left_slope(double x) const {
    std::size_t s = segment(x);
    if (s > 0 && x == xs_[s]) --s;
    return (ys_[s + 1] - ys_[s]) / (xs_[s + 1] - xs_[s]);
}

bool PiecewiseLinear1D::is_breakpoint(double x) const { return std::binary_search(xs_.begin(), xs_.end(), x); }

Subdifferential subdiff_interval(const PiecewiseLinear1D& w, double x) {
    const double a = w.left_slope(x);
    const double b = w.right_slope(x);
    const bool interior_kink = w.is_breakpoint(x) && x > w.lower() && x < w.upper() && a != b;
    if (!interior_kink) {
        const double slope = x == w.lower() ? b : a;
        return {Interval::point(slope), Interval::point(slope)};
    }
    Subdifferential d;
    d.above = b <= a ? Interval{b, a, false} : Interval::none();
    d.below = a <= b ? Interval{a, b, false} : Interval::none();
    return d;
}

namespace {

double eikonal(double p) { return 1.0 - std::abs(p); }
double first_equation(double p, double q) { return 2.0 - std::abs(p) - q; }

// 1 - |p| >= 0 over the from-above set and <= 0 over the from-below set.
bool eikonal_viscosity_at(const PiecewiseLinear1D& w, double x) {
    const Subdifferential d = subdiff_interval(w, x);
    bool ok = true;
    if (!d.above.empty) {
        // 1 - |p| is concave, so its minimum over an interval sits at an end.
        ok = ok && eikonal(d.above.lo) >= 0.0 && eikonal(d.above.hi) >= 0.0;
    }
    if (!d.below.empty) {
        const double nearest = std::clamp(0.0, d.below.lo, d.below.hi);
        ok = ok && eikonal(nearest) <= 0.0;
    }
    return ok;
}

}  // namespace

KinkReport check_kink_example() {
    const PiecewiseLinear1D v({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
    const PiecewiseLinear1D u({0.0, 1.0, 2.0}, {2.0, 3.0, 0.0});
    KinkReport r;
    r.v_above_at_kink = subdiff_interval(v, 1.0).above;
    r.u_above_at_kink = subdiff_interval(u, 1.0).above;

    r.v_is_viscosity = v(0.0) == 0.0 && v(2.0) == 0.0;
    for (double x : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75}) {
        r.v_is_viscosity = r.v_is_viscosity && eikonal_viscosity_at(v, x);
    }
    r.smooth_value = eikonal(subdiff_interval(v, 0.5).above.lo);

    // Sub-solution test of the first equation at x = 1: the minimum of
    // 2 - |p| - q over the box of touching derivatives is at a corner.
    const Interval& P = r.u_above_at_kink;
    const Interval& Q = r.v_above_at_kink;
    double lowest = first_equation(P.lo, Q.lo);
    for (double p : {P.lo, P.hi}) {
        for (double q : {Q.lo, Q.hi}) lowest = std::min(lowest, first_equation(p, q));
    }
    r.negative_value = P.contains(-3.0) && Q.contains(1.0) ? first_equation(-3.0, 1.0) : lowest;
    r.positive_value = P.contains(0.0) && Q.contains(0.0) ? first_equation(0.0, 0.0) : 0.0;
    r.u_contradiction = lowest < 0.0 && r.negative_value == lowest && r.positive_value > 0.0;
    return r;
}

bool KinkReport::ok() const {
    return v_is_viscosity && u_contradiction && negative_value == -2.0 && positive_value == 2.0 &&
           smooth_value == 0.0;
}

void KinkReport::write(std::ostream& os) const {
    auto show = [](const Interval& i) { return i.empty ? std::string("empty") : fmt::format("[{}, {}]", i.lo, i.hi); };
    fmt::print(os, "v~ from-above derivatives at x=1: {}\n", show(v_above_at_kink));
    fmt::print(os, "u~ from-above derivatives at x=1: {}\n", show(u_above_at_kink));
    fmt::print(os, "v~ viscosity solution of 1 - |v'| = 0: {}\n", v_is_viscosity ? "yes" : "no");
    fmt::print(os, "1 - |v~'(0.5)| = {}\n", smooth_value);
    fmt::print(os, "2 - |p| - q at (p, q) = (-3, 1): {}\n", negative_value);
    fmt::print(os, "2 - |p| - q at (p, q) = (0, 0): {}\n", positive_value);
    fmt::print(os, "u~ fails the sub-solution inequality while admitting a positive value: {}\n",
               u_contradiction ? "yes" : "no");
}

}  // namespace fbsde::bench
