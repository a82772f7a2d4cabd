#include "fbsde/grid.hpp"

#include "fbsde/error.hpp"
#include "fbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace fbsde {

// ---------------------------------------------------------------------------
// GridSpec / ScalarField

std::vector<double> GridSpec::nodes() const {
    std::vector<double> out(nx);
    for (std::size_t i = 0; i < nx; ++i) out[i] = x(i);
    return out;
}

std::vector<double> GridSpec::times() const {
    std::vector<double> out(nt + 1);
    for (std::size_t j = 0; j <= nt; ++j) out[j] = t(j);
    return out;
}

void GridSpec::validate() const {
    if (nx < 3) throw ConfigError("grid too small: nx must be at least 3");
    if (nt < 1) throw ConfigError("grid needs at least one time step");
    if (!(x_lo < x_hi) || !std::isfinite(x_lo) || !std::isfinite(x_hi)) {
        throw ConfigError("grid bounds must satisfy x_lo < x_hi");
    }
    if (!(t0 < t_end) || !(t0 >= 0.0)) throw ConfigError("grid times must satisfy 0 <= t0 < T");
}

ScalarField::ScalarField(GridSpec grid, double fill) : grid_(grid), values_((grid.nt + 1) * grid.nx, fill) {}

double ScalarField::interpolate_slice(std::size_t j, double x) const {
    const double dx = grid_.dx();
    const double s = std::clamp((x - grid_.x_lo) / dx, 0.0, static_cast<double>(grid_.nx - 1));
    const auto i = std::min(static_cast<std::size_t>(s), grid_.nx - 2);
    const double w = s - static_cast<double>(i);
    return at(j, i) + w * (at(j, i + 1) - at(j, i));
}

double ScalarField::interpolate(double t, double x) const {
    const double s = std::clamp((t - grid_.t0) / grid_.dt(), 0.0, static_cast<double>(grid_.nt));
    const auto j = std::min(static_cast<std::size_t>(s), grid_.nt - 1);
    const double w = s - static_cast<double>(j);
    const double a = interpolate_slice(j, x);
    if (w == 0.0) return a;
    const double b = interpolate_slice(j + 1, x);
    return a + w * (b - a);
}

bool ScalarField::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ScalarField::write_csv(std::ostream& os, double scale) const {
    os << "t,x,value\n";
    for (std::size_t j = 0; j <= grid_.nt; ++j) {
        const double t = grid_.t(j);
        for (std::size_t i = 0; i < grid_.nx; ++i) {
            fmt::print(os, "{:.17g},{:.17g},{:.17g}\n", t, grid_.x(i), scale * at(j, i));
        }
    }
}

namespace {

std::vector<std::vector<double>> read_numeric_csv(std::istream& is, std::size_t min_columns,
                                                  std::string& header) {
    if (!std::getline(is, header)) throw Error("empty CSV input");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw Error(fmt::format("CSV line {}: bad number '{}'", lineno, cell));
            }
        }
        if (row.size() < min_columns) throw Error(fmt::format("CSV line {}: too few columns", lineno));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

ScalarField ScalarField::read_csv(std::istream& is, double scale) {
    std::string header;
    const auto rows = read_numeric_csv(is, 3, header);
    if (header != "t,x,value") throw Error("field CSV must start with header t,x,value");
    if (rows.empty()) throw Error("field CSV has no rows");

    std::size_t nx = 0;
    while (nx < rows.size() && rows[nx][0] == rows[0][0]) ++nx;
    if (nx < 3 || rows.size() % nx != 0) throw Error("field CSV does not describe a full grid");
    const std::size_t slices = rows.size() / nx;
    if (slices < 2) throw Error("field CSV needs at least two time slices");

    GridSpec grid;
    grid.x_lo = rows.front()[1];
    grid.x_hi = rows[nx - 1][1];
    grid.nx = nx;
    grid.nt = slices - 1;
    grid.t0 = rows.front()[0];
    grid.t_end = rows.back()[0];
    grid.validate();

    ScalarField field(grid);
    const double tol_x = 1e-9 * std::max(1.0, grid.x_hi - grid.x_lo);
    const double tol_t = 1e-9 * std::max(1.0, grid.t_end);
    for (std::size_t j = 0; j < slices; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            const auto& r = rows[j * nx + i];
            if (std::abs(r[0] - grid.t(j)) > tol_t || std::abs(r[1] - grid.x(i)) > tol_x) {
                throw Error(fmt::format("field CSV row {} is not on a uniform grid", j * nx + i + 1));
            }
            field.at(j, i) = scale * r[2];
        }
    }
    return field;
}

// ---------------------------------------------------------------------------
// Stencils

double forward_difference(std::span<const double> w, std::size_t i, double dx) {
    if (i + 1 >= w.size()) return (w[i] - w[i - 1]) / dx;
    return (w[i + 1] - w[i]) / dx;
}

double backward_difference(std::span<const double> w, std::size_t i, double dx) {
    if (i == 0) return (w[1] - w[0]) / dx;
    return (w[i] - w[i - 1]) / dx;
}

double upwind_difference(std::span<const double> w, std::size_t i, double dx, double drift) {
    return drift >= 0.0 ? forward_difference(w, i, dx) : backward_difference(w, i, dx);
}

double second_difference(std::span<const double> w, std::size_t i, double dx) {
    const std::size_t c = std::clamp<std::size_t>(i, 1, w.size() - 2);
    return (w[c - 1] - 2.0 * w[c] + w[c + 1]) / (dx * dx);
}

void d1_upwind(std::span<const double> w, std::span<const double> drift, double dx, std::span<double> out) {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = upwind_difference(w, i, dx, drift[i]);
}

void d2_central(std::span<const double> w, double dx, std::span<double> out) {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = second_difference(w, i, dx);
}

// ---------------------------------------------------------------------------
// Linear algebra

void solve_banded(std::vector<std::array<double, 5>> a, std::span<double> rhs) {
    const std::size_t n = rhs.size();
    auto at = [&](std::size_t i, std::size_t c) -> double& { return a[i][c + 2 - i]; };
    for (std::size_t k = 0; k < n; ++k) {
        double scale = 0.0;
        for (double v : a[k]) scale = std::max(scale, std::abs(v));
        const double pivot = at(k, k);
        if (!(std::abs(pivot) > 1e-14 * scale)) {
            throw SingularSystemError(fmt::format("singular banded system: pivot {} at row {}", pivot, k));
        }
        const std::size_t last = std::min(k + 2, n - 1);
        for (std::size_t i = k + 1; i <= last; ++i) {
            const double factor = at(i, k) / pivot;
            if (factor == 0.0) continue;
            for (std::size_t c = k; c <= last; ++c) at(i, c) -= factor * at(k, c);
            rhs[i] -= factor * rhs[k];
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = rhs[ii];
        if (ii + 1 < n) s -= at(ii, ii + 1) * rhs[ii + 1];
        if (ii + 2 < n) s -= at(ii, ii + 2) * rhs[ii + 2];
        rhs[ii] = s / at(ii, ii);
    }
}

void linear_step(Stepper stepper, std::span<const double> next, std::span<const double> mu,
                 std::span<const double> sigma, std::span<const double> source, double dt, double dx,
                 std::span<double> out) {
    const std::size_t n = next.size();
    if (stepper == Stepper::explicit_euler) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d1 = upwind_difference(next, i, dx, mu[i]);
            const double d2 = second_difference(next, i, dx);
            out[i] = next[i] + dt * generator(mu[i], sigma[i], d1, d2, source[i]);
        }
        return;
    }

    // (I - dt L) w = next + dt * source, L = mu D1 + 1/2 sigma^2 D2.
    std::vector<std::array<double, 5>> bands(n, std::array<double, 5>{});
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = bands[i];
        auto add = [&](std::size_t col, double v) { row[col + 2 - i] += v; };
        add(i, 1.0);
        const bool forward = (mu[i] >= 0.0 && i + 1 < n) || i == 0;
        if (forward) {
            add(i, dt * mu[i] / dx);
            add(i + 1, -dt * mu[i] / dx);
        } else {
            add(i - 1, dt * mu[i] / dx);
            add(i, -dt * mu[i] / dx);
        }
        const double a = 0.5 * sigma[i] * sigma[i] * dt / (dx * dx);
        const std::size_t c = std::clamp<std::size_t>(i, 1, n - 2);
        add(c - 1, -a);
        add(c, 2.0 * a);
        add(c + 1, -a);
        out[i] = next[i] + dt * source[i];
    }
    solve_banded(std::move(bands), out);
}

// ---------------------------------------------------------------------------
// Frozen-policy auxiliary solve

SliceCoefficients frozen_coefficients(const ProblemSpec& spec, const ControlLaw& policy, const GridSpec& grid,
                                      std::size_t j) {
    const std::size_t k = static_cast<std::size_t>(spec.dims.k);
    SliceCoefficients c;
    c.controls.resize(grid.nx * k);
    c.mu.resize(grid.nx);
    c.sigma.resize(grid.nx);
    const double t = grid.t(j);
    for (std::size_t i = 0; i < grid.nx; ++i) {
        const double x = grid.x(i);
        std::span<double> u(c.controls.data() + i * k, k);
        policy.evaluate(t, std::span<const double>(&x, 1), u);
        c.mu[i] = spec.drift1(t, x, u);
        c.sigma[i] = spec.vol1(t, x, u);
    }
    return c;
}

void z_slice(const SliceCoefficients& coeffs, std::span<const double> g, double dx, std::span<double> z) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        z[i] = coeffs.sigma[i] * upwind_difference(g, i, dx, coeffs.mu[i]);
    }
}

GSolution solve_g(const ProblemSpec& spec, const ControlLaw& policy, const GridSpec& grid,
                  const GSolveOptions& options) {
    grid.validate();
    if (spec.dims.n != 1 || spec.dims.m != 1) throw ConfigError("the grid solver supports n = m = 1 only");
    if (policy.control_dim() != static_cast<std::size_t>(spec.dims.k)) {
        throw ConfigError("policy control dimension does not match the problem");
    }
    if (auto knots = policy.time_knots(); !knots.empty()) {
        const double eps = 1e-12 * std::max(1.0, grid.t_end);
        if (knots.front() > grid.t0 + eps || knots.back() < grid.t_end - eps) {
            throw ConfigError("policy does not cover the grid's time range");
        }
    }

    const std::size_t nx = grid.nx;
    const std::size_t nt = grid.nt;
    const std::size_t k = static_cast<std::size_t>(spec.dims.k);
    const double dx = grid.dx();
    const double dt = grid.dt();

    GSolution sol{ScalarField(grid), ScalarField(grid), 0.0};
    auto track_gradient = [&](const SliceCoefficients& c, std::span<const double> g) {
        for (std::size_t i = 0; i < nx; ++i) {
            sol.max_abs_dgdx = std::max(sol.max_abs_dgdx, std::abs(upwind_difference(g, i, dx, c.mu[i])));
        }
    };

    {
        auto gN = sol.g.slice(nt);
        for (std::size_t i = 0; i < nx; ++i) gN[i] = spec.bsde_terminal1(grid.x(i));
        const auto coeffs = frozen_coefficients(spec, policy, grid, nt);
        z_slice(coeffs, gN, dx, sol.z.slice(nt));
        track_gradient(coeffs, gN);
        for (std::size_t i = 0; i < nx; ++i) {
            if (!std::isfinite(gN[i]) || !std::isfinite(sol.z.at(nt, i))) throw NonFiniteError("g", nt, i);
        }
    }

    std::vector<double> source(nx);
    for (std::size_t j = nt; j-- > 0;) {
        const auto coeffs = frozen_coefficients(spec, policy, grid, j);
        const double t = grid.t(j);
        const auto next = sol.g.slice(j + 1);
        const auto znext = sol.z.slice(j + 1);
        parallel_for(nx, options.threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                if (options.stepper == Stepper::explicit_euler) {
                    const double cfl = cfl_number(coeffs.mu[i], coeffs.sigma[i], dt, dx);
                    if (!(cfl <= kMaxCfl)) throw CflError(cfl, j, i);
                }
                source[i] = spec.driver1(t, grid.x(i), next[i], znext[i], coeffs.control(i, k));
            }
        });
        auto g = sol.g.slice(j);
        linear_step(options.stepper, next, coeffs.mu, coeffs.sigma, source, dt, dx, g);
        z_slice(coeffs, g, dx, sol.z.slice(j));
        for (std::size_t i = 0; i < nx; ++i) {
            if (!std::isfinite(g[i]) || !std::isfinite(sol.z.at(j, i))) throw NonFiniteError("g", j, i);
        }
        track_gradient(coeffs, g);
    }
    return sol;
}

}  // namespace fbsde
