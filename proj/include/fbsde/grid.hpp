#pragma once

#include "fbsde/policy.hpp"
#include "fbsde/problem.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

// Uniform space-time grid [x_lo, x_hi] x [t0, T].
struct GridSpec {
    double x_lo = 0.0;
    double x_hi = 1.0;
    std::size_t nx = 3;  // spatial nodes
    std::size_t nt = 1;  // time steps; nt + 1 slices
    double t0 = 0.0;
    double t_end = 1.0;

    double dx() const noexcept { return (x_hi - x_lo) / static_cast<double>(nx - 1); }
    double dt() const noexcept { return (t_end - t0) / static_cast<double>(nt); }
    double x(std::size_t i) const noexcept { return x_lo + static_cast<double>(i) * dx(); }
    double t(std::size_t j) const noexcept { return t0 + static_cast<double>(j) * dt(); }

    std::vector<double> nodes() const;
    std::vector<double> times() const;

    // Throws ConfigError.
    void validate() const;

    bool operator==(const GridSpec&) const = default;
};

// Values on every (slice, node) of a grid, slice-major.
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(GridSpec grid, double fill = 0.0);

    const GridSpec& grid() const noexcept { return grid_; }
    double& at(std::size_t j, std::size_t i) { return values_[j * grid_.nx + i]; }
    double at(std::size_t j, std::size_t i) const { return values_[j * grid_.nx + i]; }
    std::span<double> slice(std::size_t j) { return {values_.data() + j * grid_.nx, grid_.nx}; }
    std::span<const double> slice(std::size_t j) const { return {values_.data() + j * grid_.nx, grid_.nx}; }
    const std::vector<double>& values() const noexcept { return values_; }

    // Bilinear interpolation, clamped to the grid in both t and x.
    double interpolate(double t, double x) const;
    // Linear interpolation in x on one slice, clamped.
    double interpolate_slice(std::size_t j, double x) const;

    bool all_finite() const;

    // CSV: header `t,x,value`, one row per (slice, node), 17 significant digits.
    void write_csv(std::ostream& os, double scale = 1.0) const;
    static ScalarField read_csv(std::istream& is, double scale = 1.0);

private:
    GridSpec grid_;
    std::vector<double> values_;
};

// First derivative, upwinded by the sign of drift[i]: forward difference when
// drift >= 0, backward otherwise; one-sided at the boundary nodes.
void d1_upwind(std::span<const double> w, std::span<const double> drift, double dx, std::span<double> out);

// Central second difference; boundary nodes copy the adjacent interior value.
void d2_central(std::span<const double> w, double dx, std::span<double> out);

// Single-node stencils matching the slice operators above.
double forward_difference(std::span<const double> w, std::size_t i, double dx);
double backward_difference(std::span<const double> w, std::size_t i, double dx);
double upwind_difference(std::span<const double> w, std::size_t i, double dx, double drift);
double second_difference(std::span<const double> w, std::size_t i, double dx);

// Generator value mu*d1 + 1/2 sigma^2 d2 + source. Shared by every marcher so
// that identical inputs give bit-identical results across code paths.
inline double generator(double mu, double sigma, double d1, double d2, double source) {
    return mu * d1 + 0.5 * (sigma * sigma) * d2 + source;
}

// Solve A w = rhs in place for a matrix with at most two sub- and two
// super-diagonals, stored row-wise as bands[i] = {A(i,i-2), A(i,i-1), A(i,i),
// A(i,i+1), A(i,i+2)}. The implicit stepper's matrix is tridiagonal except for
// the two boundary rows. Gaussian elimination without pivoting; throws
// SingularSystemError on a vanishing pivot.
void solve_banded(std::vector<std::array<double, 5>> bands, std::span<double> rhs);

enum class Stepper { explicit_euler, implicit };

// Backward marching of w^j = w^{j+1} + dt * [mu d1 + 1/2 sigma^2 d2 + source]
// for one slice. Explicit: derivatives of w^{j+1}. Implicit: the linear part
// is taken at w^j and solved with solve_banded; the source stays explicit.
void linear_step(Stepper stepper, std::span<const double> next, std::span<const double> mu,
                 std::span<const double> sigma, std::span<const double> source, double dt, double dx,
                 std::span<double> out);

// Explicit-stepper stability number sigma^2 dt/dx^2 + |mu| dt/dx.
inline double cfl_number(double mu, double sigma, double dt, double dx) {
    return sigma * sigma * dt / (dx * dx) + (mu < 0 ? -mu : mu) * dt / dx;
}
inline constexpr double kMaxCfl = 0.9;

struct GSolution {
    ScalarField g;
    ScalarField z;         // sigma* times the upwind derivative of g
    double max_abs_dgdx = 0.0;  // sampled sup |d_x g|, diagnostic only
};

struct GSolveOptions {
    Stepper stepper = Stepper::explicit_euler;
    unsigned threads = 1;
};

// Solve the auxiliary equation for g under a frozen policy (n = m = 1):
// g(T) = Phi, g^j = g^{j+1} + dt [mu* d1 + 1/2 sigma*^2 d2 + h(t_j, x, g^{j+1}, z^{j+1}, u_j)],
// z^j = sigma*(t_j, x, u_j) * d1_upwind(g^j). Coefficients on [t_j, t_{j+1})
// use policy slice j.
// The policy is evaluated at the grid points (t_j, x_i); a FeedbackPolicy
// built on the same grid is reproduced exactly.
GSolution solve_g(const ProblemSpec& spec, const ControlLaw& policy, const GridSpec& grid,
                  const GSolveOptions& options = {});

// Frozen-policy coefficients of one slice.
struct SliceCoefficients {
    std::vector<double> controls;  // nx * k
    std::vector<double> mu;
    std::vector<double> sigma;

    std::span<const double> control(std::size_t i, std::size_t k) const { return {controls.data() + i * k, k}; }
};
SliceCoefficients frozen_coefficients(const ProblemSpec& spec, const ControlLaw& policy, const GridSpec& grid,
                                      std::size_t j);

// z = sigma* x upwind d_x g for one slice; the stencil solve_g uses.
void z_slice(const SliceCoefficients& coeffs, std::span<const double> g, double dx, std::span<double> z);

}  // namespace fbsde
