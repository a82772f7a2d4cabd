#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/hjb.hpp"
#include "fbsde/policy.hpp"
#include "fbsde/problem.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fbsde::bench {

// ---------------------------------------------------------------------------
// Exponential-utility portfolio problem
//
//   dW = [r W + (mu - r) pi] dt + sigma pi dB,   Y_s = W_T - int_s^T Z dB,
//   reward E[ int_t^T U(Y_s) ds + U(W_T) ],  U(x) = -(1/gamma) e^{-gamma x}.

struct UtilityParams {
    double r = 0.05;
    double mu = 0.1;
    double sigma = 0.2;
    double gamma = 1.0;
    double horizon = 1.0;

    double beta() const { return (mu - r) / sigma; }
    // pi* at t = T; the largest |pi*| on [0, T] when r >= 0.
    double terminal_pi() const { return (mu - r) / (gamma * sigma * sigma); }
    void validate() const;
};

struct ClosedForm {
    double A, B, C, D;
    double v;  // reward convention: -(1/gamma) e^{A x} B
    double g;  // C x + D
    double pi_star;
};

// With k = beta^2/2 and E = e^{k(t-T)}:
//   A = -gamma C,  C = e^{-r(t-T)},  D = beta^2 (T-t)/gamma,
//   B = E + int_t^T e^{k(t+s-2T)} ds = E + (E - E^2)/k   (B = 1 + T - t if beta = 0),
//   pi* = (mu - r) e^{r(t-T)} / (gamma sigma^2).
// Throws Error for t outside [0, T].
ClosedForm closed_form(const UtilityParams& p, double t, double x);

struct OdeMesh {
    std::vector<double> t, A, B, C, D;
};

// Classical RK4 backward from T for
//   C' = -r C,  D' = beta^2 C / A,  B' = 1/2 beta^2 B - e^{-gamma D},  A = -gamma C
// on a uniform mesh of `steps` intervals; mesh index 0 is t = 0.
OdeMesh integrate_odes(const UtilityParams& p, std::size_t steps);

// The printed B integral and D integral, evaluated by composite Simpson
// quadrature straight from their integrands, for the discrepancy report.
double printed_b_quadrature(const UtilityParams& p, double t);
double printed_d_quadrature(const UtilityParams& p, double t);

// Internal (minimisation) form: f = (1/gamma) e^{-gamma y}, G = (1/gamma) e^{-gamma x}.
ProblemSpec utility_problem(const UtilityParams& p, double lipschitz_k = 1.0);

// x0 +- 6 sigma sqrt(T) |pi_T| (|pi_T| -> 1 when it vanishes).
GridSpec utility_grid(const UtilityParams& p, double x0, std::size_t nx = 201, std::size_t nt = 800);

// pi*(t_j) on every slice of the grid, clamped into the control box.
FeedbackPolicy closed_form_policy(const UtilityParams& p, const ProblemSpec& spec, const GridSpec& grid);

struct UtilityErrors {
    double max_rel_v = 0.0;    // relative to |v_closed|
    double max_abs_g = 0.0;
    double max_rel_pi = 0.0;   // sup |u - pi*| / |pi*|
    double max_pi_variation = 0.0;  // max over slices of (max - min) of u in x
};

// Errors of solved fields (internal sign) against the closed form on the
// centred inner_fraction of nodes and t <= time_fraction T.
UtilityErrors utility_errors(const UtilityParams& p, const FieldPair& fields, double inner_fraction = 0.6,
                             double time_fraction = 0.9);

// `t,x,v_closed,v_grid,g_closed,g_grid,pi_closed,pi_grid,abs_err_v,abs_err_g,abs_err_pi`
// in the reward convention, on a strided subsample of the inner region.
void write_benchmark_csv(std::ostream& os, const UtilityParams& p, const FieldPair& fields,
                         double inner_fraction = 0.6);

// Text report of the printed-formula checks (B and D against the ODEs).
void write_formula_report(std::ostream& os, const UtilityParams& p);

// ---------------------------------------------------------------------------
// Mean-variance instance: dX = a X dt + s dB, f = h = 0, Phi = x, G = x^2,
// gamma(y) = -y^2, so J = Var(X_T). The control set is the single point {0}.

struct MeanVarianceParams {
    double a = 0.0;
    double sigma = 0.2;
    double x0 = 1.0;
    double horizon = 1.0;
};

ProblemSpec mean_variance_problem(const MeanVarianceParams& p);
GridSpec mean_variance_grid(const MeanVarianceParams& p, std::size_t nx = 121, std::size_t nt = 200);

struct VarianceComparison {
    double direct = 0.0;       // sample variance of X_T
    double direct_se = 0.0;    // sqrt((m4 - s^4)/P)
    double transformed = 0.0;  // E[ int Z^2 ds ] via the transformed cost
    double transformed_se = 0.0;
    double gap_in_se = 0.0;    // |direct - transformed| / sqrt(se1^2 + se2^2)
};

// Independent estimators on separate seeds (seed and seed + 1).
VarianceComparison compare_variance(const MeanVarianceParams& p, std::size_t paths, std::size_t steps,
                                    std::uint64_t seed, unsigned threads = 1, unsigned degree = 3);

// ---------------------------------------------------------------------------
// Built-in problem registry

struct Builtin {
    ProblemSpec spec;
    GridSpec grid;
    double x0 = 0.0;
    std::optional<UtilityParams> utility;
    std::optional<MeanVarianceParams> meanvar;
};

// Names: "utility" (r, mu, sigma, gamma, T, x0, lipschitz_k) and "meanvar"
// (a, sigma, x0, T). Unknown names or parameters throw ConfigError.
Builtin make_builtin(const std::string& name, const std::map<std::string, double>& params);

// ---------------------------------------------------------------------------
// Viscosity counterexample

// Continuous piecewise-linear function on [x_0, x_q].
class PiecewiseLinear1D {
public:
    PiecewiseLinear1D(std::vector<double> breakpoints, std::vector<double> values);

    double operator()(double x) const;
    double left_slope(double x) const;   // slope of the segment ending at or containing x
    double right_slope(double x) const;  // slope of the segment starting at or containing x
    bool is_breakpoint(double x) const;
    double lower() const { return xs_.front(); }
    double upper() const { return xs_.back(); }
    const std::vector<double>& breakpoints() const { return xs_; }

private:
    std::size_t segment(double x) const;
    std::vector<double> xs_;
    std::vector<double> ys_;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool empty = false;

    bool contains(double p) const { return !empty && lo <= p && p <= hi; }
    static Interval point(double p) { return {p, p, false}; }
    static Interval none() { return {0.0, 0.0, true}; }
};

// Derivatives of C^1 test functions touching the graph at x.
// above: from above (phi >= w); below: from below (phi <= w). At an interior
// kink with left slope a and right slope b: above = [b, a] if b <= a else
// empty; below = [a, b] if a <= b else empty. Elsewhere (including the
// endpoints) both are the singleton {slope}.
struct Subdifferential {
    Interval above;
    Interval below;
};
Subdifferential subdiff_interval(const PiecewiseLinear1D& w, double x);

struct KinkReport {
    // v~ = tent (slopes +1, -1) on [0, 2]; u~ = slopes +1, -3 with kink at 1.
    Interval v_above_at_kink;
    Interval u_above_at_kink;
    bool v_is_viscosity = false;  // 1 - |v'| = 0 in the sub/super sense at every checked point
    double negative_value = 0.0;  // 2 - |p| - q at (p, q) = (-3, 1)
    double positive_value = 0.0;  // 2 - |p| - q at (p, q) = (0, 0)
    bool u_contradiction = false; // both signs occur over the touching derivatives
    double smooth_value = 0.0;    // 1 - |v~'(0.5)|

    bool ok() const;
    void write(std::ostream& os) const;
};
KinkReport check_kink_example();

}  // namespace fbsde::bench
