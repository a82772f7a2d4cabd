#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/policy.hpp"
#include "fbsde/problem.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

// Time window, resolution and randomness of one simulation. Path p draws its
// Brownian increments from stream p of the seed: normal number k*m + d is
// dB_{k,d}/sqrt(dt).
struct SimulationSetup {
    double t0 = 0.0;
    double t_end = -1.0;  // < 0: the problem horizon
    std::size_t steps = 256;
    std::size_t paths = 1000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

class PathEnsemble {
public:
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t n = 1, m = 1, k = 1;
    std::uint64_t seed = 0;
    std::vector<double> times;  // steps + 1 knots

    std::vector<double> x;   // paths x (steps+1) x n
    std::vector<double> db;  // paths x steps x m
    std::vector<double> u;   // paths x steps x k, control applied on [t_k, t_{k+1})
    std::vector<double> y;   // paths x (steps+1)
    std::vector<double> z;   // paths x steps x m
    std::vector<std::string> warnings;

    double dt() const { return times[1] - times[0]; }

    std::span<const double> state(std::size_t p, std::size_t s) const { return {x.data() + (p * (steps + 1) + s) * n, n}; }
    std::span<double> state(std::size_t p, std::size_t s) { return {x.data() + (p * (steps + 1) + s) * n, n}; }
    std::span<const double> increment(std::size_t p, std::size_t s) const { return {db.data() + (p * steps + s) * m, m}; }
    std::span<const double> control(std::size_t p, std::size_t s) const { return {u.data() + (p * steps + s) * k, k}; }
    double& value(std::size_t p, std::size_t s) { return y[p * (steps + 1) + s]; }
    double value(std::size_t p, std::size_t s) const { return y[p * (steps + 1) + s]; }
    std::span<double> gradient(std::size_t p, std::size_t s) { return {z.data() + (p * steps + s) * m, m}; }
    std::span<const double> gradient(std::size_t p, std::size_t s) const { return {z.data() + (p * steps + s) * m, m}; }

    // Ensemble summary `k,t,mean_X,std_X,mean_Y,mean_Z` (first state and noise
    // coordinate). Z is undefined at the last knot and written as nan.
    void write_summary(std::ostream& os) const;
    // Full dump `path,k,t,x,y,z,u` (first coordinates).
    void write_paths(std::ostream& os) const;
};

// Euler-Maruyama for the controlled forward SDE. Fills x, db and u; y and z
// are zero until backward_regression.
PathEnsemble simulate_forward(const ProblemSpec& spec, const ControlLaw& policy, std::span<const double> x0,
                              const SimulationSetup& setup);

// Least-squares Monte Carlo for the BSDE along the ensemble:
//   Y_N = Phi(X_N)
//   Yhat = E[Y_{k+1} | X_k]
//   Z_k  = E[(Y_{k+1} - Yhat) dB_k | X_k] / dt
//   Y_k  = Yhat + h(t_k, X_k, Yhat, Z_k, u_k) dt
// Conditional expectations project onto polynomials of total degree <= degree
// in the centred and scaled state. Subtracting Yhat before multiplying by dB_k
// leaves the target unchanged (E[Yhat dB_k | X_k] = 0) and removes most of its
// variance. Rank-deficient normal equations get a 1e-10 ridge and a warning.
void backward_regression(const ProblemSpec& spec, PathEnsemble& ensemble, unsigned degree = 3);

struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t paths = 0;
    std::uint64_t seed = 0;
};

CostEstimate summarize(std::span<const double> samples, std::uint64_t seed);

// Where (Y, Z) along the paths come from when estimating the cost.
struct CostSource {
    enum class Kind { regression, fields } kind = Kind::regression;
    unsigned degree = 3;
    const ScalarField* g = nullptr;  // Kind::fields
    const ScalarField* z = nullptr;
};

// J = E[ sum_k f(t_k, X_k, Y_k, Z_k, u_k) dt + G(X_N) ], left-point rule.
// Fields are read by clamped bilinear interpolation and must cover the time
// window.
CostEstimate estimate_cost(const ProblemSpec& spec, const ControlLaw& policy, std::span<const double> x0,
                           const SimulationSetup& setup, const CostSource& source = {});

// Per-path costs behind estimate_cost, for callers that need paired statistics.
std::vector<double> path_costs(const ProblemSpec& spec, const PathEnsemble& ensemble, const CostSource& source,
                               unsigned threads = 1);

struct DppReport {
    double lhs = 0.0;                   // v(t0, x0)
    std::vector<CostEstimate> rhs;      // one per candidate
    std::vector<double> paired_se;      // SE of rhs_c - rhs_0 under common random numbers
    std::size_t best = 0;               // argmin of the rhs means
    double min_rhs = 0.0;
    double gap = 0.0;                   // min_rhs - lhs
    double discretization = 0.0;        // dt + dx^2 of the solved grid
};

// Monte Carlo right-hand side of the dynamic programming principle:
//   rhs_c = E[ sum_{t0 <= t_k < s} f(t_k, X_k, g, z, u_c) dt + v(s, X_s) ]
// with g, z, v read from the solved fields. Every candidate uses the same
// Brownian increments. steps = 0 picks the solved grid's time step.
DppReport check_dpp(const ProblemSpec& spec, const ScalarField& v, const ScalarField& g, const ScalarField& z,
                    double t0, double x0, double split, const std::vector<const ControlLaw*>& candidates,
                    const SimulationSetup& setup);

// u shifted by each delta (times the width of U) and clamped into U. Shifts
// and clamping keep the per-slice Lipschitz bound.
std::vector<FeedbackPolicy> shifted_policies(const FeedbackPolicy& u, std::span<const double> deltas);

// Mean |Z_regression - sigma(t_k, X_k, u_k) d_x g(t_k, X_k)| over path knots
// with X_k inside the centred `inner_fraction` of g's spatial range, divided by
// the mean |sigma d_x g| over the same samples. d_x g is a central difference of
// the interpolated field with the grid spacing.
struct ZIdentity {
    double mean_abs_deviation = 0.0;
    double scale = 0.0;
    double relative = 0.0;
    std::size_t samples = 0;
};
ZIdentity z_identity(const ProblemSpec& spec, const PathEnsemble& ensemble, const ScalarField& g,
                     double inner_fraction = 0.6);

}  // namespace fbsde
