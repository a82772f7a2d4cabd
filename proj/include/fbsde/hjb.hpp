#pragma once

#include "fbsde/grid.hpp"
#include "fbsde/policy.hpp"
#include "fbsde/problem.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

// Finite control set in U, stored lexicographically ascending.
class ControlCandidates {
public:
    ControlCandidates(std::size_t k, std::vector<double> flat);

    // Tensor grid with `per_axis` points per coordinate (1 point => midpoint).
    static ControlCandidates uniform(const ControlBox& box, std::size_t per_axis);

    std::size_t size() const noexcept { return flat_.size() / k_; }
    std::size_t dim() const noexcept { return k_; }
    std::span<const double> operator[](std::size_t q) const { return {flat_.data() + q * k_, k_}; }

    // Spacing between neighbouring candidates along the first axis (0 if single).
    double spacing() const noexcept { return spacing_; }

private:
    std::size_t k_;
    std::vector<double> flat_;
    double spacing_ = 0.0;
};

// Upwind-ready first derivative: the forward and backward one-sided values.
// The Hamiltonian picks one per candidate from the sign of that candidate's drift.
struct UpwindSlope {
    double forward;
    double backward;

    double for_drift(double mu) const noexcept { return mu >= 0.0 ? forward : backward; }
};

struct HamiltonianMin {
    std::size_t index = 0;  // into the candidate set
    double value = 0.0;
};

// min over candidates of mu(t,x,u) dv1 + 1/2 sigma(t,x,u)^2 dv2 + f(t, x, g, z, u).
// Ties resolve to the smallest candidate (first in lexicographic order).
HamiltonianMin hamiltonian_argmin(double t, double x, UpwindSlope dv1, double dv2, double g_val, double z_val,
                                  const ProblemSpec& spec, const ControlCandidates& candidates);
inline HamiltonianMin hamiltonian_argmin(double t, double x, double dv1, double dv2, double g_val,
                                         double z_val, const ProblemSpec& spec,
                                         const ControlCandidates& candidates) {
    return hamiltonian_argmin(t, x, UpwindSlope{dv1, dv1}, dv2, g_val, z_val, spec, candidates);
}

// Two-sweep projection of one scalar control slice onto
// |u_{i+1} - u_i| <= K dx, followed by clamping into [lo, hi].
// Slices that already comply are returned unchanged.
void lipschitz_project(std::span<double> values, double dx, double k, double lo, double hi);

// Project every slice and coordinate of a grid policy.
void lipschitz_project(FeedbackPolicy& policy);

struct FieldPair {
    ScalarField v;
    ScalarField g;
    ScalarField z;
    FeedbackPolicy u_star;
};

struct IterationRecord {
    double policy_change = 0.0;  // sup |u_{n+1} - u_n|
    double value_change = 0.0;   // sup |v_{n+1} - v_n|, v_0 := 0
    std::size_t cfl_restricted = 0;  // nodes whose argmin was limited to CFL-stable candidates
};

// Relative PDE residuals on the inner region (see pde_residuals).
struct Residuals {
    double v = 0.0;
    double g = 0.0;
};

struct SolveReport {
    std::size_t iterations = 0;
    std::vector<IterationRecord> history;
    Residuals residuals;
    bool converged = false;
    bool value_monotone = true;  // observed v_{n+1} <= v_n at every node after the first sweep
    double max_abs_dgdx = 0.0;
    double seconds_g = 0.0;
    double seconds_v = 0.0;
    double seconds_projection = 0.0;

    // Deterministic text form (no timings).
    void write(std::ostream& os) const;
};

struct SolverOptions {
    double tol = 1e-6;
    std::size_t max_iter = 50;
    Stepper stepper = Stepper::explicit_euler;
    unsigned threads = 1;
    double inner_fraction = 0.6;  // residual region, centred
    double time_fraction = 0.9;   // residual region covers [t0, t0 + fraction (T - t0)]
};

// Policy iteration for the extended HJB system on a 1-D grid:
//   g_n, z_n = solve_g(u_n)
//   v_{n+1}: v(T) = G, v^j = v^{j+1} + dt min_u [mu d1 v + 1/2 sigma^2 d2 v + f(t, x, g_n, z_n, u)]
//   u_{n+1} = Lipschitz projection of the pointwise argmin
// until both sup-norm changes are <= tol. The returned g and z are re-solved
// under the final policy.
std::pair<FieldPair, SolveReport> solve_extended_hjb(const ProblemSpec& spec, const GridSpec& grid,
                                                     const FeedbackPolicy& u0, const ControlCandidates& candidates,
                                                     const SolverOptions& options = {});

struct ValueSweep {
    ScalarField v;
    FeedbackPolicy raw;  // argmin before projection
    std::size_t cfl_restricted = 0;
};

// One backward value sweep with (g, z) frozen. With the explicit stepper a
// node whose minimiser breaks the CFL bound is re-minimised over the
// candidates that respect it (counted in cfl_restricted); CflError is thrown
// only when no candidate does.
ValueSweep value_sweep(const ProblemSpec& spec, const GridSpec& grid,
                                                   const ScalarField& g, const ScalarField& z,
                                                   const ControlCandidates& candidates, Stepper stepper,
                                                   unsigned threads = 1);

// Consistency residuals of (v, g, u*) measured with central space stencils
// and backward time differences, relative to the size of the individual terms:
//   r_v = |dt v + mu* dx v + 1/2 sigma*^2 dxx v + f| / max(|dt v| + |mu* dx v| + |1/2 sigma*^2 dxx v| + |f|)
// and likewise for g with h. Evaluated on the centred `inner_fraction` of the
// nodes and slices with t <= t0 + time_fraction (T - t0).
Residuals pde_residuals(const ProblemSpec& spec, const FieldPair& fields, double inner_fraction = 0.6,
                        double time_fraction = 0.9);

// Node index range [first, last] of the centred fraction of a grid.
std::pair<std::size_t, std::size_t> inner_nodes(const GridSpec& grid, double fraction);

// Initial policy constant at `value` (the midpoint of U if empty).
FeedbackPolicy initial_policy(const ProblemSpec& spec, const GridSpec& grid, std::span<const double> value = {});

// Policy CSV: `t,x,value` for k = 1, `t,x,value_1,...,value_k` otherwise.
void write_policy_csv(std::ostream& os, const FeedbackPolicy& policy);
FeedbackPolicy read_policy_csv(std::istream& is, const ControlBox& box, double lipschitz_k);

}  // namespace fbsde
