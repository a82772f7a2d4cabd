#include "fbsde/hjb.hpp"

#include "fbsde/error.hpp"
#include "fbsde/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace fbsde {

// ---------------------------------------------------------------------------
// Candidates

ControlCandidates::ControlCandidates(std::size_t k, std::vector<double> flat) : k_(k), flat_(std::move(flat)) {
    if (k_ == 0 || flat_.empty() || flat_.size() % k_ != 0) {
        throw ConfigError("control candidate set must be a nonempty list of k-vectors");
    }
    if (size() > 1) spacing_ = std::abs(flat_[k_ * (size() > 1 ? 1 : 0)] - flat_[0]);
}

ControlCandidates ControlCandidates::uniform(const ControlBox& box, std::size_t per_axis) {
    if (per_axis == 0) throw ConfigError("control candidates per axis must be at least 1");
    const std::size_t k = box.dim();
    std::vector<std::vector<double>> axes(k);
    for (std::size_t c = 0; c < k; ++c) {
        const double lo = box.lower[c];
        const double hi = box.upper[c];
        if (per_axis == 1 || lo == hi) {
            axes[c] = {per_axis == 1 ? 0.5 * (lo + hi) : lo};
            continue;
        }
        axes[c].resize(per_axis);
        for (std::size_t q = 0; q < per_axis; ++q) {
            axes[c][q] = lo + (hi - lo) * static_cast<double>(q) / static_cast<double>(per_axis - 1);
        }
        axes[c].back() = hi;
    }
    std::size_t total = 1;
    for (const auto& a : axes) total *= a.size();
    std::vector<double> flat;
    flat.reserve(total * k);
    // Odometer with the last axis fastest gives lexicographic order.
    std::vector<std::size_t> idx(k, 0);
    for (std::size_t q = 0; q < total; ++q) {
        for (std::size_t c = 0; c < k; ++c) flat.push_back(axes[c][idx[c]]);
        for (std::size_t c = k; c-- > 0;) {
            if (++idx[c] < axes[c].size()) break;
            idx[c] = 0;
        }
    }
    ControlCandidates out(k, std::move(flat));
    out.spacing_ = axes[0].size() > 1 ? axes[0][1] - axes[0][0] : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Hamiltonian

HamiltonianMin hamiltonian_argmin(double t, double x, UpwindSlope dv1, double dv2, double g_val, double z_val,
                                  const ProblemSpec& spec, const ControlCandidates& candidates) {
    HamiltonianMin best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t q = 0; q < candidates.size(); ++q) {
        const auto u = candidates[q];
        const double mu = spec.drift1(t, x, u);
        const double sigma = spec.vol1(t, x, u);
        const double f = spec.running_cost1(t, x, g_val, z_val, u);
        const double value = generator(mu, sigma, dv1.for_drift(mu), dv2, f);
        if (value < best.value || (q == 0 && !(best.value < value))) {
            best = {q, value};
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Lipschitz projection

namespace {

// Differences within `slack` of the bound count as compliant, so that a
// projected slice (whose u_i + K dx may round a few ulps high) is a fixed point.
void project_strided(double* values, std::size_t count, std::size_t stride, double bound, double lo, double hi) {
    auto at = [&](std::size_t i) -> double& { return values[i * stride]; };
    auto pull = [bound](double& target, double anchor) {
        const double slack = 1e-13 * (1.0 + std::abs(anchor) + bound);
        if (target > anchor + bound + slack) {
            target = anchor + bound;
        } else if (target < anchor - bound - slack) {
            target = anchor - bound;
        }
    };
    for (std::size_t i = 0; i + 1 < count; ++i) pull(at(i + 1), at(i));
    for (std::size_t i = count - 1; i-- > 0;) pull(at(i), at(i + 1));
    for (std::size_t i = 0; i < count; ++i) {
        if (at(i) > hi) {
            at(i) = hi;
        } else if (at(i) < lo) {
            at(i) = lo;
        }
    }
}

}  // namespace

void lipschitz_project(std::span<double> values, double dx, double k, double lo, double hi) {
    if (values.size() < 2) {
        for (double& v : values) v = std::clamp(v, lo, hi);
        return;
    }
    project_strided(values.data(), values.size(), 1, k * dx, lo, hi);
}

void lipschitz_project(FeedbackPolicy& policy) {
    const auto& nodes = policy.nodes();
    const std::size_t k = policy.box().dim();
    if (nodes.size() < 2) return;
    // Uniform nodes are assumed, as on every solver grid.
    const double dx = (nodes.back() - nodes.front()) / static_cast<double>(nodes.size() - 1);
    for (std::size_t j = 0; j < policy.times().size(); ++j) {
        auto slice = policy.slice(j);
        for (std::size_t c = 0; c < k; ++c) {
            project_strided(slice.data() + c, nodes.size(), k, policy.lipschitz_k() * dx, policy.box().lower[c],
                            policy.box().upper[c]);
        }
    }
}

// ---------------------------------------------------------------------------
// Value sweep

ValueSweep value_sweep(const ProblemSpec& spec, const GridSpec& grid,
                                                   const ScalarField& g, const ScalarField& z,
                                                   const ControlCandidates& candidates, Stepper stepper,
                                                   unsigned threads) {
    const std::size_t nx = grid.nx;
    const std::size_t nt = grid.nt;
    const std::size_t k = static_cast<std::size_t>(spec.dims.k);
    const double dx = grid.dx();
    const double dt = grid.dt();
    if (candidates.dim() != k) throw ConfigError("candidate dimension does not match the problem");

    ScalarField v(grid);
    FeedbackPolicy raw(grid.times(), grid.nodes(), spec.control, spec.lipschitz_k);

    std::vector<std::size_t> chosen(nx);
    std::vector<unsigned char> restricted(nx, 0);
    std::size_t restricted_total = 0;
    const bool check_cfl = stepper == Stepper::explicit_euler;
    std::vector<double> hmin(nx), mu(nx), sigma(nx), source(nx);

    // Argmin at every node of slice j using the derivatives of `w` (slice j+1,
    // or the terminal slice itself for j = nt).
    auto minimise = [&](std::size_t j, std::span<const double> w) {
        const double t = grid.t(j);
        const auto gj = g.slice(j);
        const auto zj = z.slice(j);
        parallel_for(nx, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                const UpwindSlope slope{forward_difference(w, i, dx), backward_difference(w, i, dx)};
                const double d2 = second_difference(w, i, dx);
                const double x = grid.x(i);
                auto best = hamiltonian_argmin(t, x, slope, d2, gj[i], zj[i], spec, candidates);
                restricted[i] = 0;
                if (check_cfl && j < nt) {
                    auto stable = [&](std::size_t q) {
                        const auto c = candidates[q];
                        return cfl_number(spec.drift1(t, x, c), spec.vol1(t, x, c), dt, dx) <= kMaxCfl;
                    };
                    if (!stable(best.index)) {
                        const auto u = candidates[best.index];
                        const double cfl = cfl_number(spec.drift1(t, x, u), spec.vol1(t, x, u), dt, dx);
                        best = {0, std::numeric_limits<double>::infinity()};
                        bool found = false;
                        for (std::size_t q = 0; q < candidates.size(); ++q) {
                            if (!stable(q)) continue;
                            const auto c = candidates[q];
                            const double value = generator(spec.drift1(t, x, c), spec.vol1(t, x, c),
                                                           slope.for_drift(spec.drift1(t, x, c)), d2,
                                                           spec.running_cost1(t, x, gj[i], zj[i], c));
                            if (!found || value < best.value) best = {q, value};
                            found = true;
                        }
                        if (!found) throw CflError(cfl, j, i);
                        restricted[i] = 1;
                    }
                }
                chosen[i] = best.index;
                hmin[i] = best.value;
                const auto u = candidates[best.index];
                for (std::size_t c = 0; c < k; ++c) raw.value(j, i, c) = u[c];
            }
        });
    };

    auto vN = v.slice(nt);
    for (std::size_t i = 0; i < nx; ++i) {
        vN[i] = spec.cost_terminal1(grid.x(i));
        if (!std::isfinite(vN[i])) throw NonFiniteError("v", nt, i);
    }
    minimise(nt, vN);

    for (std::size_t j = nt; j-- > 0;) {
        const auto next = v.slice(j + 1);
        auto out = v.slice(j);
        minimise(j, next);
        for (std::size_t i = 0; i < nx; ++i) restricted_total += restricted[i];
        const double t = grid.t(j);
        if (stepper == Stepper::explicit_euler) {
            for (std::size_t i = 0; i < nx; ++i) out[i] = next[i] + dt * hmin[i];
        } else {
            for (std::size_t i = 0; i < nx; ++i) {
                const auto u = candidates[chosen[i]];
                const double x = grid.x(i);
                mu[i] = spec.drift1(t, x, u);
                sigma[i] = spec.vol1(t, x, u);
                source[i] = spec.running_cost1(t, x, g.at(j, i), z.at(j, i), u);
            }
            linear_step(Stepper::implicit, next, mu, sigma, source, dt, dx, out);
        }
        for (std::size_t i = 0; i < nx; ++i) {
            if (!std::isfinite(out[i])) throw NonFiniteError("v", j, i);
        }
    }
    return {std::move(v), std::move(raw), restricted_total};
}

// ---------------------------------------------------------------------------
// Policy iteration

namespace {

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) m = std::max(m, std::abs(a[q] - b[q]));
    return m;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

FeedbackPolicy initial_policy(const ProblemSpec& spec, const GridSpec& grid, std::span<const double> value) {
    std::vector<double> u0 = value.empty() ? spec.control.midpoint() : std::vector<double>(value.begin(), value.end());
    if (!spec.control.contains(u0)) throw ConfigError("initial control lies outside U");
    return FeedbackPolicy::constant(grid.times(), grid.nodes(), spec.control, spec.lipschitz_k, u0);
}

std::pair<FieldPair, SolveReport> solve_extended_hjb(const ProblemSpec& spec, const GridSpec& grid,
                                                     const FeedbackPolicy& u0, const ControlCandidates& candidates,
                                                     const SolverOptions& options) {
    spec.validate();
    grid.validate();
    if (options.max_iter == 0) throw ConfigError("max_iter must be at least 1");
    if (!(options.tol >= 0.0)) throw ConfigError("tol must be nonnegative");
    if (u0.times() != grid.times() || u0.nodes() != grid.nodes()) {
        throw ConfigError("initial policy must live on the solver grid");
    }
    u0.validate();

    SolveReport report;
    GSolveOptions gopts{options.stepper, options.threads};

    FeedbackPolicy policy = u0;
    ScalarField v_prev(grid, 0.0);

    double best_score = std::numeric_limits<double>::infinity();
    ScalarField best_v;
    FeedbackPolicy best_u;

    for (std::size_t n = 0; n < options.max_iter; ++n) {
        auto start = std::chrono::steady_clock::now();
        GSolution gs = solve_g(spec, policy, grid, gopts);
        report.seconds_g += seconds_since(start);

        start = std::chrono::steady_clock::now();
        ValueSweep sweep = value_sweep(spec, grid, gs.g, gs.z, candidates, options.stepper, options.threads);
        ScalarField& v = sweep.v;
        FeedbackPolicy& next_policy = sweep.raw;
        report.seconds_v += seconds_since(start);

        start = std::chrono::steady_clock::now();
        lipschitz_project(next_policy);
        report.seconds_projection += seconds_since(start);

        IterationRecord rec{sup_diff(next_policy.values(), policy.values()), sup_diff(v.values(), v_prev.values()),
                            sweep.cfl_restricted};
        if (n > 0) {
            for (std::size_t q = 0; q < v.values().size(); ++q) {
                if (v.values()[q] > v_prev.values()[q] + 1e-12 * (1.0 + std::abs(v_prev.values()[q]))) {
                    report.value_monotone = false;
                    break;
                }
            }
        }
        report.history.push_back(rec);
        report.iterations = n + 1;

        const double score = std::max(rec.policy_change, rec.value_change);
        if (score < best_score) {
            best_score = score;
            best_v = v;
            best_u = next_policy;
        }
        policy = std::move(next_policy);
        v_prev = std::move(v);
        if (rec.policy_change <= options.tol && rec.value_change <= options.tol) {
            report.converged = true;
            break;
        }
    }

    FieldPair fields;
    if (report.converged) {
        fields.v = std::move(v_prev);
        fields.u_star = std::move(policy);
    } else {
        fields.v = std::move(best_v);
        fields.u_star = std::move(best_u);
    }
    auto start = std::chrono::steady_clock::now();
    GSolution final_g = solve_g(spec, fields.u_star, grid, gopts);
    report.seconds_g += seconds_since(start);
    fields.g = std::move(final_g.g);
    fields.z = std::move(final_g.z);
    report.max_abs_dgdx = final_g.max_abs_dgdx;
    report.residuals = pde_residuals(spec, fields, options.inner_fraction, options.time_fraction);
    return {std::move(fields), std::move(report)};
}

// ---------------------------------------------------------------------------
// Residuals

std::pair<std::size_t, std::size_t> inner_nodes(const GridSpec& grid, double fraction) {
    const double margin = 0.5 * (1.0 - fraction) * static_cast<double>(grid.nx - 1);
    auto first = static_cast<std::size_t>(std::ceil(margin - 1e-9));
    auto last = static_cast<std::size_t>(std::floor(static_cast<double>(grid.nx - 1) - margin + 1e-9));
    first = std::max<std::size_t>(first, 1);
    last = std::min(last, grid.nx - 2);
    return {first, last};
}

Residuals pde_residuals(const ProblemSpec& spec, const FieldPair& fields, double inner_fraction,
                        double time_fraction) {
    const GridSpec& grid = fields.v.grid();
    const double dx = grid.dx();
    const double dt = grid.dt();
    const auto [first, last] = inner_nodes(grid, inner_fraction);
    const double t_max = grid.t0 + time_fraction * (grid.t_end - grid.t0) + 1e-12;
    const std::size_t k = static_cast<std::size_t>(spec.dims.k);
    std::vector<double> u(k);

    double worst_v = 0.0, scale_v = 0.0, worst_g = 0.0, scale_g = 0.0;
    for (std::size_t j = 0; j < grid.nt && grid.t(j) <= t_max; ++j) {
        const double t = grid.t(j);
        const auto vj = fields.v.slice(j);
        const auto gj = fields.g.slice(j);
        for (std::size_t i = first; i <= last; ++i) {
            const double x = grid.x(i);
            fields.u_star.evaluate(t, std::span<const double>(&x, 1), u);
            const double mu = spec.drift1(t, x, u);
            const double sigma = spec.vol1(t, x, u);
            const double half_var = 0.5 * sigma * sigma;
            const double zval = fields.z.at(j, i);

            const double terms_v[4] = {(fields.v.at(j + 1, i) - vj[i]) / dt, mu * (vj[i + 1] - vj[i - 1]) / (2 * dx),
                                       half_var * (vj[i - 1] - 2 * vj[i] + vj[i + 1]) / (dx * dx),
                                       spec.running_cost1(t, x, gj[i], zval, u)};
            const double terms_g[4] = {(fields.g.at(j + 1, i) - gj[i]) / dt, mu * (gj[i + 1] - gj[i - 1]) / (2 * dx),
                                       half_var * (gj[i - 1] - 2 * gj[i] + gj[i + 1]) / (dx * dx),
                                       spec.driver1(t, x, gj[i], zval, u)};
            double rv = 0.0, sv = 0.0, rg = 0.0, sg = 0.0;
            for (int q = 0; q < 4; ++q) {
                rv += terms_v[q];
                sv += std::abs(terms_v[q]);
                rg += terms_g[q];
                sg += std::abs(terms_g[q]);
            }
            worst_v = std::max(worst_v, std::abs(rv));
            scale_v = std::max(scale_v, sv);
            worst_g = std::max(worst_g, std::abs(rg));
            scale_g = std::max(scale_g, sg);
        }
    }
    auto rel = [](double r, double s) { return s > 0.0 ? r / s : r; };
    return {rel(worst_v, scale_v), rel(worst_g, scale_g)};
}

// ---------------------------------------------------------------------------
// Report / policy IO

void SolveReport::write(std::ostream& os) const {
    fmt::print(os, "iterations {}\nconverged {}\n", iterations, converged ? "true" : "false");
    fmt::print(os, "value_monotone {}\n", value_monotone ? "true" : "false");
    fmt::print(os, "residual_v {:.17g}\nresidual_g {:.17g}\n", residuals.v, residuals.g);
    fmt::print(os, "max_abs_dgdx {:.17g}\n", max_abs_dgdx);
    os << "iteration,policy_change,value_change,cfl_restricted\n";
    for (std::size_t n = 0; n < history.size(); ++n) {
        fmt::print(os, "{},{:.17g},{:.17g},{}\n", n + 1, history[n].policy_change, history[n].value_change,
                   history[n].cfl_restricted);
    }
}

void write_policy_csv(std::ostream& os, const FeedbackPolicy& policy) {
    const std::size_t k = policy.box().dim();
    os << "t,x";
    if (k == 1) {
        os << ",value";
    } else {
        for (std::size_t c = 1; c <= k; ++c) os << ",value_" << c;
    }
    os << '\n';
    for (std::size_t j = 0; j < policy.times().size(); ++j) {
        for (std::size_t i = 0; i < policy.nodes().size(); ++i) {
            fmt::print(os, "{:.17g},{:.17g}", policy.times()[j], policy.nodes()[i]);
            for (std::size_t c = 0; c < k; ++c) fmt::print(os, ",{:.17g}", policy.value(j, i, c));
            os << '\n';
        }
    }
}

FeedbackPolicy read_policy_csv(std::istream& is, const ControlBox& box, double lipschitz_k) {
    const std::size_t k = box.dim();
    std::string header;
    if (!std::getline(is, header)) throw Error("empty policy CSV");
    std::string expected = "t,x";
    if (k == 1) {
        expected += ",value";
    } else {
        for (std::size_t c = 1; c <= k; ++c) expected += fmt::format(",value_{}", c);
    }
    if (header != expected) throw Error(fmt::format("policy CSV header must be '{}'", expected));

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != 2 + k) throw Error("policy CSV row has the wrong number of columns");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error("policy CSV has no rows");
    std::size_t nx = 0;
    while (nx < rows.size() && rows[nx][0] == rows[0][0]) ++nx;
    if (rows.size() % nx != 0) throw Error("policy CSV does not describe a full grid");
    std::vector<double> times, nodes;
    for (std::size_t r = 0; r < rows.size(); r += nx) times.push_back(rows[r][0]);
    for (std::size_t i = 0; i < nx; ++i) nodes.push_back(rows[i][1]);
    FeedbackPolicy p(times, nodes, box, lipschitz_k);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < k; ++c) p.value(r / nx, r % nx, c) = rows[r][2 + c];
    }
    return p;
}

}  // namespace fbsde
