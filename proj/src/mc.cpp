#include "fbsde/mc.hpp"

#include "fbsde/error.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ostream.h>

namespace fbsde {

namespace {

std::size_t as_size(int v) { return static_cast<std::size_t>(v); }

double window_end(const ProblemSpec& spec, const SimulationSetup& setup) {
    return setup.t_end < 0.0 ? spec.horizon : setup.t_end;
}

// Exponent tuples of all monomials of total degree <= degree in `active`
// coordinates (others get exponent 0), constant first.
std::vector<std::vector<unsigned>> monomials(std::size_t n, const std::vector<bool>& active, unsigned degree) {
    std::vector<std::vector<unsigned>> out{std::vector<unsigned>(n, 0)};
    std::vector<std::vector<unsigned>> frontier = out;
    for (unsigned d = 1; d <= degree; ++d) {
        std::vector<std::vector<unsigned>> next;
        for (const auto& e : frontier) {
            // Raise coordinates at or after the last nonzero one to avoid duplicates.
            std::size_t start = 0;
            for (std::size_t c = 0; c < n; ++c) {
                if (e[c] > 0) start = c;
            }
            for (std::size_t c = start; c < n; ++c) {
                if (!active[c]) continue;
                auto f = e;
                ++f[c];
                next.push_back(std::move(f));
            }
        }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

// Least-squares projection onto a polynomial basis of the state at one knot.
class Projection {
public:
    Projection(const PathEnsemble& e, std::size_t step, unsigned degree, std::vector<std::string>& warnings) {
        const std::size_t P = e.paths;
        const std::size_t n = e.n;
        std::vector<double> centre(n, 0.0), spread(n, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            const auto x = e.state(p, step);
            for (std::size_t c = 0; c < n; ++c) centre[c] += x[c];
        }
        for (auto& c : centre) c /= static_cast<double>(P);
        for (std::size_t p = 0; p < P; ++p) {
            const auto x = e.state(p, step);
            for (std::size_t c = 0; c < n; ++c) spread[c] += (x[c] - centre[c]) * (x[c] - centre[c]);
        }
        std::vector<bool> active(n);
        for (std::size_t c = 0; c < n; ++c) {
            spread[c] = std::sqrt(spread[c] / static_cast<double>(P));
            // A coordinate with no spread (e.g. the start point) only supports a constant.
            active[c] = spread[c] > 1e-300 && spread[c] > 1e-14 * (1.0 + std::abs(centre[c]));
            if (!active[c]) spread[c] = 1.0;
        }
        const auto powers = monomials(n, active, degree);
        basis_.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(powers.size()));
        std::vector<double> s(n);
        for (std::size_t p = 0; p < P; ++p) {
            const auto x = e.state(p, step);
            for (std::size_t c = 0; c < n; ++c) s[c] = (x[c] - centre[c]) / spread[c];
            for (std::size_t q = 0; q < powers.size(); ++q) {
                double v = 1.0;
                for (std::size_t c = 0; c < n; ++c) {
                    for (unsigned r = 0; r < powers[q][c]; ++r) v *= s[c];
                }
                basis_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = v;
            }
        }
        Eigen::MatrixXd normal = basis_.transpose() * basis_;
        solver_.compute(normal);
        const auto d = solver_.vectorD();
        const double top = d.cwiseAbs().maxCoeff();
        if (solver_.info() != Eigen::Success || d.minCoeff() <= 1e-12 * top) {
            normal.diagonal().array() += 1e-10 * static_cast<double>(P);
            solver_.compute(normal);
            warnings.push_back(fmt::format("step {}: rank-deficient regression, ridge 1e-10 applied", step));
        }
    }

    // Fitted conditional expectations of each column of `targets`.
    Eigen::MatrixXd fit(const Eigen::MatrixXd& targets) const {
        const Eigen::MatrixXd coefficients = solver_.solve(basis_.transpose() * targets);
        return basis_ * coefficients;
    }

private:
    Eigen::MatrixXd basis_;
    Eigen::LDLT<Eigen::MatrixXd> solver_;
};

double sample_mean(std::span<const double> v) {
    double s = 0.0;
    for (double a : v) s += a;
    return s / static_cast<double>(v.size());
}

// Per-path running cost on [t0, t_N) plus a terminal value at X_N, with (Y, Z)
// supplied per (path, step).
template <class YZ, class Terminal>
std::vector<double> accumulate(const ProblemSpec& spec, const PathEnsemble& e, unsigned threads, YZ&& yz,
                               Terminal&& terminal) {
    std::vector<double> out(e.paths);
    const double dt = e.dt();
    parallel_for(e.paths, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> z(e.m);
        for (std::size_t p = lo; p < hi; ++p) {
            double total = 0.0;
            for (std::size_t s = 0; s < e.steps; ++s) {
                const double y = yz(p, s, z);
                total += spec.running_cost(e.times[s], e.state(p, s), y, z, e.control(p, s)) * dt;
            }
            total += terminal(e.state(p, e.steps));
            if (!std::isfinite(total)) throw NonFiniteError("path cost", p, e.steps);
            out[p] = total;
        }
    });
    return out;
}

void require_scalar_state(const ProblemSpec& spec, const char* what) {
    if (spec.dims.n != 1 || spec.dims.m != 1) {
        throw ConfigError(fmt::format("{} needs a one-dimensional state and noise", what));
    }
}

void require_cover(const ScalarField& field, double t0, double t1) {
    const GridSpec& grid = field.grid();
    const double slack = 1e-9 * (1.0 + std::abs(grid.t_end));
    if (t0 < grid.t0 - slack || t1 > grid.t_end + slack) {
        throw ConfigError(fmt::format("fields cover [{}, {}] but [{}, {}] is needed", grid.t0, grid.t_end, t0, t1));
    }
}

}  // namespace

// ---------------------------------------------------------------------------

PathEnsemble simulate_forward(const ProblemSpec& spec, const ControlLaw& policy, std::span<const double> x0,
                              const SimulationSetup& setup) {
    spec.validate();
    const double t_end = window_end(spec, setup);
    if (setup.paths == 0) throw ConfigError("paths must be at least 1");
    if (setup.steps == 0) throw ConfigError("steps must be at least 1");
    if (!(t_end > setup.t0)) throw ConfigError("simulation window is empty");
    if (x0.size() != as_size(spec.dims.n)) throw ConfigError("x0 has the wrong dimension");
    if (policy.control_dim() != as_size(spec.dims.k)) throw ConfigError("policy has the wrong control dimension");

    PathEnsemble e;
    e.paths = setup.paths;
    e.steps = setup.steps;
    e.n = as_size(spec.dims.n);
    e.m = as_size(spec.dims.m);
    e.k = as_size(spec.dims.k);
    e.seed = setup.seed;
    e.times.resize(e.steps + 1);
    for (std::size_t s = 0; s <= e.steps; ++s) {
        e.times[s] = setup.t0 + (t_end - setup.t0) * static_cast<double>(s) / static_cast<double>(e.steps);
    }
    e.times.back() = t_end;
    e.x.assign(e.paths * (e.steps + 1) * e.n, 0.0);
    e.db.assign(e.paths * e.steps * e.m, 0.0);
    e.u.assign(e.paths * e.steps * e.k, 0.0);
    e.y.assign(e.paths * (e.steps + 1), 0.0);
    e.z.assign(e.paths * e.steps * e.m, 0.0);

    const double dt = e.dt();
    const double root_dt = std::sqrt(dt);
    parallel_for(e.paths, setup.threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> mu(e.n), sigma(e.n * e.m);
        for (std::size_t p = lo; p < hi; ++p) {
            std::copy(x0.begin(), x0.end(), e.state(p, 0).begin());
            for (std::size_t s = 0; s < e.steps; ++s) {
                const auto x = e.state(p, s);
                auto next = e.state(p, s + 1);
                auto u = std::span<double>(e.u.data() + (p * e.steps + s) * e.k, e.k);
                auto dB = std::span<double>(e.db.data() + (p * e.steps + s) * e.m, e.m);
                policy.evaluate(e.times[s], x, u);
                spec.drift(e.times[s], x, u, mu);
                spec.vol(e.times[s], x, u, sigma);
                for (std::size_t d = 0; d < e.m; ++d) dB[d] = root_dt * rng::normal(e.seed, p, s * e.m + d);
                for (std::size_t c = 0; c < e.n; ++c) {
                    double v = x[c] + mu[c] * dt;
                    for (std::size_t d = 0; d < e.m; ++d) v += sigma[c * e.m + d] * dB[d];
                    if (!std::isfinite(v)) throw NonFiniteError("X", p, s + 1);
                    next[c] = v;
                }
            }
        }
    });
    return e;
}

void backward_regression(const ProblemSpec& spec, PathEnsemble& e, unsigned degree) {
    if (degree == 0) throw ConfigError("basis degree must be at least 1");
    const std::size_t P = e.paths;
    const double dt = e.dt();
    for (std::size_t p = 0; p < P; ++p) {
        e.value(p, e.steps) = spec.bsde_terminal(e.state(p, e.steps));
        if (!std::isfinite(e.value(p, e.steps))) throw NonFiniteError("Y", p, e.steps);
    }
    Eigen::MatrixXd target(static_cast<Eigen::Index>(P), 1);
    Eigen::MatrixXd weighted(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(e.m));
    for (std::size_t s = e.steps; s-- > 0;) {
        const Projection proj(e, s, degree, e.warnings);
        for (std::size_t p = 0; p < P; ++p) target(static_cast<Eigen::Index>(p), 0) = e.value(p, s + 1);
        const Eigen::MatrixXd yhat = proj.fit(target);
        for (std::size_t p = 0; p < P; ++p) {
            const auto i = static_cast<Eigen::Index>(p);
            const double innovation = target(i, 0) - yhat(i, 0);
            const auto dB = e.increment(p, s);
            for (std::size_t d = 0; d < e.m; ++d) weighted(i, static_cast<Eigen::Index>(d)) = innovation * dB[d];
        }
        const Eigen::MatrixXd zfit = proj.fit(weighted);
        for (std::size_t p = 0; p < P; ++p) {
            const auto i = static_cast<Eigen::Index>(p);
            auto z = e.gradient(p, s);
            for (std::size_t d = 0; d < e.m; ++d) z[d] = zfit(i, static_cast<Eigen::Index>(d)) / dt;
            const double h = spec.driver(e.times[s], e.state(p, s), yhat(i, 0), z, e.control(p, s));
            e.value(p, s) = yhat(i, 0) + h * dt;
            if (!std::isfinite(e.value(p, s))) throw NonFiniteError("Y", p, s);
        }
    }
}

CostEstimate summarize(std::span<const double> samples, std::uint64_t seed) {
    CostEstimate c;
    c.paths = samples.size();
    c.seed = seed;
    if (samples.empty()) return c;
    c.mean = sample_mean(samples);
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double a : samples) ss += (a - c.mean) * (a - c.mean);
        const double sd = std::sqrt(ss / static_cast<double>(samples.size() - 1));
        c.std_error = sd / std::sqrt(static_cast<double>(samples.size()));
    }
    return c;
}

std::vector<double> path_costs(const ProblemSpec& spec, const PathEnsemble& e, const CostSource& source,
                               unsigned threads) {
    auto terminal = [&](std::span<const double> x) { return spec.cost_terminal(x); };
    if (source.kind == CostSource::Kind::regression) {
        return accumulate(spec, e, threads,
                          [&](std::size_t p, std::size_t s, std::span<double> z) {
                              const auto zs = e.gradient(p, s);
                              std::copy(zs.begin(), zs.end(), z.begin());
                              return e.value(p, s);
                          },
                          terminal);
    }
    if (source.g == nullptr || source.z == nullptr) throw ConfigError("cost source needs g and z fields");
    require_scalar_state(spec, "field-based cost estimation");
    require_cover(*source.g, e.times.front(), e.times.back());
    return accumulate(spec, e, threads,
                      [&](std::size_t p, std::size_t s, std::span<double> z) {
                          const double x = e.state(p, s)[0];
                          z[0] = source.z->interpolate(e.times[s], x);
                          return source.g->interpolate(e.times[s], x);
                      },
                      terminal);
}

CostEstimate estimate_cost(const ProblemSpec& spec, const ControlLaw& policy, std::span<const double> x0,
                           const SimulationSetup& setup, const CostSource& source) {
    PathEnsemble e = simulate_forward(spec, policy, x0, setup);
    if (source.kind == CostSource::Kind::regression) backward_regression(spec, e, source.degree);
    const auto costs = path_costs(spec, e, source, setup.threads);
    return summarize(costs, setup.seed);
}

// ---------------------------------------------------------------------------

DppReport check_dpp(const ProblemSpec& spec, const ScalarField& v, const ScalarField& g, const ScalarField& z,
                    double t0, double x0, double split, const std::vector<const ControlLaw*>& candidates,
                    const SimulationSetup& setup) {
    require_scalar_state(spec, "check_dpp");
    if (!(split > t0 && split < spec.horizon)) {
        throw ConfigError(fmt::format("split {} lies outside ({}, {})", split, t0, spec.horizon));
    }
    if (candidates.empty()) throw ConfigError("check_dpp needs at least one candidate");
    require_cover(v, t0, split);
    require_cover(g, t0, split);

    SimulationSetup window = setup;
    window.t0 = t0;
    window.t_end = split;
    if (window.steps == 0) {
        window.steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround((split - t0) / v.grid().dt())));
    }

    DppReport report;
    report.lhs = v.interpolate(t0, x0);
    report.discretization = v.grid().dt() + v.grid().dx() * v.grid().dx();
    const double start[1] = {x0};

    std::vector<double> reference;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const PathEnsemble e = simulate_forward(spec, *candidates[c], start, window);
        const auto costs = accumulate(
            spec, e, setup.threads,
            [&](std::size_t p, std::size_t s, std::span<double> zz) {
                const double x = e.state(p, s)[0];
                zz[0] = z.interpolate(e.times[s], x);
                return g.interpolate(e.times[s], x);
            },
            [&](std::span<const double> x) { return v.interpolate(split, x[0]); });
        report.rhs.push_back(summarize(costs, setup.seed));
        if (c == 0) {
            reference = costs;
            report.paired_se.push_back(0.0);
        } else {
            std::vector<double> diff(costs.size());
            for (std::size_t p = 0; p < costs.size(); ++p) diff[p] = costs[p] - reference[p];
            report.paired_se.push_back(summarize(diff, setup.seed).std_error);
        }
    }
    report.best = 0;
    for (std::size_t c = 1; c < report.rhs.size(); ++c) {
        if (report.rhs[c].mean < report.rhs[report.best].mean) report.best = c;
    }
    report.min_rhs = report.rhs[report.best].mean;
    report.gap = report.min_rhs - report.lhs;
    return report;
}

std::vector<FeedbackPolicy> shifted_policies(const FeedbackPolicy& u, std::span<const double> deltas) {
    std::vector<FeedbackPolicy> out;
    const ControlBox& box = u.box();
    const std::size_t k = box.dim();
    for (double delta : deltas) {
        FeedbackPolicy shifted = u;
        for (std::size_t j = 0; j < u.times().size(); ++j) {
            for (std::size_t i = 0; i < u.nodes().size(); ++i) {
                for (std::size_t c = 0; c < k; ++c) {
                    const double width = box.upper[c] - box.lower[c];
                    shifted.value(j, i, c) = std::clamp(u.value(j, i, c) + delta * width, box.lower[c], box.upper[c]);
                }
            }
        }
        out.push_back(std::move(shifted));
    }
    return out;
}

ZIdentity z_identity(const ProblemSpec& spec, const PathEnsemble& e, const ScalarField& g, double inner_fraction) {
    require_scalar_state(spec, "z_identity");
    const GridSpec& grid = g.grid();
    const double half = 0.5 * inner_fraction * (grid.x_hi - grid.x_lo);
    const double mid = 0.5 * (grid.x_lo + grid.x_hi);
    const double h = grid.dx();
    ZIdentity out;
    double dev = 0.0, scale = 0.0;
    for (std::size_t s = 0; s < e.steps; ++s) {
        const double t = e.times[s];
        for (std::size_t p = 0; p < e.paths; ++p) {
            const double x = e.state(p, s)[0];
            if (std::abs(x - mid) > half) continue;
            const double dgdx = (g.interpolate(t, x + h) - g.interpolate(t, x - h)) / (2.0 * h);
            const double target = spec.vol1(t, x, e.control(p, s)) * dgdx;
            dev += std::abs(e.gradient(p, s)[0] - target);
            scale += std::abs(target);
            ++out.samples;
        }
    }
    if (out.samples > 0) {
        out.mean_abs_deviation = dev / static_cast<double>(out.samples);
        out.scale = scale / static_cast<double>(out.samples);
        out.relative = out.scale > 0.0 ? out.mean_abs_deviation / out.scale : out.mean_abs_deviation;
    }
    return out;
}

// ---------------------------------------------------------------------------

void PathEnsemble::write_summary(std::ostream& os) const {
    os << "k,t,mean_X,std_X,mean_Y,mean_Z\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t s = 0; s <= steps; ++s) {
        double mx = 0.0, my = 0.0, mz = 0.0;
        for (std::size_t p = 0; p < paths; ++p) {
            mx += state(p, s)[0];
            my += value(p, s);
            if (s < steps) mz += gradient(p, s)[0];
        }
        const double P = static_cast<double>(paths);
        mx /= P;
        my /= P;
        mz = s < steps ? mz / P : nan;
        double ss = 0.0;
        for (std::size_t p = 0; p < paths; ++p) ss += (state(p, s)[0] - mx) * (state(p, s)[0] - mx);
        const double sd = paths > 1 ? std::sqrt(ss / (P - 1.0)) : 0.0;
        fmt::print(os, "{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s, times[s], mx, sd, my, mz);
    }
}

void PathEnsemble::write_paths(std::ostream& os) const {
    os << "path,k,t,x,y,z,u\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t p = 0; p < paths; ++p) {
        for (std::size_t s = 0; s <= steps; ++s) {
            const double zv = s < steps ? gradient(p, s)[0] : nan;
            const double uv = s < steps ? control(p, s)[0] : nan;
            fmt::print(os, "{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", p, s, times[s], state(p, s)[0],
                       value(p, s), zv, uv);
        }
    }
}

}  // namespace fbsde
