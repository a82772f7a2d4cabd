#include "fbsde/assumptions.hpp"

#include "fbsde/error.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace fbsde {

namespace {

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double a : v) s += a * a;
    return std::sqrt(s);
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

struct Point {
    double t = 0.0;
    std::vector<double> x, z, u;
    double y = 0.0;
};

struct Values {
    std::vector<double> mu, sigma;
    double h = 0.0;
    double phi = 0.0;
};

constexpr std::size_t kCoefficients = 4;  // mu, sigma, h, phi

Values evaluate(const ProblemSpec& spec, const Point& p) {
    Values v;
    v.mu.resize(static_cast<std::size_t>(spec.dims.n));
    v.sigma.resize(static_cast<std::size_t>(spec.dims.n * spec.dims.m));
    spec.drift(p.t, p.x, p.u, v.mu);
    spec.vol(p.t, p.x, p.u, v.sigma);
    v.h = spec.driver(p.t, p.x, p.y, p.z, p.u);
    v.phi = spec.bsde_terminal(p.x);
    return v;
}

}  // namespace

const CoefficientEstimate& AssumptionReport::coefficient(const std::string& name) const {
    for (const auto& c : coefficients) {
        if (c.name == name) return c;
    }
    throw Error("no coefficient estimate named " + name);
}

bool AssumptionReport::all_ok() const {
    return variation_ok && std::all_of(coefficients.begin(), coefficients.end(),
                                       [](const auto& c) { return c.lipschitz_ok && c.growth_ok; });
}

AssumptionReport check_assumptions(const ProblemSpec& spec, std::size_t budget, std::uint64_t seed,
                                   const AssumptionOptions& options) {
    if (budget < 100) throw ConfigError("check_assumptions: budget must be at least 100");
    spec.validate();
    const auto n = static_cast<std::size_t>(spec.dims.n);
    const auto m = static_cast<std::size_t>(spec.dims.m);
    const auto k = static_cast<std::size_t>(spec.dims.k);
    const double r = options.radius;

    // Per-sample maxima, reduced afterwards so the result does not depend on
    // how samples are split across workers.
    std::vector<std::array<double, kCoefficients>> lip(budget), growth(budget);

    parallel_for(budget, options.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t s = lo; s < hi; ++s) {
            rng::Stream stream(seed, s);
            auto draw_point = [&](Point& p) {
                p.t = stream.uniform(0.0, spec.horizon);
                p.x.resize(n);
                p.z.resize(m);
                p.u.resize(k);
                for (auto& a : p.x) a = stream.uniform(-r, r);
                p.y = stream.uniform(-r, r);
                for (auto& a : p.z) a = stream.uniform(-r, r);
                for (std::size_t c = 0; c < k; ++c) {
                    p.u[c] = stream.uniform(spec.control.lower[c], spec.control.upper[c]);
                }
            };
            Point p1;
            draw_point(p1);
            // Perturb one argument group at a time (x, y, z, u) or all of them,
            // so a coefficient's constant in one variable is not diluted by the
            // others in the denominator.
            Point p2 = p1;
            const std::size_t group = s % 5;
            if (group == 0 || group == 4) {
                for (auto& a : p2.x) a = stream.uniform(-r, r);
            }
            if (group == 1 || group == 4) p2.y = stream.uniform(-r, r);
            if (group == 2 || group == 4) {
                for (auto& a : p2.z) a = stream.uniform(-r, r);
            }
            if (group == 3 || group == 4) {
                for (std::size_t c = 0; c < k; ++c) {
                    p2.u[c] = stream.uniform(spec.control.lower[c], spec.control.upper[c]);
                }
            }

            const Values a = evaluate(spec, p1);
            const Values b = evaluate(spec, p2);
            const double dx = distance(p1.x, p2.x);
            const double dy = std::abs(p1.y - p2.y);
            const double dz = distance(p1.z, p2.z);
            const double du = distance(p1.u, p2.u);
            const double denom_xu = dx + du;
            const double denom_all = dx + dy + dz + du;

            std::array<double, kCoefficients> diff{distance(a.mu, b.mu), distance(a.sigma, b.sigma),
                                                   std::abs(a.h - b.h), std::abs(a.phi - b.phi)};
            std::array<double, kCoefficients> denom{denom_xu, denom_xu, denom_all, dx};
            for (std::size_t c = 0; c < kCoefficients; ++c) {
                lip[s][c] = denom[c] > 0.0 ? diff[c] / denom[c] : 0.0;
                if (!std::isfinite(lip[s][c])) {
                    throw NonFiniteError("assumption sample", s, c);
                }
            }
            const double scale = 1.0 + norm(p1.x) + norm(p1.u);
            growth[s] = {norm(a.mu) / scale, norm(a.sigma) / scale, std::abs(a.h) / scale,
                         std::abs(a.phi) / (1.0 + norm(p1.x))};
        }
    });

    AssumptionReport report;
    report.budget = budget;
    report.seed = seed;
    const std::array<const char*, kCoefficients> names{"mu", "sigma", "h", "phi"};
    for (std::size_t c = 0; c < kCoefficients; ++c) {
        CoefficientEstimate e;
        e.name = names[c];
        for (std::size_t s = 0; s < budget; ++s) {
            e.lipschitz = std::max(e.lipschitz, lip[s][c]);
            e.growth = std::max(e.growth, growth[s][c]);
        }
        e.lipschitz_ok = e.lipschitz <= options.lipschitz_c;
        e.growth_ok = e.growth <= options.growth_c;
        report.coefficients.push_back(e);
    }

    if (options.policy != nullptr) {
        const ControlLaw& law = *options.policy;
        std::vector<double> times = law.time_knots();
        if (times.size() < 2) {
            constexpr std::size_t mesh = 1001;
            times.resize(mesh);
            for (std::size_t i = 0; i < mesh; ++i) {
                times[i] = spec.horizon * static_cast<double>(i) / static_cast<double>(mesh - 1);
            }
        }
        const std::size_t kd = law.control_dim();
        std::vector<double> prev(kd), cur(kd), x(n, 0.0);

        for (double t : times) {
            law.evaluate(t, x, cur);
            report.sup_u_at_zero = std::max(report.sup_u_at_zero, norm(cur));
        }

        // Stream id `budget` is past every sample stream.
        rng::Stream stream(seed, budget);
        for (std::size_t q = 0; q < options.variation_points; ++q) {
            for (auto& a : x) a = stream.uniform(-r, r);
            double tv = 0.0;
            law.evaluate(times.front(), x, prev);
            for (std::size_t i = 1; i < times.size(); ++i) {
                law.evaluate(times[i], x, cur);
                tv += distance(prev, cur);
                std::swap(prev, cur);
            }
            report.variation.push_back({x.front(), tv});
            report.variation_ratio =
                std::max(report.variation_ratio, (tv + report.sup_u_at_zero) / (1.0 + norm(x)));
        }
        report.variation_ok = report.variation_ratio <= options.variation_c;
    }
    return report;
}

}  // namespace fbsde
