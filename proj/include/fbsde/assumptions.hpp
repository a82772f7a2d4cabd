#pragma once

#include "fbsde/policy.hpp"
#include "fbsde/problem.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fbsde {

// Sampled estimates of the Lipschitz / linear-growth constants of mu, sigma,
// h and Phi, and of the time variation of a feedback policy. Falsification
// only: a pass means no counterexample was found in the sampling box.
struct CoefficientEstimate {
    std::string name;
    double lipschitz = 0.0;  // sup |c(p1) - c(p2)| / (|dx| + |dy| + |dz| + |du|)
    double growth = 0.0;     // sup |c(p)| / (1 + |x| + |u|)
    bool lipschitz_ok = false;
    bool growth_ok = false;
};

struct VariationEstimate {
    double x = 0.0;
    double total_variation = 0.0;
};

struct AssumptionReport {
    std::vector<CoefficientEstimate> coefficients;  // mu, sigma, h, phi
    std::vector<VariationEstimate> variation;       // empty without a policy
    double sup_u_at_zero = 0.0;
    double variation_ratio = 0.0;  // max over x of (V[u(.,x)] + sup_s |u(s,0)|) / (1 + |x|)
    bool variation_ok = true;
    std::size_t budget = 0;
    std::uint64_t seed = 0;

    const CoefficientEstimate& coefficient(const std::string& name) const;
    bool all_ok() const;
};

struct AssumptionOptions {
    double radius = 10.0;         // box |x|, |y|, |z| <= radius
    double lipschitz_c = 1.0;
    double growth_c = 1.0;
    double variation_c = 1.0;
    const ControlLaw* policy = nullptr;
    std::size_t variation_points = 32;
    unsigned threads = 1;
};

// budget >= 100 samples. Deterministic in (budget, seed) regardless of threads.
AssumptionReport check_assumptions(const ProblemSpec& spec, std::size_t budget, std::uint64_t seed,
                                   const AssumptionOptions& options = {});

}  // namespace fbsde
