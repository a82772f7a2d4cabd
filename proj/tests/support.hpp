#pragma once

#include "fbsde/problem.hpp"

#include <string>

namespace testing {

struct Scalar {
    std::string mu = "0";
    std::string sigma = "1";
    std::string h = "0";
    std::string f = "0";
    std::string phi = "x";
    std::string g_terminal = "0";
    double lo = 0.0;
    double hi = 0.0;
    double k = 1.0;
    double horizon = 1.0;
};

// One-dimensional problem from expression text.
inline fbsde::ProblemSpec scalar_problem(const Scalar& s) {
    fbsde::ExpressionSet e;
    e.mu = {s.mu};
    e.sigma = {s.sigma};
    e.h = s.h;
    e.f = s.f;
    e.phi = s.phi;
    e.g_terminal = s.g_terminal;
    return fbsde::problem_from_expressions(e, {1, 1, 1}, s.horizon, fbsde::ControlBox::interval(s.lo, s.hi), s.k,
                                           "test");
}

}  // namespace testing
