#pragma once

#include "fbsde/expr.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

struct Dimensions {
    int n = 1;  // state
    int m = 1;  // noise
    int k = 1;  // control
};

// Axis-aligned box U in R^k.
struct ControlBox {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t dim() const noexcept { return lower.size(); }
    bool contains(std::span<const double> u) const;
    void clamp(std::span<double> u) const;
    std::vector<double> midpoint() const;
    bool is_point() const;

    static ControlBox interval(double lo, double hi) { return {{lo}, {hi}}; }
};

// out has size n.
using DriftFn = std::function<void(double t, std::span<const double> x, std::span<const double> u,
                                   std::span<double> out)>;
// out has size n*m, row-major.
using VolFn = DriftFn;
using DriverFn = std::function<double(double t, std::span<const double> x, double y,
                                      std::span<const double> z, std::span<const double> u)>;
using TerminalFn = std::function<double(std::span<const double> x)>;
using ScalarFn = std::function<double(double)>;

// Nonlinear term gamma(Y_t) of the cost. Missing derivatives are replaced by
// central differences with step 1e-5.
struct GammaTerm {
    ScalarFn value;
    ScalarFn first;   // optional
    ScalarFn second;  // optional
};

enum class Sense { minimize, maximize };

// Full problem description. The solver always minimises; a problem with
// Sense::maximize already carries negated f and G and only the reported value
// is flipped back.
struct ProblemSpec {
    std::string name;
    Dimensions dims;
    double horizon = 1.0;
    DriftFn drift;
    VolFn vol;
    DriverFn driver;
    DriverFn running_cost;
    TerminalFn bsde_terminal;
    TerminalFn cost_terminal;
    std::optional<GammaTerm> gamma;
    ControlBox control;
    double lipschitz_k = 0.0;
    Sense sense = Sense::minimize;

    // Throws ConfigError when an invariant is broken.
    void validate() const;

    double reported_value_sign() const noexcept { return sense == Sense::maximize ? -1.0 : 1.0; }

    // Scalar shortcuts for n = m = 1.
    double drift1(double t, double x, std::span<const double> u) const;
    double vol1(double t, double x, std::span<const double> u) const;
    double driver1(double t, double x, double y, double z, std::span<const double> u) const;
    double running_cost1(double t, double x, double y, double z, std::span<const double> u) const;
    double bsde_terminal1(double x) const;
    double cost_terminal1(double x) const;
};

// Expression text for every coefficient. Vector/matrix coefficients hold one
// entry per component (sigma row-major).
struct ExpressionSet {
    std::vector<std::string> mu;
    std::vector<std::string> sigma;
    std::string h = "0";
    std::string f = "0";
    std::string phi = "x";
    std::string g_terminal = "0";
    std::optional<std::string> gamma;
    std::optional<std::string> gamma_y;
    std::optional<std::string> gamma_yy;
};

// Compile an expression for a coefficient signature ("txu", "txyzu", "x", "y").
Expr parse_coefficient(std::string_view source, const std::vector<std::string>& allowed);

ProblemSpec problem_from_expressions(const ExpressionSet& exprs, Dimensions dims, double horizon,
                                     ControlBox control, double lipschitz_k, std::string name = "expressions");

// f~ = f + h*gamma'(y) - 1/2 |z|^2 gamma''(y),  G~ = G + gamma(Phi(x)).
// Throws ConfigError when spec.gamma is absent.
ProblemSpec transform_gamma(const ProblemSpec& spec);

// Applies transform_gamma when a gamma term is present, otherwise returns a copy.
ProblemSpec resolve_gamma(const ProblemSpec& spec);

}  // namespace fbsde
