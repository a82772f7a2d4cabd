#include "fbsde/policy.hpp"

#include "fbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace fbsde {

void ConstantPolicy::evaluate(double, std::span<const double>, std::span<double> u) const {
    std::copy(value_.begin(), value_.end(), u.begin());
}

FeedbackPolicy::FeedbackPolicy(std::vector<double> times, std::vector<double> nodes, ControlBox box,
                               double lipschitz_k)
    : times_(std::move(times)), nodes_(std::move(nodes)), box_(std::move(box)), k_(lipschitz_k) {
    if (times_.empty()) throw ConfigError("policy needs at least one time knot");
    if (nodes_.empty()) throw ConfigError("policy needs at least one spatial node");
    for (std::size_t j = 1; j < times_.size(); ++j) {
        if (!(times_[j] > times_[j - 1])) throw ConfigError("policy time knots must be strictly increasing");
    }
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        if (!(nodes_[i] > nodes_[i - 1])) throw ConfigError("policy nodes must be strictly increasing");
    }
    values_.assign(times_.size() * nodes_.size() * box_.dim(), 0.0);
}

FeedbackPolicy FeedbackPolicy::constant(std::vector<double> times, std::vector<double> nodes, ControlBox box,
                                        double lipschitz_k, std::span<const double> value) {
    FeedbackPolicy p(std::move(times), std::move(nodes), std::move(box), lipschitz_k);
    const std::size_t k = p.box_.dim();
    for (std::size_t q = 0; q < p.values_.size(); ++q) p.values_[q] = value[q % k];
    return p;
}

std::size_t FeedbackPolicy::slice_index(double t) const {
    // Last knot <= t; times before the first knot use slice 0.
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 0;
    return static_cast<std::size_t>(std::distance(times_.begin(), it)) - 1;
}

void FeedbackPolicy::evaluate(double t, std::span<const double> x, std::span<double> u) const {
    const std::size_t j = slice_index(t);
    const std::size_t k = box_.dim();
    const double xc = std::clamp(x[0], nodes_.front(), nodes_.back());
    if (nodes_.size() == 1) {
        for (std::size_t c = 0; c < k; ++c) u[c] = value(j, 0, c);
        return;
    }
    auto it = std::upper_bound(nodes_.begin(), nodes_.end(), xc);
    std::size_t hi = static_cast<std::size_t>(std::distance(nodes_.begin(), it));
    hi = std::clamp<std::size_t>(hi, 1, nodes_.size() - 1);
    const std::size_t lo = hi - 1;
    const double w = (xc - nodes_[lo]) / (nodes_[hi] - nodes_[lo]);
    for (std::size_t c = 0; c < k; ++c) {
        const double a = value(j, lo, c);
        const double b = value(j, hi, c);
        u[c] = a + w * (b - a);
    }
    box_.clamp(u);
}

double FeedbackPolicy::lipschitz_excess() const {
    double worst = -std::numeric_limits<double>::infinity();
    const std::size_t k = box_.dim();
    for (std::size_t j = 0; j < times_.size(); ++j) {
        for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
            const double bound = k_ * (nodes_[i + 1] - nodes_[i]);
            for (std::size_t c = 0; c < k; ++c) {
                worst = std::max(worst, std::abs(value(j, i + 1, c) - value(j, i, c)) - bound);
            }
        }
    }
    return worst;
}

bool FeedbackPolicy::in_box() const {
    for (std::size_t j = 0; j < times_.size(); ++j) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!box_.contains(at(j, i))) return false;
        }
    }
    return true;
}

void FeedbackPolicy::validate() const {
    if (!in_box()) throw ConfigError("policy sample outside the control box");
    // Rounding in u_i + K*dx can leave a difference a few ulps above K*dx.
    const double slack = 1e-12 * std::max(1.0, k_ * (nodes_.back() - nodes_.front()));
    if (nodes_.size() > 1 && lipschitz_excess() > slack) {
        throw ConfigError(fmt::format("policy violates the Lipschitz bound K = {}", k_));
    }
}

}  // namespace fbsde
