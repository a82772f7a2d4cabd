#pragma once

#include "fbsde/problem.hpp"

#include <functional>
#include <span>
#include <vector>

namespace fbsde {

// A Markov feedback control u(t, x).
class ControlLaw {
public:
    virtual ~ControlLaw() = default;

    virtual std::size_t control_dim() const = 0;
    virtual void evaluate(double t, std::span<const double> x, std::span<double> u) const = 0;

    // Times at which the law may jump; empty if unknown.
    virtual std::vector<double> time_knots() const { return {}; }
};

class ConstantPolicy final : public ControlLaw {
public:
    explicit ConstantPolicy(std::vector<double> value) : value_(std::move(value)) {}

    std::size_t control_dim() const override { return value_.size(); }
    void evaluate(double, std::span<const double>, std::span<double> u) const override;

private:
    std::vector<double> value_;
};

class FunctionPolicy final : public ControlLaw {
public:
    using Fn = std::function<void(double, std::span<const double>, std::span<double>)>;

    FunctionPolicy(std::size_t k, Fn fn) : k_(k), fn_(std::move(fn)) {}

    std::size_t control_dim() const override { return k_; }
    void evaluate(double t, std::span<const double> x, std::span<double> u) const override { fn_(t, x, u); }

private:
    std::size_t k_;
    Fn fn_;
};

// Grid-sampled policy on a 1-D state. Piecewise linear in x (clamped at the
// spatial edges), piecewise constant and right-continuous in t: on
// [t_j, t_{j+1}) slice j applies, and t >= t_N uses the last slice.
class FeedbackPolicy final : public ControlLaw {
public:
    FeedbackPolicy() = default;
    FeedbackPolicy(std::vector<double> times, std::vector<double> nodes, ControlBox box, double lipschitz_k);

    static FeedbackPolicy constant(std::vector<double> times, std::vector<double> nodes, ControlBox box,
                                   double lipschitz_k, std::span<const double> value);

    std::size_t control_dim() const override { return box_.dim(); }
    void evaluate(double t, std::span<const double> x, std::span<double> u) const override;
    std::vector<double> time_knots() const override { return times_; }

    double value(std::size_t slice, std::size_t node, std::size_t c = 0) const {
        return values_[(slice * nodes_.size() + node) * box_.dim() + c];
    }
    double& value(std::size_t slice, std::size_t node, std::size_t c = 0) {
        return values_[(slice * nodes_.size() + node) * box_.dim() + c];
    }
    std::span<const double> at(std::size_t slice, std::size_t node) const {
        return {values_.data() + (slice * nodes_.size() + node) * box_.dim(), box_.dim()};
    }
    // All controls of one time slice, node-major.
    std::span<double> slice(std::size_t j) {
        return {values_.data() + j * nodes_.size() * box_.dim(), nodes_.size() * box_.dim()};
    }
    std::span<const double> slice(std::size_t j) const {
        return {values_.data() + j * nodes_.size() * box_.dim(), nodes_.size() * box_.dim()};
    }

    std::size_t slice_index(double t) const;

    const std::vector<double>& times() const noexcept { return times_; }
    const std::vector<double>& nodes() const noexcept { return nodes_; }
    const ControlBox& box() const noexcept { return box_; }
    double lipschitz_k() const noexcept { return k_; }
    const std::vector<double>& values() const noexcept { return values_; }

    // Largest amount by which an adjacent-node difference exceeds K*dx
    // (sup-norm over control coordinates); <= 0 for an admissible slice set.
    double lipschitz_excess() const;
    bool in_box() const;

    // Throws ConfigError if a sample leaves U or a slice breaks the bound.
    void validate() const;

private:
    std::vector<double> times_;
    std::vector<double> nodes_;
    ControlBox box_;
    double k_ = 0.0;
    std::vector<double> values_;
};

}  // namespace fbsde
