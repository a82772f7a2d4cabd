#pragma once

// Coefficient mini-language.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?          right associative, binds tighter than unary minus
//   primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//
// Variables are t, y and x, z, u. For vector-valued arguments the components are
// x1..xn, z1..zm, u1..uk; plain x, z, u alias the first component. Functions:
// exp log sqrt abs tanh (one argument), min max pow (two arguments).

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fbsde {

enum class VarSlot : std::uint8_t { t, x, y, z, u };

// Arguments an expression may read. Spans may be empty for slots the
// expression is not allowed to use.
struct EvalPoint {
    double t = 0.0;
    std::span<const double> x{};
    double y = 0.0;
    std::span<const double> z{};
    std::span<const double> u{};
};

class Expr {
public:
    enum class Op : std::uint8_t {
        constant, variable, neg, add, sub, mul, div, pow,
        exp, log, sqrt, abs, tanh, min, max,
    };

    struct Node {
        Op op;
        double value = 0.0;  // constant
        VarSlot slot = VarSlot::t;
        std::uint16_t index = 0;  // component for x/z/u
        std::int32_t lhs = -1;
        std::int32_t rhs = -1;
    };

    Expr() = default;

    double evaluate(const EvalPoint& p) const;

    // Fully parenthesised rendering that parses back to the same tree.
    std::string to_string() const;

    const std::string& source() const noexcept { return source_; }
    bool empty() const noexcept { return nodes_.empty(); }

    // Builders, used by the parser and by tests that generate random trees.
    static Expr constant(double v);
    static Expr variable(VarSlot slot, std::uint16_t index = 0);
    static Expr unary(Op op, const Expr& operand);
    static Expr binary(Op op, const Expr& lhs, const Expr& rhs);

private:
    friend class ExprBuilder;

    std::int32_t append(const Expr& other);
    void compile();
    std::string render(std::int32_t id) const;

    std::vector<Node> nodes_;  // root is the last node
    std::vector<Node> program_;  // postfix order
    std::size_t stack_depth_ = 0;
    std::string source_;
};

// Parse `source`, accepting only variables whose names appear in `allowed`
// (e.g. {"t", "x", "u"}). Throws ParseError.
Expr parse_expression(std::string_view source, const std::vector<std::string>& allowed);

// Allowed-variable lists for the standard coefficient signatures, expanded
// with indexed components when a dimension exceeds one.
std::vector<std::string> variables_for(std::string_view signature, int n, int m, int k);

}  // namespace fbsde
