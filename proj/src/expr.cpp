#include "fbsde/expr.hpp"

#include "fbsde/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace fbsde {

namespace {

bool is_unary_function(Expr::Op op) {
    switch (op) {
    case Expr::Op::neg:
    case Expr::Op::exp:
    case Expr::Op::log:
    case Expr::Op::sqrt:
    case Expr::Op::abs:
    case Expr::Op::tanh:
        return true;
    default:
        return false;
    }
}

const char* function_name(Expr::Op op) {
    switch (op) {
    case Expr::Op::exp: return "exp";
    case Expr::Op::log: return "log";
    case Expr::Op::sqrt: return "sqrt";
    case Expr::Op::abs: return "abs";
    case Expr::Op::tanh: return "tanh";
    case Expr::Op::min: return "min";
    case Expr::Op::max: return "max";
    case Expr::Op::pow: return "pow";
    default: return "";
    }
}

struct FunctionInfo {
    std::string_view name;
    Expr::Op op;
    int arity;
};

constexpr std::array<FunctionInfo, 8> kFunctions{{
    {"exp", Expr::Op::exp, 1},
    {"log", Expr::Op::log, 1},
    {"sqrt", Expr::Op::sqrt, 1},
    {"abs", Expr::Op::abs, 1},
    {"tanh", Expr::Op::tanh, 1},
    {"min", Expr::Op::min, 2},
    {"max", Expr::Op::max, 2},
    {"pow", Expr::Op::pow, 2},
}};

char slot_letter(VarSlot s) {
    switch (s) {
    case VarSlot::t: return 't';
    case VarSlot::x: return 'x';
    case VarSlot::y: return 'y';
    case VarSlot::z: return 'z';
    case VarSlot::u: return 'u';
    }
    return '?';
}

}  // namespace

// ---------------------------------------------------------------------------
// Tree construction

std::int32_t Expr::append(const Expr& other) {
    const auto offset = static_cast<std::int32_t>(nodes_.size());
    for (Node n : other.nodes_) {
        if (n.lhs >= 0) n.lhs += offset;
        if (n.rhs >= 0) n.rhs += offset;
        nodes_.push_back(n);
    }
    return static_cast<std::int32_t>(nodes_.size()) - 1;
}

Expr Expr::constant(double v) {
    Expr e;
    e.nodes_.push_back(Node{Op::constant, v});
    e.compile();
    return e;
}

Expr Expr::variable(VarSlot slot, std::uint16_t index) {
    Expr e;
    Node n{Op::variable};
    n.slot = slot;
    n.index = index;
    e.nodes_.push_back(n);
    e.compile();
    return e;
}

Expr Expr::unary(Op op, const Expr& operand) {
    Expr e;
    Node n{op};
    n.lhs = e.append(operand);
    e.nodes_.push_back(n);
    e.compile();
    return e;
}

Expr Expr::binary(Op op, const Expr& lhs, const Expr& rhs) {
    Expr e;
    Node n{op};
    n.lhs = e.append(lhs);
    n.rhs = e.append(rhs);
    e.nodes_.push_back(n);
    e.compile();
    return e;
}

// Children always precede their parent in nodes_, and every subtree occupies a
// contiguous range ending at its root, so the node array already is a valid
// postfix program. Only the stack depth needs computing.
void Expr::compile() {
    program_ = nodes_;
    std::size_t depth = 0;
    std::size_t max_depth = 0;
    for (const Node& n : program_) {
        if (n.op == Op::constant || n.op == Op::variable) {
            ++depth;
        } else if (!is_unary_function(n.op)) {
            --depth;
        }
        max_depth = std::max(max_depth, depth);
    }
    stack_depth_ = max_depth;
}

// ---------------------------------------------------------------------------
// Evaluation

double Expr::evaluate(const EvalPoint& p) const {
    constexpr std::size_t kInline = 64;
    std::array<double, kInline> inline_stack;
    std::vector<double> heap_stack;
    double* stack = inline_stack.data();
    if (stack_depth_ > kInline) {
        heap_stack.resize(stack_depth_);
        stack = heap_stack.data();
    }
    std::size_t top = 0;

    auto component = [](std::span<const double> v, std::uint16_t i) {
        return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
    };

    for (const Node& n : program_) {
        switch (n.op) {
        case Op::constant:
            stack[top++] = n.value;
            break;
        case Op::variable:
            switch (n.slot) {
            case VarSlot::t: stack[top++] = p.t; break;
            case VarSlot::y: stack[top++] = p.y; break;
            case VarSlot::x: stack[top++] = component(p.x, n.index); break;
            case VarSlot::z: stack[top++] = component(p.z, n.index); break;
            case VarSlot::u: stack[top++] = component(p.u, n.index); break;
            }
            break;
        case Op::neg: stack[top - 1] = -stack[top - 1]; break;
        case Op::exp: stack[top - 1] = std::exp(stack[top - 1]); break;
        case Op::log: stack[top - 1] = std::log(stack[top - 1]); break;
        case Op::sqrt: stack[top - 1] = std::sqrt(stack[top - 1]); break;
        case Op::abs: stack[top - 1] = std::abs(stack[top - 1]); break;
        case Op::tanh: stack[top - 1] = std::tanh(stack[top - 1]); break;
        default: {
            const double b = stack[--top];
            double& a = stack[top - 1];
            switch (n.op) {
            case Op::add: a = a + b; break;
            case Op::sub: a = a - b; break;
            case Op::mul: a = a * b; break;
            case Op::div: a = a / b; break;
            case Op::pow: a = std::pow(a, b); break;
            case Op::min: a = std::min(a, b); break;
            case Op::max: a = std::max(a, b); break;
            default: break;
            }
        }
        }
    }
    return top == 1 ? stack[0] : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Printing

std::string Expr::render(std::int32_t id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
    case Op::constant:
        // Negative literals are not in the grammar; emit them as unary minus.
        if (std::signbit(n.value)) return fmt::format("(-{:.17g})", -n.value);
        return fmt::format("{:.17g}", n.value);
    case Op::variable:
        if (n.slot == VarSlot::t || n.slot == VarSlot::y) return std::string(1, slot_letter(n.slot));
        return fmt::format("{}{}", slot_letter(n.slot), n.index + 1);
    case Op::neg: return fmt::format("(-{})", render(n.lhs));
    case Op::add: return fmt::format("({}+{})", render(n.lhs), render(n.rhs));
    case Op::sub: return fmt::format("({}-{})", render(n.lhs), render(n.rhs));
    case Op::mul: return fmt::format("({}*{})", render(n.lhs), render(n.rhs));
    case Op::div: return fmt::format("({}/{})", render(n.lhs), render(n.rhs));
    case Op::pow: return fmt::format("({}^{})", render(n.lhs), render(n.rhs));
    case Op::min:
    case Op::max: return fmt::format("{}({},{})", function_name(n.op), render(n.lhs), render(n.rhs));
    default: return fmt::format("{}({})", function_name(n.op), render(n.lhs));
    }
}

std::string Expr::to_string() const {
    if (nodes_.empty()) return {};
    return render(static_cast<std::int32_t>(nodes_.size()) - 1);
}

// ---------------------------------------------------------------------------
// Parsing

class ExprBuilder {
public:
    ExprBuilder(std::string_view src, const std::vector<std::string>& allowed)
        : src_(src), allowed_(allowed) {}

    Expr run() {
        skip_ws();
        if (pos_ >= src_.size()) fail(ParseError::Kind::syntax, pos_, "empty expression");
        Expr e = parse_sum();
        skip_ws();
        if (pos_ < src_.size()) {
            fail(ParseError::Kind::syntax, pos_, fmt::format("unexpected '{}'", src_[pos_]));
        }
        e.source_ = std::string(src_);
        return e;
    }

private:
    [[noreturn]] static void fail(ParseError::Kind kind, std::size_t pos, const std::string& msg) {
        throw ParseError(kind, pos, msg);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) {
            if (pos_ >= src_.size()) fail(ParseError::Kind::syntax, pos_, fmt::format("expected '{}' before end of input", c));
            fail(ParseError::Kind::syntax, pos_, fmt::format("expected '{}' but found '{}'", c, src_[pos_]));
        }
    }

    Expr parse_sum() {
        Expr lhs = parse_product();
        for (;;) {
            if (accept('+')) {
                lhs = Expr::binary(Expr::Op::add, lhs, parse_product());
            } else if (accept('-')) {
                lhs = Expr::binary(Expr::Op::sub, lhs, parse_product());
            } else {
                return lhs;
            }
        }
    }

    Expr parse_product() {
        Expr lhs = parse_unary();
        for (;;) {
            if (accept('*')) {
                lhs = Expr::binary(Expr::Op::mul, lhs, parse_unary());
            } else if (accept('/')) {
                lhs = Expr::binary(Expr::Op::div, lhs, parse_unary());
            } else {
                return lhs;
            }
        }
    }

    Expr parse_unary() {
        if (accept('-')) return Expr::unary(Expr::Op::neg, parse_unary());
        if (accept('+')) return parse_unary();
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_primary();
        if (accept('^')) return Expr::binary(Expr::Op::pow, base, parse_unary());
        return base;
    }

    Expr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail(ParseError::Kind::syntax, pos_, "unexpected end of input");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_sum();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
        fail(ParseError::Kind::syntax, pos_, fmt::format("unexpected '{}'", c));
    }

    Expr parse_number() {
        const std::size_t start = pos_;
        auto digits = [&] {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        };
        digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            digits();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                digits();
            } else {
                pos_ = save;
            }
        }
        double value = 0.0;
        const auto* first = src_.data() + start;
        const auto* last = src_.data() + pos_;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || ptr != last) fail(ParseError::Kind::syntax, start, "malformed number");
        return Expr::constant(value);
    }

    Expr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
            ++pos_;
        }
        const std::string_view name = src_.substr(start, pos_ - start);

        for (const auto& fn : kFunctions) {
            if (fn.name != name) continue;
            skip_ws();
            if (pos_ >= src_.size() || src_[pos_] != '(') {
                fail(ParseError::Kind::syntax, pos_, fmt::format("expected '(' after function '{}'", name));
            }
            ++pos_;
            Expr a = parse_sum();
            if (fn.arity == 1) {
                expect(')');
                return Expr::unary(fn.op, a);
            }
            expect(',');
            Expr b = parse_sum();
            expect(')');
            return Expr::binary(fn.op, a, b);
        }

        VarSlot slot{};
        std::uint16_t index = 0;
        if (!resolve_variable(name, slot, index)) {
            fail(ParseError::Kind::unknown_identifier, start, fmt::format("unknown identifier '{}'", name));
        }
        if (std::find(allowed_.begin(), allowed_.end(), name) == allowed_.end()) {
            fail(ParseError::Kind::variable_not_allowed, start,
                 fmt::format("variable '{}' is not allowed in this coefficient", name));
        }
        return Expr::variable(slot, index);
    }

    static bool resolve_variable(std::string_view name, VarSlot& slot, std::uint16_t& index) {
        if (name.empty()) return false;
        switch (name[0]) {
        case 't': slot = VarSlot::t; break;
        case 'y': slot = VarSlot::y; break;
        case 'x': slot = VarSlot::x; break;
        case 'z': slot = VarSlot::z; break;
        case 'u': slot = VarSlot::u; break;
        default: return false;
        }
        if (name.size() == 1) {
            index = 0;
            return true;
        }
        if (slot == VarSlot::t || slot == VarSlot::y) return false;
        unsigned value = 0;
        auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), value);
        if (ec != std::errc() || ptr != name.data() + name.size() || value == 0 || name[1] == '0' ||
            value > 65535) {
            return false;
        }
        index = static_cast<std::uint16_t>(value - 1);
        return true;
    }

    std::string_view src_;
    const std::vector<std::string>& allowed_;
    std::size_t pos_ = 0;
};

Expr parse_expression(std::string_view source, const std::vector<std::string>& allowed) {
    return ExprBuilder(source, allowed).run();
}

std::vector<std::string> variables_for(std::string_view signature, int n, int m, int k) {
    std::vector<std::string> out;
    auto add_vector = [&](char letter, int dim) {
        out.emplace_back(1, letter);
        for (int i = 1; i <= dim; ++i) out.push_back(fmt::format("{}{}", letter, i));
    };
    for (char c : signature) {
        switch (c) {
        case 't': out.emplace_back("t"); break;
        case 'y': out.emplace_back("y"); break;
        case 'x': add_vector('x', n); break;
        case 'z': add_vector('z', m); break;
        case 'u': add_vector('u', k); break;
        default: break;
        }
    }
    return out;
}

}  // namespace fbsde
