#pragma once

// Scalar expressions in one variable, used for analytic profiles in configs.
//
// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | primary
//   primary := number | 'pi' | variable | func '(' args ')' | '(' expr ')'
//   func    := sin | cos | exp | log | pow      (pow takes two arguments)
//
// Exactly one variable name is accepted per expression ("t" for time profiles,
// "xi" for space profiles). Derivatives are formed symbolically.

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>

#include "vstring/common.hpp"

namespace vstring {

class Expression {
public:
    enum class Op { Const, Var, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp, Log, Pow };

    static Expression parse(std::string_view text, std::string_view variable);

    double operator()(double x) const { return eval(*root_, x); }

    /// d/dx of this expression.
    Expression derivative() const { return Expression(diff(root_), variable_); }

    bool is_constant() const { return root_->op == Op::Const; }
    const std::string& variable() const { return variable_; }
    std::string to_string() const { return render(*root_); }

private:
    struct Node;
    using NodePtr = std::shared_ptr<const Node>;
    struct Node {
        Op op;
        double value = 0.0;
        NodePtr a, b;
    };

    Expression(NodePtr root, std::string variable) : root_(std::move(root)), variable_(std::move(variable)) {}

    static NodePtr constant(double v) { return std::make_shared<Node>(Node{Op::Const, v, nullptr, nullptr}); }
    static NodePtr var() { return std::make_shared<Node>(Node{Op::Var, 0.0, nullptr, nullptr}); }
    static bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }

    static NodePtr make(Op op, NodePtr a, NodePtr b = nullptr) {
        // constant folding and the obvious identities keep derivative trees small
        const bool ca = a && a->op == Op::Const;
        const bool cb = !b || b->op == Op::Const;
        if (ca && cb) {
            Node tmp{op, 0.0, a, b};
            return constant(eval(tmp, 0.0));
        }
        switch (op) {
            case Op::Add:
                if (is_const(a, 0.0)) return b;
                if (is_const(b, 0.0)) return a;
                break;
            case Op::Sub:
                if (is_const(b, 0.0)) return a;
                if (is_const(a, 0.0)) return make(Op::Neg, b);
                break;
            case Op::Mul:
                if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
                if (is_const(a, 1.0)) return b;
                if (is_const(b, 1.0)) return a;
                break;
            case Op::Div:
                if (is_const(a, 0.0)) return constant(0.0);
                if (is_const(b, 1.0)) return a;
                break;
            default:
                break;
        }
        return std::make_shared<Node>(Node{op, 0.0, std::move(a), std::move(b)});
    }

    static double eval(const Node& n, double x) {
        switch (n.op) {
            case Op::Const: return n.value;
            case Op::Var: return x;
            case Op::Add: return eval(*n.a, x) + eval(*n.b, x);
            case Op::Sub: return eval(*n.a, x) - eval(*n.b, x);
            case Op::Mul: return eval(*n.a, x) * eval(*n.b, x);
            case Op::Div: return eval(*n.a, x) / eval(*n.b, x);
            case Op::Neg: return -eval(*n.a, x);
            case Op::Sin: return std::sin(eval(*n.a, x));
            case Op::Cos: return std::cos(eval(*n.a, x));
            case Op::Exp: return std::exp(eval(*n.a, x));
            case Op::Log: return std::log(eval(*n.a, x));
            case Op::Pow: return std::pow(eval(*n.a, x), eval(*n.b, x));
        }
        return 0.0;
    }

    static NodePtr diff(const NodePtr& n) {
        switch (n->op) {
            case Op::Const: return constant(0.0);
            case Op::Var: return constant(1.0);
            case Op::Add: return make(Op::Add, diff(n->a), diff(n->b));
            case Op::Sub: return make(Op::Sub, diff(n->a), diff(n->b));
            case Op::Neg: return make(Op::Neg, diff(n->a));
            case Op::Mul:
                return make(Op::Add, make(Op::Mul, diff(n->a), n->b), make(Op::Mul, n->a, diff(n->b)));
            case Op::Div:
                return make(Op::Div,
                            make(Op::Sub, make(Op::Mul, diff(n->a), n->b), make(Op::Mul, n->a, diff(n->b))),
                            make(Op::Mul, n->b, n->b));
            case Op::Sin: return make(Op::Mul, make(Op::Cos, n->a), diff(n->a));
            case Op::Cos: return make(Op::Neg, make(Op::Mul, make(Op::Sin, n->a), diff(n->a)));
            case Op::Exp: return make(Op::Mul, n, diff(n->a));
            case Op::Log: return make(Op::Div, diff(n->a), n->a);
            case Op::Pow: {
                if (n->b->op == Op::Const) {
                    const double p = n->b->value;
                    return make(Op::Mul, make(Op::Mul, constant(p), make(Op::Pow, n->a, constant(p - 1.0))),
                                diff(n->a));
                }
                // a^b * (b' log a + b a'/a)
                auto term = make(Op::Add, make(Op::Mul, diff(n->b), make(Op::Log, n->a)),
                                 make(Op::Div, make(Op::Mul, n->b, diff(n->a)), n->a));
                return make(Op::Mul, n, term);
            }
        }
        return constant(0.0);
    }

    std::string render(const Node& n) const {
        auto bin = [&](const char* op) { return "(" + render(*n.a) + op + render(*n.b) + ")"; };
        switch (n.op) {
            case Op::Const: {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", n.value);
                return buf;
            }
            case Op::Var: return variable_;
            case Op::Add: return bin("+");
            case Op::Sub: return bin("-");
            case Op::Mul: return bin("*");
            case Op::Div: return bin("/");
            case Op::Neg: return "(-" + render(*n.a) + ")";
            case Op::Sin: return "sin(" + render(*n.a) + ")";
            case Op::Cos: return "cos(" + render(*n.a) + ")";
            case Op::Exp: return "exp(" + render(*n.a) + ")";
            case Op::Log: return "log(" + render(*n.a) + ")";
            case Op::Pow: return "pow(" + render(*n.a) + "," + render(*n.b) + ")";
        }
        return {};
    }

    class Parser;

    NodePtr root_;
    std::string variable_;
};

class Expression::Parser {
public:
    Parser(std::string_view text, std::string_view variable) : s_(text), var_(variable) {}

    NodePtr run() {
        auto n = expr();
        skip();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& why) const {
        throw InputError("expression parse error at offset " + std::to_string(pos_) + " in \"" + std::string(s_) +
                         "\": " + why);
    }

    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    NodePtr expr() {
        auto n = term();
        for (;;) {
            if (accept('+')) n = make(Op::Add, n, term());
            else if (accept('-')) n = make(Op::Sub, n, term());
            else return n;
        }
    }

    NodePtr term() {
        auto n = unary();
        for (;;) {
            if (accept('*')) n = make(Op::Mul, n, unary());
            else if (accept('/')) n = make(Op::Div, n, unary());
            else return n;
        }
    }

    NodePtr unary() {
        if (accept('-')) return make(Op::Neg, unary());
        if (accept('+')) return unary();
        return primary();
    }

    NodePtr primary() {
        skip();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        const char c = s_[pos_];
        if (accept('(')) {
            auto n = expr();
            expect(')');
            return n;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            const std::size_t begin = pos_;
            while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
            const std::string id(s_.substr(begin, pos_ - begin));
            if (id == var_) return var();
            if (id == "pi") return constant(kPi);
            Op op;
            if (id == "sin") op = Op::Sin;
            else if (id == "cos") op = Op::Cos;
            else if (id == "exp") op = Op::Exp;
            else if (id == "log") op = Op::Log;
            else if (id == "pow") op = Op::Pow;
            else {
                pos_ = begin;
                fail("unknown identifier '" + id + "' (variable is '" + std::string(var_) + "')");
            }
            expect('(');
            auto a = expr();
            NodePtr b;
            if (op == Op::Pow) {
                expect(',');
                b = expr();
            }
            expect(')');
            return make(op, a, b);
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    NodePtr number() {
        char* end = nullptr;
        const std::string tmp(s_.substr(pos_));
        const double v = std::strtod(tmp.c_str(), &end);
        const std::size_t used = static_cast<std::size_t>(end - tmp.c_str());
        if (used == 0) fail("malformed number");
        pos_ += used;
        return constant(v);
    }

    std::string_view s_;
    std::string_view var_;
    std::size_t pos_ = 0;
};

inline Expression Expression::parse(std::string_view text, std::string_view variable) {
    Parser p(text, variable);
    return Expression(p.run(), std::string(variable));
}

}  // namespace vstring
