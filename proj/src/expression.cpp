#include "hjbi/expression.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "hjbi/error.hpp"

namespace hjbi {

struct Expression::Node {
  Op op = Op::Constant;
  double value = 0.0;
  VariableFamily family = VariableFamily::State;
  int index = 0;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

NodePtr make_constant(double value) {
  auto node = std::make_shared<Expression::Node>();
  node->op = Expression::Op::Constant;
  node->value = value;
  return node;
}

NodePtr make_variable(VariableFamily family, int index) {
  auto node = std::make_shared<Expression::Node>();
  node->op = Expression::Op::Variable;
  node->family = family;
  node->index = index;
  return node;
}

bool is_binary(Expression::Op op) {
  switch (op) {
    case Expression::Op::Add:
    case Expression::Op::Sub:
    case Expression::Op::Mul:
    case Expression::Op::Div:
    case Expression::Op::Pow:
    case Expression::Op::Min:
    case Expression::Op::Max:
      return true;
    default:
      return false;
  }
}

double apply(Expression::Op op, double a, double b) {
  using Op = Expression::Op;
  switch (op) {
    case Op::Neg: return -a;
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
    case Op::Pow: return std::pow(a, b);
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Exp: return std::exp(a);
    case Op::Abs: return std::abs(a);
    case Op::Sqrt: return std::sqrt(a);
    case Op::Min: return std::min(a, b);
    case Op::Max: return std::max(a, b);
    default: break;
  }
  throw std::logic_error("expression: not an operator");
}

bool is_const(const NodePtr& n, double v) { return n->op == Expression::Op::Constant && n->value == v; }

// Folds constants and drops neutral elements, which keeps programmatically built
// cell costs small.
NodePtr make_op(Expression::Op op, NodePtr lhs, NodePtr rhs = nullptr) {
  using Op = Expression::Op;
  const bool binary = is_binary(op);
  if (lhs->op == Op::Constant && (!binary || rhs->op == Op::Constant)) {
    return make_constant(apply(op, lhs->value, binary ? rhs->value : 0.0));
  }
  if (op == Op::Add) {
    if (is_const(lhs, 0.0)) return rhs;
    if (is_const(rhs, 0.0)) return lhs;
  } else if (op == Op::Sub) {
    if (is_const(rhs, 0.0)) return lhs;
    if (is_const(lhs, 0.0)) return make_op(Op::Neg, rhs);
  } else if (op == Op::Mul) {
    if (is_const(lhs, 0.0) || is_const(rhs, 0.0)) return make_constant(0.0);
    if (is_const(lhs, 1.0)) return rhs;
    if (is_const(rhs, 1.0)) return lhs;
  } else if (op == Op::Div) {
    if (is_const(rhs, 1.0)) return lhs;
  }
  auto node = std::make_shared<Expression::Node>();
  node->op = op;
  node->lhs = std::move(lhs);
  node->rhs = std::move(rhs);
  return node;
}

double eval(const Expression::Node& n, const EvalPoint& p) {
  using Op = Expression::Op;
  switch (n.op) {
    case Op::Constant:
      return n.value;
    case Op::Variable: {
      std::span<const double> values;
      switch (n.family) {
        case VariableFamily::State: values = p.x; break;
        case VariableFamily::Fast: values = p.y; break;
        case VariableFamily::Alpha: values = p.alpha; break;
        case VariableFamily::Beta: values = p.beta; break;
      }
      if (static_cast<std::size_t>(n.index) >= values.size()) {
        throw ConfigError(std::string("expression: variable ") + static_cast<char>(n.family) +
                          std::to_string(n.index + 1) + " is not bound");
      }
      return values[static_cast<std::size_t>(n.index)];
    }
    default:
      break;
  }
  const double a = eval(*n.lhs, p);
  const double b = n.rhs ? eval(*n.rhs, p) : 0.0;
  return apply(n.op, a, b);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr parse() {
    NodePtr result = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return result;
  }

 private:
  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError("expression: " + message, 1, static_cast<int>(pos_) + 1);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  NodePtr expr() {
    NodePtr lhs = term();
    while (true) {
      if (accept('+')) {
        lhs = make_op(Expression::Op::Add, lhs, term());
      } else if (accept('-')) {
        lhs = make_op(Expression::Op::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  NodePtr term() {
    NodePtr lhs = unary();
    while (true) {
      if (accept('*')) {
        lhs = make_op(Expression::Op::Mul, lhs, unary());
      } else if (accept('/')) {
        lhs = make_op(Expression::Op::Div, lhs, unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr unary() {
    if (accept('-')) return make_op(Expression::Op::Neg, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make_op(Expression::Op::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (accept('(')) {
      NodePtr inner = expr();
      expect(')');
      return inner;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  NodePtr number() {
    const std::size_t start = pos_;
    std::string token;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' || text_[pos_] == 'e' ||
            text_[pos_] == 'E' ||
            ((text_[pos_] == '+' || text_[pos_] == '-') && pos_ > start &&
             (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))) {
      token.push_back(text_[pos_]);
      ++pos_;
    }
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) {
      pos_ = start;
      fail("malformed number '" + token + "'");
    }
    return make_constant(value);
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    std::string name;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) {
      name.push_back(text_[pos_]);
      ++pos_;
    }
    using Op = Expression::Op;
    if (name == "pi") return make_constant(std::numbers::pi);
    const std::pair<const char*, Op> unary_funcs[] = {
        {"sin", Op::Sin}, {"cos", Op::Cos}, {"exp", Op::Exp}, {"abs", Op::Abs}, {"sqrt", Op::Sqrt}};
    for (const auto& [fname, op] : unary_funcs) {
      if (name == fname) {
        expect('(');
        NodePtr arg = expr();
        expect(')');
        return make_op(op, arg);
      }
    }
    if (name == "min" || name == "max") {
      expect('(');
      NodePtr lhs = expr();
      expect(',');
      NodePtr rhs = expr();
      expect(')');
      return make_op(name == "min" ? Op::Min : Op::Max, lhs, rhs);
    }
    if (name.size() >= 2 && std::string_view("xyab").find(name[0]) != std::string_view::npos) {
      bool digits = true;
      for (std::size_t i = 1; i < name.size(); ++i) digits = digits && std::isdigit(static_cast<unsigned char>(name[i]));
      if (digits && name[1] != '0') {
        return make_variable(static_cast<VariableFamily>(name[0]), std::stoi(name.substr(1)) - 1);
      }
    }
    pos_ = start;
    fail("unknown identifier '" + name + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

const char* op_name(Expression::Op op) {
  using Op = Expression::Op;
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Abs: return "abs";
    case Op::Sqrt: return "sqrt";
    case Op::Min: return "min";
    case Op::Max: return "max";
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::Div: return "/";
    case Op::Pow: return "^";
    default: return "?";
  }
}

void print(const Expression::Node& n, std::string& out) {
  using Op = Expression::Op;
  switch (n.op) {
    case Op::Constant: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", n.value);
      if (n.value < 0) {
        out += "(";
        out += buf;
        out += ")";
      } else {
        out += buf;
      }
      return;
    }
    case Op::Variable:
      out += static_cast<char>(n.family);
      out += std::to_string(n.index + 1);
      return;
    case Op::Neg:
      out += "(-";
      print(*n.lhs, out);
      out += ")";
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
      out += "(";
      print(*n.lhs, out);
      out += op_name(n.op);
      print(*n.rhs, out);
      out += ")";
      return;
    case Op::Min:
    case Op::Max:
      out += op_name(n.op);
      out += "(";
      print(*n.lhs, out);
      out += ",";
      print(*n.rhs, out);
      out += ")";
      return;
    default:
      out += op_name(n.op);
      out += "(";
      print(*n.lhs, out);
      out += ")";
      return;
  }
}

NodePtr substitute_node(const NodePtr& n,
                        const std::function<std::optional<Expression>(VariableFamily, int)>& rule,
                        const std::function<NodePtr(const Expression&)>& unwrap) {
  if (n->op == Expression::Op::Constant) return n;
  if (n->op == Expression::Op::Variable) {
    if (auto replacement = rule(n->family, n->index)) return unwrap(*replacement);
    return n;
  }
  NodePtr lhs = substitute_node(n->lhs, rule, unwrap);
  NodePtr rhs = n->rhs ? substitute_node(n->rhs, rule, unwrap) : nullptr;
  return make_op(n->op, lhs, rhs);
}

int max_index_node(const Expression::Node& n, VariableFamily family) {
  if (n.op == Expression::Op::Variable) return n.family == family ? n.index : -1;
  if (n.op == Expression::Op::Constant) return -1;
  int result = max_index_node(*n.lhs, family);
  if (n.rhs) result = std::max(result, max_index_node(*n.rhs, family));
  return result;
}

}  // namespace

Expression::Expression() : node_(make_constant(0.0)) {}

Expression::Expression(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

Expression Expression::parse(std::string_view text) { return Expression(Parser(text).parse()); }

Expression Expression::constant(double value) { return Expression(make_constant(value)); }

Expression Expression::variable(VariableFamily family, int index) { return Expression(make_variable(family, index)); }

double Expression::evaluate(const EvalPoint& point) const { return eval(*node_, point); }

Expression Expression::substitute(const std::function<std::optional<Expression>(VariableFamily, int)>& rule) const {
  return Expression(substitute_node(node_, rule, [](const Expression& e) { return e.node_; }));
}

int Expression::max_index(VariableFamily family) const { return max_index_node(*node_, family); }

bool Expression::is_constant() const { return node_->op == Op::Constant; }

std::string Expression::to_string() const {
  std::string out;
  print(*node_, out);
  return out;
}

Expression::Op Expression::op() const { return node_->op; }

Expression operator+(const Expression& lhs, const Expression& rhs) {
  return Expression(make_op(Expression::Op::Add, lhs.node_, rhs.node_));
}
Expression operator-(const Expression& lhs, const Expression& rhs) {
  return Expression(make_op(Expression::Op::Sub, lhs.node_, rhs.node_));
}
Expression operator*(const Expression& lhs, const Expression& rhs) {
  return Expression(make_op(Expression::Op::Mul, lhs.node_, rhs.node_));
}
Expression operator/(const Expression& lhs, const Expression& rhs) {
  return Expression(make_op(Expression::Op::Div, lhs.node_, rhs.node_));
}
Expression operator-(const Expression& arg) { return Expression(make_op(Expression::Op::Neg, arg.node_)); }

}  // namespace hjbi
