#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hjbi {

/// Families of free variables a coefficient expression may reference.
///   x1..xn : state (slow) components     y1..ym : fast components
///   a1..   : components of the maximizing control alpha
///   b1..   : components of the minimizing control beta
enum class VariableFamily : char { State = 'x', Fast = 'y', Alpha = 'a', Beta = 'b' };

/// Values bound to the variable families during evaluation. Indices are 0-based
/// here; the textual names are 1-based (x1 is x[0]).
struct EvalPoint {
  std::span<const double> x;
  std::span<const double> y;
  std::span<const double> alpha;
  std::span<const double> beta;
};

/// Immutable closed-form coefficient term.
///
/// Grammar (whitespace-insensitive):
///
///   expr    := term (('+' | '-') term)*
///   term    := unary (('*' | '/') unary)*
///   unary   := ('+' | '-') unary | power
///   power   := primary ('^' unary)?
///   primary := number | 'pi' | variable | func '(' expr ')' | ('min' | 'max') '(' expr ',' expr ')'
///            | '(' expr ')'
///   func    := 'sin' | 'cos' | 'exp' | 'abs' | 'sqrt'
///   variable:= ('x' | 'y' | 'a' | 'b') positive-integer
///
/// Nodes are shared, so copies are cheap and instances are safe to share across threads.
class Expression {
 public:
  enum class Op {
    Constant,
    Variable,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Min,
    Max,
  };

  /// Zero constant.
  Expression();

  /// Parses `text`; syntax errors throw ParseError whose column is 1-based within `text`.
  static Expression parse(std::string_view text);

  static Expression constant(double value);
  static Expression variable(VariableFamily family, int index);

  double evaluate(const EvalPoint& point) const;

  /// Replaces variables for which `rule` returns a value; others are kept.
  Expression substitute(const std::function<std::optional<Expression>(VariableFamily, int)>& rule) const;

  /// Largest 0-based index used per family, or -1 when the family is absent.
  int max_index(VariableFamily family) const;

  bool is_constant() const;
  /// Round-trippable textual form (parse(to_string()) evaluates identically).
  std::string to_string() const;

  Op op() const;

  friend Expression operator+(const Expression& lhs, const Expression& rhs);
  friend Expression operator-(const Expression& lhs, const Expression& rhs);
  friend Expression operator*(const Expression& lhs, const Expression& rhs);
  friend Expression operator/(const Expression& lhs, const Expression& rhs);
  friend Expression operator-(const Expression& arg);

  struct Node;

 private:
  explicit Expression(std::shared_ptr<const Node> node);
  std::shared_ptr<const Node> node_;
};

}  // namespace hjbi
