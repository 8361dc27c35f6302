#ifndef FEMFORGE_SYMBOLIC_EXPR_HPP
#define FEMFORGE_SYMBOLIC_EXPR_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace femforge::symbolic {

class Expr;

enum class Kind : std::uint8_t {
  Constant,
  Symbol,
  Add,   // n-ary, children in canonical order
  Mul,   // n-ary, constant coefficient (if any) is the first child
  Pow,   // integer exponent only
  Div,
  Sin,
  Cos,
  Sqrt,
};

// Exact rational with int64 components; den > 0, gcd(num, den) == 1.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// A numeric constant: exact rational while arithmetic stays in range,
// degraded to double on overflow or when mixed with inexact values.
struct Number {
  bool exact = true;
  Rational rat{};
  double flt = 0.0;

  static Number from_int(std::int64_t v) { return Number{true, {v, 1}, 0.0}; }
  static Number from_rational(std::int64_t n, std::int64_t d);
  static Number from_double(double v) { return Number{false, {}, v}; }

  double value() const { return exact ? rat.to_double() : flt; }
  bool is_zero() const { return exact ? rat.num == 0 : flt == 0.0; }
  bool is_one() const { return exact ? (rat.num == 1 && rat.den == 1) : flt == 1.0; }
  bool is_minus_one() const { return exact ? (rat.num == -1 && rat.den == 1) : flt == -1.0; }
  bool is_integer() const { return exact && rat.den == 1; }
};

Number num_add(const Number& a, const Number& b);
Number num_mul(const Number& a, const Number& b);
Number num_neg(const Number& a);
Number num_div(const Number& a, const Number& b);  // throws on exact zero divisor
Number num_pow(const Number& a, std::int64_t e);

struct Node {
  Kind kind;
  Number constant{};          // Constant
  std::string name;           // Symbol
  std::vector<Expr> children; // composite nodes
  std::int64_t exponent = 0;  // Pow
  std::size_t hash = 0;
  std::uint64_t id = 0;       // intern order, unique per process
};

class SymbolicError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParseError : public SymbolicError {
public:
  ParseError(const std::string& msg, std::size_t offset)
      : SymbolicError(msg + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

private:
  std::size_t offset_;
};

class EvalError : public SymbolicError {
  using SymbolicError::SymbolicError;
};

// Immutable, hash-consed expression handle. Structural equality of canonical
// forms coincides with handle equality; comparisons are pointer comparisons.
class Expr {
public:
  Expr() = default;  // empty handle; only valid as a placeholder

  Kind kind() const { return node_->kind; }
  const Node& node() const { return *node_; }
  const Node* raw() const { return node_.get(); }
  bool valid() const { return node_ != nullptr; }

  bool is_constant() const { return node_->kind == Kind::Constant; }
  bool is_symbol() const { return node_->kind == Kind::Symbol; }
  bool is_zero() const { return is_constant() && node_->constant.is_zero(); }
  bool is_one() const { return is_constant() && node_->constant.is_one(); }
  double constant_value() const { return node_->constant.value(); }
  const std::string& name() const { return node_->name; }
  const std::vector<Expr>& children() const { return node_->children; }
  std::int64_t exponent() const { return node_->exponent; }

  friend bool operator==(const Expr& a, const Expr& b) { return a.node_ == b.node_; }
  friend bool operator!=(const Expr& a, const Expr& b) { return a.node_ != b.node_; }

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  Expr operator-() const;

private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
  friend class Interner;
};

// Construction
Expr sym(const std::string& name);   // throws SymbolicError on bad identifier
Expr constant(double v);
Expr integer(std::int64_t v);
Expr rational(std::int64_t num, std::int64_t den);
Expr number(const Number& n);

Expr add(std::span<const Expr> terms);
Expr mul(std::span<const Expr> factors);
Expr pow(const Expr& base, std::int64_t exponent);
Expr sin(const Expr& e);
Expr cos(const Expr& e);
Expr sqrt(const Expr& e);

inline Expr operator+(const Expr& a, double b) { return a + constant(b); }
inline Expr operator*(double a, const Expr& b) { return constant(a) * b; }

// Analysis and manipulation
Expr diff(const Expr& e, const Expr& symbol);
// Simultaneous substitution of symbols: replacements are never re-substituted.
Expr substitute(const Expr& e, const std::vector<std::pair<Expr, Expr>>& bindings);
Expr expand(const Expr& e);
double eval(const Expr& e, const std::map<std::string, double>& values);
std::set<std::string> free_symbols(const Expr& e);

// Total structural order used for canonical child sorting.
bool expr_less(const Expr& a, const Expr& b);

// Text form: fully parenthesized infix, shortest round-trip constants.
std::string print(const Expr& e);
Expr parse(const std::string& src);

// pow with integer exponent; multiplication chain for small |e|, library pow
// otherwise. Shared by the tree evaluator and the kernel IR interpreter so
// both routes perform identical floating-point operations.
double pow_int(double base, std::int64_t e);

// Dense name -> argument-slot mapping for kernel argument binding.
class SymbolTable {
public:
  int add(const std::string& name);  // throws on duplicate
  int slot(const std::string& name) const;  // -1 when absent
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

// Evaluates one expression against a flat argument vector; symbol slots are
// resolved once at construction.
class SlotEvaluator {
public:
  SlotEvaluator() = default;
  SlotEvaluator(const Expr& e, const SymbolTable& args);
  double operator()(std::span<const double> args) const;

private:
  double eval_node(const Node* n, std::span<const double> args) const;
  Expr root_;
  std::unordered_map<const Node*, int> slots_;
};

}  // namespace femforge::symbolic

#endif
