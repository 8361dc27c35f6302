#include "femforge/symbolic/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numeric>

namespace femforge::symbolic {

// ---------------------------------------------------------------------------
// Number arithmetic

namespace {

bool mul_ovf(std::int64_t a, std::int64_t b, std::int64_t* out) {
  return __builtin_mul_overflow(a, b, out);
}
bool add_ovf(std::int64_t a, std::int64_t b, std::int64_t* out) {
  return __builtin_add_overflow(a, b, out);
}

}  // namespace

Number Number::from_rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw SymbolicError("division by zero constant");
  if (d < 0) { n = -n; d = -d; }
  std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  if (g > 1) { n /= g; d /= g; }
  return Number{true, {n, d}, 0.0};
}

Number num_add(const Number& a, const Number& b) {
  if (a.exact && b.exact) {
    std::int64_t n1, n2, n, d;
    if (!mul_ovf(a.rat.num, b.rat.den, &n1) && !mul_ovf(b.rat.num, a.rat.den, &n2) &&
        !add_ovf(n1, n2, &n) && !mul_ovf(a.rat.den, b.rat.den, &d)) {
      return Number::from_rational(n, d);
    }
  }
  return Number::from_double(a.value() + b.value());
}

Number num_mul(const Number& a, const Number& b) {
  if (a.exact && b.exact) {
    std::int64_t n, d;
    if (!mul_ovf(a.rat.num, b.rat.num, &n) && !mul_ovf(a.rat.den, b.rat.den, &d)) {
      return Number::from_rational(n, d);
    }
  }
  return Number::from_double(a.value() * b.value());
}

Number num_neg(const Number& a) {
  if (a.exact) return Number{true, {-a.rat.num, a.rat.den}, 0.0};
  return Number::from_double(-a.flt);
}

Number num_div(const Number& a, const Number& b) {
  if (b.is_zero()) throw SymbolicError("division by zero constant");
  if (a.exact && b.exact) {
    std::int64_t n, d;
    if (!mul_ovf(a.rat.num, b.rat.den, &n) && !mul_ovf(a.rat.den, b.rat.num, &d)) {
      return Number::from_rational(n, d);
    }
  }
  return Number::from_double(a.value() / b.value());
}

Number num_pow(const Number& a, std::int64_t e) {
  if (e == 0) return Number::from_int(1);
  if (a.exact) {
    Number acc = Number::from_int(1);
    std::int64_t k = e < 0 ? -e : e;
    bool ok = k <= 62;
    Number base = a;
    for (std::int64_t i = 0; ok && i < k; ++i) {
      std::int64_t n, d;
      if (mul_ovf(acc.rat.num, base.rat.num, &n) || mul_ovf(acc.rat.den, base.rat.den, &d)) {
        ok = false;
      } else {
        acc = Number::from_rational(n, d);
      }
    }
    if (ok) return e < 0 ? num_div(Number::from_int(1), acc) : acc;
  }
  return Number::from_double(pow_int(a.value(), e));
}

double pow_int(double base, std::int64_t e) {
  if (e == 0) return 1.0;
  if (e < 0) return 1.0 / pow_int(base, -e);
  switch (e) {
    case 1: return base;
    case 2: return base * base;
    case 3: return base * base * base;
    case 4: { double s = base * base; return s * s; }
    default: return std::pow(base, static_cast<double>(e));
  }
}

// ---------------------------------------------------------------------------
// Interner

class Interner {
public:
  static Interner& instance() {
    static Interner inst;
    return inst;
  }

  Expr intern(Node&& n) {
    n.hash = hash_node(n);
    std::lock_guard<std::mutex> lock(mu_);
    auto [it, end] = table_.equal_range(n.hash);
    for (; it != end; ++it) {
      if (structurally_equal(*it->second, n)) return Expr(it->second);
    }
    auto sp = std::make_shared<Node>(std::move(n));
    sp->id = next_id_++;
    table_.emplace(sp->hash, sp);
    return Expr(sp);
  }

private:
  static std::size_t hash_combine(std::size_t h, std::size_t v) {
    return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  }

  static std::size_t hash_node(const Node& n) {
    std::size_t h = static_cast<std::size_t>(n.kind) * 0x100000001b3ULL;
    switch (n.kind) {
      case Kind::Constant:
        h = hash_combine(h, std::hash<bool>{}(n.constant.exact));
        if (n.constant.exact) {
          h = hash_combine(h, std::hash<std::int64_t>{}(n.constant.rat.num));
          h = hash_combine(h, std::hash<std::int64_t>{}(n.constant.rat.den));
        } else {
          h = hash_combine(h, std::hash<double>{}(n.constant.flt));
        }
        break;
      case Kind::Symbol:
        h = hash_combine(h, std::hash<std::string>{}(n.name));
        break;
      default:
        for (const Expr& c : n.children) h = hash_combine(h, c.node().hash);
        if (n.kind == Kind::Pow) h = hash_combine(h, std::hash<std::int64_t>{}(n.exponent));
        break;
    }
    return h;
  }

  static bool structurally_equal(const Node& a, const Node& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case Kind::Constant:
        if (a.constant.exact != b.constant.exact) return false;
        if (a.constant.exact) {
          return a.constant.rat.num == b.constant.rat.num &&
                 a.constant.rat.den == b.constant.rat.den;
        }
        return a.constant.flt == b.constant.flt ||
               (std::isnan(a.constant.flt) && std::isnan(b.constant.flt));
      case Kind::Symbol:
        return a.name == b.name;
      default:
        if (a.exponent != b.exponent) return false;
        if (a.children.size() != b.children.size()) return false;
        for (std::size_t i = 0; i < a.children.size(); ++i) {
          if (a.children[i] != b.children[i]) return false;  // handle equality
        }
        return true;
    }
  }

  std::mutex mu_;
  std::unordered_multimap<std::size_t, std::shared_ptr<const Node>> table_;
  std::uint64_t next_id_ = 1;
};

namespace {

Expr intern(Node&& n) { return Interner::instance().intern(std::move(n)); }

Expr make_constant(const Number& v) {
  Node n;
  n.kind = Kind::Constant;
  n.constant = v;
  return intern(std::move(n));
}

const Number& const_of(const Expr& e) { return e.node().constant; }

}  // namespace

// ---------------------------------------------------------------------------
// Structural total order

bool expr_less(const Expr& a, const Expr& b) {
  if (a == b) return false;
  auto rank = [](Kind k) { return static_cast<int>(k); };
  const Node& na = a.node();
  const Node& nb = b.node();
  if (na.kind != nb.kind) return rank(na.kind) < rank(nb.kind);
  switch (na.kind) {
    case Kind::Constant: {
      double va = na.constant.value(), vb = nb.constant.value();
      if (va != vb) return va < vb;
      return na.constant.exact > nb.constant.exact;  // exact sorts first among ties
    }
    case Kind::Symbol:
      return na.name < nb.name;
    default: {
      const auto& ca = na.children;
      const auto& cb = nb.children;
      std::size_t m = std::min(ca.size(), cb.size());
      for (std::size_t i = 0; i < m; ++i) {
        if (ca[i] != cb[i]) return expr_less(ca[i], cb[i]);
      }
      if (ca.size() != cb.size()) return ca.size() < cb.size();
      return na.exponent < nb.exponent;
    }
  }
}

// ---------------------------------------------------------------------------
// Constructors and canonicalization

Expr constant(double v) { return make_constant(Number::from_double(v)); }
Expr integer(std::int64_t v) { return make_constant(Number::from_int(v)); }
Expr rational(std::int64_t num, std::int64_t den) {
  return make_constant(Number::from_rational(num, den));
}
Expr number(const Number& n) { return make_constant(n); }

namespace {

bool valid_identifier(const std::string& name) {
  if (name.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) return false;
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

}  // namespace

Expr sym(const std::string& name) {
  if (!valid_identifier(name)) {
    throw SymbolicError("invalid symbol name '" + name + "'");
  }
  Node n;
  n.kind = Kind::Symbol;
  n.name = name;
  return intern(std::move(n));
}

namespace {

// Splits a canonical term into (coefficient, coefficient-free core).
std::pair<Number, Expr> coeff_split(const Expr& t) {
  if (t.is_constant()) return {const_of(t), Expr{}};
  if (t.kind() == Kind::Mul && t.children().front().is_constant()) {
    const auto& kids = t.children();
    Number c = const_of(kids.front());
    if (kids.size() == 2) return {c, kids[1]};
    std::vector<Expr> rest(kids.begin() + 1, kids.end());
    Node n;
    n.kind = Kind::Mul;
    n.children = std::move(rest);
    return {c, intern(std::move(n))};
  }
  return {Number::from_int(1), t};
}

Expr make_mul_sorted(Number coeff, std::vector<Expr> factors);

}  // namespace

Expr add(std::span<const Expr> terms) {
  Number const_sum = Number::from_int(0);
  // core -> coefficient, keyed by handle
  std::vector<std::pair<Expr, Number>> acc;
  auto fold_term = [&](const Expr& t, auto&& self) -> void {
    if (t.kind() == Kind::Add) {
      for (const Expr& c : t.children()) self(c, self);
      return;
    }
    auto [coeff, core] = coeff_split(t);
    if (!core.valid()) {
      const_sum = num_add(const_sum, coeff);
      return;
    }
    for (auto& [k, v] : acc) {
      if (k == core) {
        v = num_add(v, coeff);
        return;
      }
    }
    acc.emplace_back(core, coeff);
  };
  for (const Expr& t : terms) fold_term(t, fold_term);

  std::vector<Expr> out;
  for (auto& [core, coeff] : acc) {
    if (coeff.is_zero()) continue;
    if (coeff.is_one()) {
      out.push_back(core);
    } else {
      out.push_back(make_mul_sorted(coeff, {core}));
    }
  }
  if (!const_sum.is_zero() || out.empty()) out.push_back(make_constant(const_sum));
  if (out.size() == 1) return out.front();
  std::sort(out.begin(), out.end(), expr_less);
  Node n;
  n.kind = Kind::Add;
  n.children = std::move(out);
  return intern(std::move(n));
}

namespace {

// Builds a canonical Mul from a coefficient and non-constant factors that are
// already merged (no duplicate bases) but not yet sorted.
Expr make_mul_sorted(Number coeff, std::vector<Expr> factors) {
  if (coeff.is_zero()) return make_constant(Number::from_int(0));
  std::sort(factors.begin(), factors.end(), expr_less);
  std::vector<Expr> out;
  if (!coeff.is_one()) out.push_back(make_constant(coeff));
  out.insert(out.end(), factors.begin(), factors.end());
  if (out.empty()) return make_constant(Number::from_int(1));
  if (out.size() == 1) return out.front();
  Node n;
  n.kind = Kind::Mul;
  n.children = std::move(out);
  return intern(std::move(n));
}

}  // namespace

Expr mul(std::span<const Expr> factors) {
  Number coeff = Number::from_int(1);
  std::vector<std::pair<Expr, std::int64_t>> bases;  // base -> exponent
  auto fold_base = [&](const Expr& base, std::int64_t exp) {
    for (auto& [b, e] : bases) {
      if (b == base) {
        e += exp;
        return;
      }
    }
    bases.emplace_back(base, exp);
  };
  auto fold_factor = [&](const Expr& f, auto&& self) -> void {
    if (f.kind() == Kind::Mul) {
      for (const Expr& c : f.children()) self(c, self);
      return;
    }
    if (f.is_constant()) {
      coeff = num_mul(coeff, const_of(f));
      return;
    }
    if (f.kind() == Kind::Pow) {
      fold_base(f.children().front(), f.exponent());
      return;
    }
    fold_base(f, 1);
  };
  for (const Expr& f : factors) fold_factor(f, fold_factor);
  if (coeff.is_zero()) return make_constant(Number::from_int(0));

  std::vector<Expr> out;
  for (auto& [base, exp] : bases) {
    Expr p = pow(base, exp);
    if (p.is_constant()) {
      coeff = num_mul(coeff, const_of(p));
    } else if (!p.is_one()) {
      out.push_back(p);
    }
  }
  if (coeff.is_zero()) return make_constant(Number::from_int(0));
  return make_mul_sorted(coeff, std::move(out));
}

Expr pow(const Expr& base, std::int64_t exponent) {
  if (exponent == 0) return integer(1);
  if (exponent == 1) return base;
  if (base.is_constant()) return make_constant(num_pow(const_of(base), exponent));
  if (base.kind() == Kind::Pow) return pow(base.children().front(), base.exponent() * exponent);
  if (base.kind() == Kind::Mul) {
    std::vector<Expr> powed;
    powed.reserve(base.children().size());
    for (const Expr& c : base.children()) powed.push_back(pow(c, exponent));
    return mul(powed);
  }
  Node n;
  n.kind = Kind::Pow;
  n.children = {base};
  n.exponent = exponent;
  return intern(std::move(n));
}

namespace {

Expr make_div(const Expr& num, const Expr& den) {
  if (den.is_constant()) {
    if (const_of(den).is_zero()) throw SymbolicError("division by zero constant");
    Expr inv = make_constant(num_div(Number::from_int(1), const_of(den)));
    std::vector<Expr> fs{inv, num};
    return mul(fs);
  }
  if (num.is_zero()) return integer(0);
  if (num == den) return integer(1);
  Node n;
  n.kind = Kind::Div;
  n.children = {num, den};
  return intern(std::move(n));
}

Expr make_unary(Kind k, const Expr& arg) {
  if (arg.is_constant()) {
    double v = arg.constant_value();
    double r = k == Kind::Sin ? std::sin(v) : k == Kind::Cos ? std::cos(v) : std::sqrt(v);
    if (std::isfinite(r)) {
      // keep simple exact values exact so canonical tests stay crisp
      if (r == 0.0) return integer(0);
      if (r == 1.0) return integer(1);
      if (arg.node().constant.exact && k == Kind::Sqrt) {
        double rt = std::round(r);
        if (rt == r) return integer(static_cast<std::int64_t>(rt));
      }
      return constant(r);
    }
  }
  Node n;
  n.kind = k;
  n.children = {arg};
  return intern(std::move(n));
}

}  // namespace

Expr sin(const Expr& e) { return make_unary(Kind::Sin, e); }
Expr cos(const Expr& e) { return make_unary(Kind::Cos, e); }
Expr sqrt(const Expr& e) { return make_unary(Kind::Sqrt, e); }

Expr operator+(const Expr& a, const Expr& b) {
  std::vector<Expr> t{a, b};
  return add(t);
}
Expr operator-(const Expr& a, const Expr& b) {
  std::vector<Expr> t{a, -b};
  return add(t);
}
Expr operator*(const Expr& a, const Expr& b) {
  std::vector<Expr> f{a, b};
  return mul(f);
}
Expr operator/(const Expr& a, const Expr& b) { return make_div(a, b); }
Expr Expr::operator-() const {
  std::vector<Expr> f{integer(-1), *this};
  return mul(f);
}

// ---------------------------------------------------------------------------
// Differentiation

Expr diff(const Expr& e, const Expr& symbol) {
  if (!symbol.is_symbol()) throw SymbolicError("diff: second argument must be a symbol");
  std::unordered_map<const Node*, Expr> memo;
  auto rec = [&](const Expr& x, auto&& self) -> Expr {
    auto it = memo.find(x.raw());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (x.kind()) {
      case Kind::Constant:
        r = integer(0);
        break;
      case Kind::Symbol:
        r = (x == symbol) ? integer(1) : integer(0);
        break;
      case Kind::Add: {
        std::vector<Expr> terms;
        for (const Expr& c : x.children()) terms.push_back(self(c, self));
        r = add(terms);
        break;
      }
      case Kind::Mul: {
        const auto& kids = x.children();
        std::vector<Expr> terms;
        for (std::size_t i = 0; i < kids.size(); ++i) {
          std::vector<Expr> fs;
          fs.push_back(self(kids[i], self));
          for (std::size_t j = 0; j < kids.size(); ++j) {
            if (j != i) fs.push_back(kids[j]);
          }
          terms.push_back(mul(fs));
        }
        r = add(terms);
        break;
      }
      case Kind::Pow: {
        const Expr& b = x.children().front();
        r = integer(x.exponent()) * pow(b, x.exponent() - 1) * self(b, self);
        break;
      }
      case Kind::Div: {
        const Expr& a = x.children()[0];
        const Expr& b = x.children()[1];
        r = (self(a, self) * b - a * self(b, self)) / pow(b, 2);
        break;
      }
      case Kind::Sin:
        r = cos(x.children().front()) * self(x.children().front(), self);
        break;
      case Kind::Cos:
        r = -(sin(x.children().front())) * self(x.children().front(), self);
        break;
      case Kind::Sqrt:
        r = self(x.children().front(), self) / (integer(2) * x);
        break;
    }
    memo.emplace(x.raw(), r);
    return r;
  };
  return rec(e, rec);
}

// ---------------------------------------------------------------------------
// Substitution

Expr substitute(const Expr& e, const std::vector<std::pair<Expr, Expr>>& bindings) {
  for (const auto& [s, _] : bindings) {
    if (!s.is_symbol()) throw SymbolicError("substitute: keys must be symbols");
  }
  std::unordered_map<const Node*, Expr> memo;
  auto rec = [&](const Expr& x, auto&& self) -> Expr {
    auto it = memo.find(x.raw());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (x.kind()) {
      case Kind::Constant:
        r = x;
        break;
      case Kind::Symbol: {
        r = x;
        for (const auto& [s, repl] : bindings) {
          if (s == x) {
            r = repl;
            break;
          }
        }
        break;
      }
      default: {
        std::vector<Expr> kids;
        kids.reserve(x.children().size());
        bool changed = false;
        for (const Expr& c : x.children()) {
          Expr nc = self(c, self);
          changed = changed || nc != c;
          kids.push_back(nc);
        }
        if (!changed) {
          r = x;
        } else {
          switch (x.kind()) {
            case Kind::Add: r = add(kids); break;
            case Kind::Mul: r = mul(kids); break;
            case Kind::Pow: r = pow(kids.front(), x.exponent()); break;
            case Kind::Div: r = kids[0] / kids[1]; break;
            case Kind::Sin: r = sin(kids.front()); break;
            case Kind::Cos: r = cos(kids.front()); break;
            case Kind::Sqrt: r = sqrt(kids.front()); break;
            default: throw SymbolicError("substitute: unexpected node");
          }
        }
        break;
      }
    }
    memo.emplace(x.raw(), r);
    return r;
  };
  return rec(e, rec);
}

// ---------------------------------------------------------------------------
// Expansion (distribute products and integer powers over sums)

namespace {

std::vector<Expr> as_terms(const Expr& e) {
  if (e.kind() == Kind::Add) return e.children();
  return {e};
}

Expr expand_product(const Expr& a, const Expr& b) {
  std::vector<Expr> terms;
  for (const Expr& ta : as_terms(a)) {
    for (const Expr& tb : as_terms(b)) terms.push_back(ta * tb);
  }
  return add(terms);
}

}  // namespace

Expr expand(const Expr& e) {
  std::unordered_map<const Node*, Expr> memo;
  auto rec = [&](const Expr& x, auto&& self) -> Expr {
    auto it = memo.find(x.raw());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (x.kind()) {
      case Kind::Add: {
        std::vector<Expr> terms;
        for (const Expr& c : x.children()) terms.push_back(self(c, self));
        r = add(terms);
        break;
      }
      case Kind::Mul: {
        r = integer(1);
        for (const Expr& c : x.children()) r = expand_product(r, self(c, self));
        break;
      }
      case Kind::Pow: {
        if (x.exponent() > 1) {
          Expr base = self(x.children().front(), self);
          r = base;
          for (std::int64_t i = 1; i < x.exponent(); ++i) r = expand_product(r, base);
        } else {
          r = pow(self(x.children().front(), self), x.exponent());
        }
        break;
      }
      case Kind::Div:
        r = self(x.children()[0], self) / x.children()[1];
        break;
      default:
        r = x;
        break;
    }
    memo.emplace(x.raw(), r);
    return r;
  };
  return rec(e, rec);
}

// ---------------------------------------------------------------------------
// Evaluation

double eval(const Expr& e, const std::map<std::string, double>& values) {
  auto rec = [&](const Expr& x, auto&& self) -> double {
    switch (x.kind()) {
      case Kind::Constant:
        return x.constant_value();
      case Kind::Symbol: {
        auto it = values.find(x.name());
        if (it == values.end()) throw EvalError("unbound symbol '" + x.name() + "'");
        return it->second;
      }
      case Kind::Add: {
        double s = 0.0;
        for (const Expr& c : x.children()) s += self(c, self);
        return s;
      }
      case Kind::Mul: {
        double p = 1.0;
        for (const Expr& c : x.children()) p *= self(c, self);
        return p;
      }
      case Kind::Pow:
        return pow_int(self(x.children().front(), self), x.exponent());
      case Kind::Div:
        return self(x.children()[0], self) / self(x.children()[1], self);
      case Kind::Sin:
        return std::sin(self(x.children().front(), self));
      case Kind::Cos:
        return std::cos(self(x.children().front(), self));
      case Kind::Sqrt:
        return std::sqrt(self(x.children().front(), self));
    }
    throw SymbolicError("eval: unexpected node");
  };
  return rec(e, rec);
}

std::set<std::string> free_symbols(const Expr& e) {
  std::set<std::string> out;
  auto rec = [&](const Expr& x, auto&& self) -> void {
    if (x.is_symbol()) {
      out.insert(x.name());
      return;
    }
    for (const Expr& c : x.children()) self(c, self);
  };
  rec(e, rec);
  return out;
}

// ---------------------------------------------------------------------------
// Printing

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string print_constant(const Number& c) {
  if (c.exact) {
    std::string n = std::to_string(c.rat.num);
    if (c.rat.den == 1) return c.rat.num < 0 ? "(" + n + ")" : n;
    return "(" + n + " / " + std::to_string(c.rat.den) + ")";
  }
  std::string s = format_double(c.flt);
  if (c.flt < 0 || s.find_first_of("e") != std::string::npos) return "(" + s + ")";
  return s;
}

}  // namespace

std::string print(const Expr& e) {
  switch (e.kind()) {
    case Kind::Constant:
      return print_constant(e.node().constant);
    case Kind::Symbol:
      return e.name();
    case Kind::Add: {
      std::string s = "(";
      for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i) s += " + ";
        s += print(e.children()[i]);
      }
      return s + ")";
    }
    case Kind::Mul: {
      std::string s = "(";
      for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i) s += " * ";
        s += print(e.children()[i]);
      }
      return s + ")";
    }
    case Kind::Pow: {
      std::int64_t k = e.exponent();
      std::string es = k < 0 ? "(-" + std::to_string(-k) + ")" : std::to_string(k);
      return "(" + print(e.children().front()) + " ^ " + es + ")";
    }
    case Kind::Div:
      return "(" + print(e.children()[0]) + " / " + print(e.children()[1]) + ")";
    case Kind::Sin:
      return "sin(" + print(e.children().front()) + ")";
    case Kind::Cos:
      return "cos(" + print(e.children().front()) + ")";
    case Kind::Sqrt:
      return "sqrt(" + print(e.children().front()) + ")";
  }
  throw SymbolicError("print: unexpected node");
}

// ---------------------------------------------------------------------------
// Parsing
//
// expr   := term (('+' | '-') term)*
// term   := unary (('*' | '/') unary)*
// unary  := '-' unary | power
// power  := primary ('^' power)?          -- exponent must fold to an integer
// primary:= number | ident | ident '(' expr ')' | '(' expr ')'

namespace {

class Parser {
public:
  explicit Parser(const std::string& src) : src_(src) {}

  Expr parse_all() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected character", pos_);
    return e;
  }

private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  bool accept(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (accept('+')) {
        e = e + parse_term();
      } else if (accept('-')) {
        e = e - parse_term();
      } else {
        return e;
      }
    }
  }

  Expr parse_term() {
    Expr e = parse_unary();
    for (;;) {
      if (accept('*')) {
        e = e * parse_unary();
      } else if (accept('/')) {
        std::size_t at = pos_;
        Expr d = parse_unary();
        if (d.is_constant() && d.constant_value() == 0.0) {
          throw ParseError("division by zero constant", at);
        }
        e = e / d;
      } else {
        return e;
      }
    }
  }

  Expr parse_unary() {
    if (accept('-')) return -parse_unary();
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (accept('^')) {
      std::size_t at = pos_;
      Expr exp = accept('-') ? -parse_power() : parse_power();
      if (!exp.is_constant() || !exp.node().constant.is_integer()) {
        throw ParseError("exponent must be an integer constant", at);
      }
      return pow(base, exp.node().constant.rat.num);
    }
    return base;
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    throw ParseError("unexpected character", pos_);
  }

  Expr parse_number() {
    std::size_t start = pos_;
    bool is_int = true;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    if (pos_ < src_.size() && src_[pos_] == '.') {
      is_int = false;
      ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      is_int = false;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        throw ParseError("malformed exponent", pos_);
      }
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    std::string text = src_.substr(start, pos_ - start);
    if (is_int) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec == std::errc() && p == text.data() + text.size()) return integer(v);
      // falls through to double for out-of-range integers
    }
    double d = 0.0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
    if (ec != std::errc() || p != text.data() + text.size()) {
      throw ParseError("malformed number", start);
    }
    return constant(d);
  }

  Expr parse_ident() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    std::string name = src_.substr(start, pos_ - start);
    if (peek() == '(') {
      ++pos_;
      Expr arg = parse_expr();
      expect(')');
      if (name == "sin") return sin(arg);
      if (name == "cos") return cos(arg);
      if (name == "sqrt") return sqrt(arg);
      throw ParseError("unknown function '" + name + "'", start);
    }
    return sym(name);
  }

  const std::string& src_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse(const std::string& src) { return Parser(src).parse_all(); }

// ---------------------------------------------------------------------------
// SymbolTable and SlotEvaluator

int SymbolTable::add(const std::string& name) {
  if (index_.count(name)) throw SymbolicError("duplicate symbol '" + name + "'");
  int slot = static_cast<int>(names_.size());
  names_.push_back(name);
  index_.emplace(name, slot);
  return slot;
}

int SymbolTable::slot(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

SlotEvaluator::SlotEvaluator(const Expr& e, const SymbolTable& args) : root_(e) {
  for (const std::string& name : free_symbols(e)) {
    int slot = args.slot(name);
    if (slot < 0) throw EvalError("unbound symbol '" + name + "'");
    slots_.emplace(sym(name).raw(), slot);
  }
}

double SlotEvaluator::operator()(std::span<const double> args) const {
  return eval_node(root_.raw(), args);
}

double SlotEvaluator::eval_node(const Node* n, std::span<const double> args) const {
  switch (n->kind) {
    case Kind::Constant:
      return n->constant.value();
    case Kind::Symbol:
      return args[slots_.at(n)];
    case Kind::Add: {
      double s = 0.0;
      for (const Expr& c : n->children) s += eval_node(c.raw(), args);
      return s;
    }
    case Kind::Mul: {
      double p = 1.0;
      for (const Expr& c : n->children) p *= eval_node(c.raw(), args);
      return p;
    }
    case Kind::Pow:
      return pow_int(eval_node(n->children.front().raw(), args), n->exponent);
    case Kind::Div:
      return eval_node(n->children[0].raw(), args) / eval_node(n->children[1].raw(), args);
    case Kind::Sin:
      return std::sin(eval_node(n->children.front().raw(), args));
    case Kind::Cos:
      return std::cos(eval_node(n->children.front().raw(), args));
    case Kind::Sqrt:
      return std::sqrt(eval_node(n->children.front().raw(), args));
  }
  throw SymbolicError("eval: unexpected node");
}

}  // namespace femforge::symbolic
