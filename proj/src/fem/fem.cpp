#include "femforge/fem/fem.hpp"

#include <set>

namespace femforge::fem {

using namespace symbolic;

double Mesh::signed_area(int element) const {
  const auto& e = elements[element].nodes;
  const Point& a = nodes[e[0]];
  const Point& b = nodes[e[1]];
  const Point& c = nodes[e[2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

void Mesh::validate() const {
  const int n = node_count();
  for (int k = 0; k < element_count(); ++k) {
    const auto& e = elements[k].nodes;
    for (int i : e) {
      if (i < 0 || i >= n) {
        throw MeshError("element " + std::to_string(k) + ": node index " + std::to_string(i) +
                        " out of range");
      }
    }
    if (e[0] == e[1] || e[1] == e[2] || e[0] == e[2]) {
      throw MeshError("element " + std::to_string(k) + ": duplicate node indices");
    }
    if (signed_area(k) <= 0.0) {
      throw MeshError("element " + std::to_string(k) + ": non-positive signed area");
    }
  }
}

const FormSymbols& form_symbols() {
  static const FormSymbols fs{sym("u"), sym("u_x"), sym("u_y"),
                              sym("v"), sym("v_x"), sym("v_y"),
                              sym("x"), sym("y")};
  return fs;
}

QuadratureRule quadrature_rule() {
  QuadratureRule r;
  r.points = {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}};
  r.weights = {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  return r;
}

const SymbolTable& kernel_args() {
  static const SymbolTable table = [] {
    SymbolTable t;
    for (const char* n : {"xi", "eta", "x0", "y0", "x1", "y1", "x2", "y2"}) t.add(n);
    return t;
  }();
  return table;
}

const Expr& arg_xi() {
  static const Expr e = sym("xi");
  return e;
}
const Expr& arg_eta() {
  static const Expr e = sym("eta");
  return e;
}

std::array<Expr, 3> reference_shape_functions() {
  Expr xi = arg_xi(), eta = arg_eta();
  return {integer(1) - xi - eta, xi, eta};
}

AffineMap affine_map() {
  Expr xi = arg_xi(), eta = arg_eta();
  Expr x0 = sym("x0"), y0 = sym("y0");
  Expr x1 = sym("x1"), y1 = sym("y1");
  Expr x2 = sym("x2"), y2 = sym("y2");
  AffineMap m;
  m.j00 = x1 - x0;
  m.j01 = x2 - x0;
  m.j10 = y1 - y0;
  m.j11 = y2 - y0;
  m.x = x0 + m.j00 * xi + m.j01 * eta;
  m.y = y0 + m.j10 * xi + m.j11 * eta;
  m.det = m.j00 * m.j11 - m.j01 * m.j10;
  return m;
}

Vec2 grad(const Expr& e, const Expr& x, const Expr& y) {
  return {diff(e, x), diff(e, y)};
}

Expr dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

Vec2 matvec(const Mat2& m, const Vec2& v) {
  return {m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]};
}

WeakForm helmholtz_form(const Mat2& sigma, const Expr& lambda, const Expr& f) {
  const FormSymbols& s = form_symbols();
  Vec2 grad_u{s.u_x, s.u_y};
  Vec2 grad_v{s.v_x, s.v_y};
  WeakForm wf;
  wf.bilinear = dot(grad_v, matvec(sigma, grad_u)) + lambda * s.v * s.u;
  wf.linear = f * s.v;
  return wf;
}

namespace {

void check_symbols(const Expr& e, const std::set<std::string>& allowed, const char* which) {
  for (const std::string& name : free_symbols(e)) {
    if (!allowed.count(name)) {
      throw FormError(std::string(which) + " integrand references symbol '" + name +
                      "' outside the reserved set");
    }
  }
}

}  // namespace

InstantiatedForm instantiate(const WeakForm& wf) {
  const FormSymbols& s = form_symbols();
  check_symbols(wf.bilinear, {"u", "u_x", "u_y", "v", "v_x", "v_y", "x", "y"}, "bilinear");
  check_symbols(wf.linear, {"v", "x", "y"}, "linear");

  auto phi = reference_shape_functions();
  AffineMap map = affine_map();
  Expr xi = arg_xi(), eta = arg_eta();

  // Physical gradients J^{-T} grad_ref(phi); the 1/det factors partially
  // cancel against the det J measure below.
  std::array<Expr, 3> gx, gy;
  for (int i = 0; i < 3; ++i) {
    Expr dxi = diff(phi[i], xi);
    Expr deta = diff(phi[i], eta);
    gx[i] = (map.j11 * dxi - map.j10 * deta) / map.det;
    gy[i] = (map.j00 * deta - map.j01 * dxi) / map.det;
  }

  InstantiatedForm out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Expr entry = substitute(wf.bilinear, {{s.u, phi[j]},
                                            {s.u_x, gx[j]},
                                            {s.u_y, gy[j]},
                                            {s.v, phi[i]},
                                            {s.v_x, gx[i]},
                                            {s.v_y, gy[i]},
                                            {s.x, map.x},
                                            {s.y, map.y}});
      out.bilinear[i * 3 + j] = entry * map.det;
    }
    Expr lin = substitute(wf.linear, {{s.v, phi[i]}, {s.x, map.x}, {s.y, map.y}});
    out.linear[i] = lin * map.det;
  }
  return out;
}

}  // namespace femforge::fem
