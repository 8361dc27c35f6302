#ifndef FEMFORGE_FEM_FEM_HPP
#define FEMFORGE_FEM_FEM_HPP

#include <array>
#include <string>
#include <vector>

#include "femforge/symbolic/expr.hpp"

namespace femforge::fem {

using symbolic::Expr;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Element {
  std::array<int, 3> nodes{};
};

class MeshError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Triangle mesh with CCW-oriented elements.
struct Mesh {
  std::vector<Point> nodes;
  std::vector<Element> elements;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int element_count() const { return static_cast<int>(elements.size()); }

  double signed_area(int element) const;
  // Throws MeshError on out-of-range indices, duplicate nodes within an
  // element, or non-positive signed area.
  void validate() const;
};

struct FunctionSpace {
  const Mesh* mesh = nullptr;
  Expr x, y;                      // coordinate symbols
  std::string family = "Lagrange";
  int degree = 1;
  int n_local = 3;
};

// Reserved symbols the weak-form integrands are written over.
struct FormSymbols {
  Expr u, u_x, u_y;   // trial function and its physical derivatives
  Expr v, v_x, v_y;   // test function and its physical derivatives
  Expr x, y;          // physical coordinates
};
const FormSymbols& form_symbols();

struct WeakForm {
  Expr bilinear;  // over {u, u_x, u_y, v, v_x, v_y, x, y}
  Expr linear;    // over {v, x, y}
  FunctionSpace space;
};

class FormError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QuadratureRule {
  std::vector<std::array<double, 2>> points;  // (xi, eta) on the reference triangle
  std::vector<double> weights;
  int size() const { return static_cast<int>(points.size()); }
};

// The 3-point rule exact for total degree <= 2.
QuadratureRule quadrature_rule();

// Argument slot order of instantiated entries: (xi, eta, x0, y0, x1, y1, x2, y2).
constexpr int kNumKernelArgs = 8;
const symbolic::SymbolTable& kernel_args();
const Expr& arg_xi();
const Expr& arg_eta();

// P1 nodal basis on the reference triangle: 1-xi-eta, xi, eta.
std::array<Expr, 3> reference_shape_functions();

struct AffineMap {
  Expr x, y;                 // physical coordinates in terms of (xi, eta, vertex coords)
  Expr j00, j01, j10, j11;   // constant Jacobian [[dx/dxi, dx/deta], [dy/dxi, dy/deta]]
  Expr det;                  // j00*j11 - j01*j10; positive for CCW elements
};
AffineMap affine_map();

// Per-entry quadrature integrands over the 8 kernel argument symbols. The
// det J factor is included; the quadrature weight is applied at evaluation.
struct InstantiatedForm {
  std::array<Expr, 9> bilinear;  // row-major (test i, trial j)
  std::array<Expr, 3> linear;
  int n_local = 3;
};

InstantiatedForm instantiate(const WeakForm& wf);

// Small symbolic linear algebra used to build weak forms.
using Vec2 = std::array<Expr, 2>;
using Mat2 = std::array<Expr, 4>;  // row-major

Vec2 grad(const Expr& e, const Expr& x, const Expr& y);
Expr dot(const Vec2& a, const Vec2& b);
Vec2 matvec(const Mat2& m, const Vec2& v);

// Builds the generalized Helmholtz weak form from coefficient expressions
// over {x, y}: (grad v, sigma grad u) + lambda (v, u) = (v, f).
WeakForm helmholtz_form(const Mat2& sigma, const Expr& lambda, const Expr& f);

}  // namespace femforge::fem

#endif
