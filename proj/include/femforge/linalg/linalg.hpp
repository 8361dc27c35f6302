#ifndef FEMFORGE_LINALG_LINALG_HPP
#define FEMFORGE_LINALG_LINALG_HPP

#include <string>
#include <vector>

#include "femforge/fem/fem.hpp"

namespace femforge::linalg {

using Vector = std::vector<double>;

class LinalgError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DenseMatrix {
  int n = 0;
  std::vector<double> values;  // row-major, n*n

  explicit DenseMatrix(int size = 0) : n(size), values(static_cast<std::size_t>(size) * size) {}
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
};

// ELLPACK layout: values and column indices are n x max_nz row-major;
// padded slots have column -1 and value 0.
struct EllMatrix {
  int n = 0;
  int max_nz = 0;
  std::vector<double> values;
  std::vector<int> columns;

  EllMatrix() = default;
  EllMatrix(int size, int maxnz)
      : n(size),
        max_nz(maxnz),
        values(static_cast<std::size_t>(size) * maxnz, 0.0),
        columns(static_cast<std::size_t>(size) * maxnz, -1) {}

  DenseMatrix scatter_to_dense() const;
};

Vector matvec(const DenseMatrix& a, const Vector& x);
Vector matvec(const EllMatrix& a, const Vector& x);

struct CgResult {
  Vector x;
  int iterations = 0;
  double residual = 0.0;  // final relative residual
  bool converged = false;
};

// Unpreconditioned conjugate gradients; A must be SPD.
template <typename Matrix>
CgResult cg_solve(const Matrix& a, const Vector& b, double tol, int max_iter);

// L2 norm of (u_h - u_exact) over the mesh, by elementwise quadrature.
double l2_error(const Vector& x, const fem::Expr& u_exact, const fem::Mesh& mesh);

enum class ExportFormat { MatrixMarket, Csv };

void export_matrix(const DenseMatrix& a, const std::string& path, ExportFormat fmt);
void export_matrix(const EllMatrix& a, const std::string& path, ExportFormat fmt);
void export_vector(const Vector& b, const std::string& path, ExportFormat fmt);

// Reads a MatrixMarket file (array or coordinate) into a dense matrix.
DenseMatrix read_matrix_market(const std::string& path);

}  // namespace femforge::linalg

#endif
