#include "femforge/linalg/linalg.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace femforge::linalg {

DenseMatrix EllMatrix::scatter_to_dense() const {
  DenseMatrix d(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < max_nz; ++k) {
      int j = columns[static_cast<std::size_t>(i) * max_nz + k];
      if (j >= 0) d.at(i, j) += values[static_cast<std::size_t>(i) * max_nz + k];
    }
  }
  return d;
}

Vector matvec(const DenseMatrix& a, const Vector& x) {
  if (static_cast<int>(x.size()) != a.n) throw LinalgError("matvec: dimension mismatch");
  Vector y(a.n, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.n; ++i) {
    double s = 0.0;
    const double* row = a.values.data() + static_cast<std::size_t>(i) * a.n;
    for (int j = 0; j < a.n; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

Vector matvec(const EllMatrix& a, const Vector& x) {
  if (static_cast<int>(x.size()) != a.n) throw LinalgError("matvec: dimension mismatch");
  Vector y(a.n, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.n; ++i) {
    double s = 0.0;
    std::size_t base = static_cast<std::size_t>(i) * a.max_nz;
    for (int k = 0; k < a.max_nz; ++k) {
      int j = a.columns[base + k];
      if (j >= 0) s += a.values[base + k] * x[j];
    }
    y[i] = s;
  }
  return y;
}

namespace {

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

template <typename Matrix>
CgResult cg_solve(const Matrix& a, const Vector& b, double tol, int max_iter) {
  const int n = a.n;
  if (static_cast<int>(b.size()) != n) throw LinalgError("cg_solve: dimension mismatch");
  CgResult res;
  res.x.assign(n, 0.0);
  Vector r = b;
  Vector p = r;
  double rr = dot(r, r);
  double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  for (int it = 0; it < max_iter; ++it) {
    if (std::sqrt(rr) <= tol * bnorm) {
      res.converged = true;
      break;
    }
    Vector ap = matvec(a, p);
    double pap = dot(p, ap);
    double alpha = rr / pap;
    if (!std::isfinite(alpha)) throw LinalgError("cg_solve: breakdown (non-finite step)");
    for (int i = 0; i < n; ++i) res.x[i] += alpha * p[i];
    for (int i = 0; i < n; ++i) r[i] -= alpha * ap[i];
    double rr_new = dot(r, r);
    if (!std::isfinite(rr_new)) throw LinalgError("cg_solve: breakdown (non-finite residual)");
    double beta = rr_new / rr;
    rr = rr_new;
    for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    res.iterations = it + 1;
  }
  res.residual = std::sqrt(rr) / bnorm;
  res.converged = res.converged || res.residual <= tol;
  return res;
}

template CgResult cg_solve<DenseMatrix>(const DenseMatrix&, const Vector&, double, int);
template CgResult cg_solve<EllMatrix>(const EllMatrix&, const Vector&, double, int);

double l2_error(const Vector& x, const fem::Expr& u_exact, const fem::Mesh& mesh) {
  for (const std::string& s : symbolic::free_symbols(u_exact)) {
    if (s != "x" && s != "y") throw LinalgError("l2_error: exact solution depends on '" + s + "'");
  }
  fem::QuadratureRule quad = fem::quadrature_rule();
  symbolic::Expr sx = symbolic::sym("x");
  symbolic::Expr sy = symbolic::sym("y");
  double total = 0.0;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& nd = mesh.elements[e].nodes;
    const fem::Point& p0 = mesh.nodes[nd[0]];
    const fem::Point& p1 = mesh.nodes[nd[1]];
    const fem::Point& p2 = mesh.nodes[nd[2]];
    double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    for (int q = 0; q < quad.size(); ++q) {
      double xi = quad.points[q][0], eta = quad.points[q][1];
      double phi0 = 1.0 - xi - eta;
      double px = p0.x + (p1.x - p0.x) * xi + (p2.x - p0.x) * eta;
      double py = p0.y + (p1.y - p0.y) * xi + (p2.y - p0.y) * eta;
      double uh = phi0 * x[nd[0]] + xi * x[nd[1]] + eta * x[nd[2]];
      double ue = symbolic::eval(u_exact, {{"x", px}, {"y", py}});
      double d = uh - ue;
      total += quad.weights[q] * d * d * det;
    }
  }
  return std::sqrt(total);
}

// ---------------------------------------------------------------------------
// Export

namespace {

void write_value(std::FILE* f, double v) { std::fprintf(f, "%.17g", v); }

struct FileHandle {
  std::FILE* f;
  explicit FileHandle(const std::string& path) : f(std::fopen(path.c_str(), "w")) {
    if (!f) throw LinalgError("cannot open '" + path + "' for writing");
  }
  ~FileHandle() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void export_matrix(const DenseMatrix& a, const std::string& path, ExportFormat fmt) {
  FileHandle fh(path);
  if (fmt == ExportFormat::MatrixMarket) {
    std::fprintf(fh.f, "%%%%MatrixMarket matrix array real general\n%d %d\n", a.n, a.n);
    // array format is column-major
    for (int j = 0; j < a.n; ++j) {
      for (int i = 0; i < a.n; ++i) {
        write_value(fh.f, a.at(i, j));
        std::fputc('\n', fh.f);
      }
    }
  } else {
    for (int i = 0; i < a.n; ++i) {
      for (int j = 0; j < a.n; ++j) {
        if (j) std::fputc(',', fh.f);
        write_value(fh.f, a.at(i, j));
      }
      std::fputc('\n', fh.f);
    }
  }
}

void export_matrix(const EllMatrix& a, const std::string& path, ExportFormat fmt) {
  FileHandle fh(path);
  std::size_t nnz = 0;
  for (int c : a.columns) {
    if (c >= 0) ++nnz;
  }
  if (fmt == ExportFormat::MatrixMarket) {
    std::fprintf(fh.f, "%%%%MatrixMarket matrix coordinate real general\n%d %d %zu\n", a.n, a.n,
                 nnz);
    for (int i = 0; i < a.n; ++i) {
      for (int k = 0; k < a.max_nz; ++k) {
        std::size_t idx = static_cast<std::size_t>(i) * a.max_nz + k;
        if (a.columns[idx] < 0) continue;
        std::fprintf(fh.f, "%d %d ", i + 1, a.columns[idx] + 1);
        write_value(fh.f, a.values[idx]);
        std::fputc('\n', fh.f);
      }
    }
  } else {
    for (int i = 0; i < a.n; ++i) {
      for (int k = 0; k < a.max_nz; ++k) {
        std::size_t idx = static_cast<std::size_t>(i) * a.max_nz + k;
        if (a.columns[idx] < 0) continue;
        std::fprintf(fh.f, "%d,%d,", i, a.columns[idx]);
        write_value(fh.f, a.values[idx]);
        std::fputc('\n', fh.f);
      }
    }
  }
}

void export_vector(const Vector& b, const std::string& path, ExportFormat fmt) {
  FileHandle fh(path);
  if (fmt == ExportFormat::MatrixMarket) {
    std::fprintf(fh.f, "%%%%MatrixMarket matrix array real general\n%zu 1\n", b.size());
  }
  for (double v : b) {
    write_value(fh.f, v);
    std::fputc('\n', fh.f);
  }
}

DenseMatrix read_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LinalgError("cannot open '" + path + "'");
  std::string header;
  std::getline(in, header);
  bool coordinate = header.find("coordinate") != std::string::npos;
  if (header.rfind("%%MatrixMarket", 0) != 0) throw LinalgError("not a MatrixMarket file");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%') break;
  }
  std::istringstream sizes(line);
  int rows = 0, cols = 0;
  std::size_t nnz = 0;
  sizes >> rows >> cols;
  if (coordinate) sizes >> nnz;
  if (rows != cols) throw LinalgError("only square matrices supported");
  DenseMatrix a(rows);
  if (coordinate) {
    for (std::size_t k = 0; k < nnz; ++k) {
      int i, j;
      double v;
      if (!(in >> i >> j >> v)) throw LinalgError("truncated coordinate data");
      a.at(i - 1, j - 1) += v;
    }
  } else {
    for (int j = 0; j < cols; ++j) {
      for (int i = 0; i < rows; ++i) {
        double v;
        if (!(in >> v)) throw LinalgError("truncated array data");
        a.at(i, j) = v;
      }
    }
  }
  return a;
}

}  // namespace femforge::linalg
