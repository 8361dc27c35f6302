#include "femforge/device/device.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <omp.h>

namespace femforge::device {

void atomic_add(double& cell, double value) {
  std::atomic_ref<double> ref(cell);
  double old = ref.load(std::memory_order_relaxed);
  while (!ref.compare_exchange_weak(old, old + value, std::memory_order_relaxed)) {
  }
}

void run_block(const BlockDim& dim, int n_phases, const PhaseFn& fn) {
  const int total = dim.count();
  std::vector<bool> alive(total, true);
  int n_alive = total;
  for (int phase = 0; phase < n_phases; ++phase) {
    int exited_here = 0;
    int t = 0;
    for (int z = 0; z < dim.z; ++z) {
      for (int y = 0; y < dim.y; ++y) {
        for (int x = 0; x < dim.x; ++x, ++t) {
          if (!alive[t]) continue;
          if (fn(phase, ThreadIdx{x, y, z}) == ThreadState::Exited) {
            alive[t] = false;
            ++exited_here;
          }
        }
      }
    }
    n_alive -= exited_here;
    if (phase < n_phases - 1 && exited_here > 0 && n_alive > 0) {
      throw BarrierDeadlock("thread exited before a barrier other threads reached (phase " +
                            std::to_string(phase) + ")");
    }
    if (n_alive == 0) return;
  }
}

DeviceArrays flatten_mesh(const fem::Mesh& m) {
  m.validate();
  DeviceArrays d;
  d.n_nodes = m.node_count();
  const std::size_t len = static_cast<std::size_t>(m.element_count()) * 3;
  d.x.reserve(len);
  d.y.reserve(len);
  d.g_idx.reserve(len);
  for (const fem::Element& e : m.elements) {
    for (int node : e.nodes) {
      d.x.push_back(m.nodes[node].x);
      d.y.push_back(m.nodes[node].y);
      d.g_idx.push_back(node);
    }
  }
  return d;
}

SparsityPattern build_sparsity(const fem::Mesh& m) {
  m.validate();
  const int n = m.node_count();
  std::vector<std::set<int>> rows(n);
  for (int i = 0; i < n; ++i) rows[i].insert(i);
  for (const fem::Element& e : m.elements) {
    for (int a : e.nodes) {
      for (int b : e.nodes) rows[a].insert(b);
    }
  }
  SparsityPattern sp;
  sp.n = n;
  sp.max_nz = 0;
  for (const auto& r : rows) sp.max_nz = std::max(sp.max_nz, static_cast<int>(r.size()));
  sp.row_len.resize(n);
  sp.row_cols.assign(static_cast<std::size_t>(n) * sp.max_nz, -1);
  for (int i = 0; i < n; ++i) {
    sp.row_len[i] = static_cast<int>(rows[i].size());
    int k = 0;
    for (int j : rows[i]) sp.row_cols[static_cast<std::size_t>(i) * sp.max_nz + k++] = j;
  }
  return sp;
}

void LaunchConfig::validate() const {
  if (elems_per_block < 1) throw DeviceError("elems_per_block must be >= 1");
  if (3 * 9 * elems_per_block > 1024) {
    throw DeviceError("block exceeds the 1024-thread device limit (elems_per_block " +
                      std::to_string(elems_per_block) + ")");
  }
  if (mode == ExecMode::Parallel && workers < 1) throw DeviceError("workers must be >= 1");
}

double CompiledEvaluator::bilinear(int entry, std::span<const double, 8> args) const {
  static thread_local std::vector<double> scratch;
  return form_.bilinear[entry].run(args, scratch);
}

double CompiledEvaluator::linear(int entry, std::span<const double, 8> args) const {
  static thread_local std::vector<double> scratch;
  return form_.linear[entry].run(args, scratch);
}

TreeEvaluator::TreeEvaluator(const fem::InstantiatedForm& form) {
  const symbolic::SymbolTable& args = fem::kernel_args();
  for (int k = 0; k < 9; ++k) bilinear_[k] = symbolic::SlotEvaluator(form.bilinear[k], args);
  for (int k = 0; k < 3; ++k) linear_[k] = symbolic::SlotEvaluator(form.linear[k], args);
}

double TreeEvaluator::bilinear(int entry, std::span<const double, 8> args) const {
  return bilinear_[entry](args);
}

double TreeEvaluator::linear(int entry, std::span<const double, 8> args) const {
  return linear_[entry](args);
}

// ---------------------------------------------------------------------------
// Launch

namespace {

constexpr double kDegenerateTol = 1e-14;

struct QuadTable {
  std::array<double, 3> xi, eta, w;
};

QuadTable quad_table() {
  fem::QuadratureRule r = fem::quadrature_rule();
  QuadTable t;
  for (int q = 0; q < 3; ++q) {
    t.xi[q] = r.points[q][0];
    t.eta[q] = r.points[q][1];
    t.w[q] = r.weights[q];
  }
  return t;
}

// One simulated thread block of Algorithm-1 assembly: stage, barrier,
// compute into shared local storage, barrier, scatter to global.
template <typename ScatterA, typename ScatterB>
void run_assembly_block(int block, const DeviceArrays& d, const QuadTable& quad,
                        const FormEvaluator& eval, int bz, const ScatterA& scatter_a,
                        const ScatterB& scatter_b) {
  const int n_elems = d.element_count();
  const BlockDim dim{3, 9, bz};
  const int n_threads = dim.count();
  std::vector<double> sx(3 * bz), sy(3 * bz);
  std::vector<int> sidx(3 * bz);
  std::vector<double> local_a(static_cast<std::size_t>(bz) * 9);
  std::vector<double> local_b(static_cast<std::size_t>(bz) * 3);

  auto phase = [&](int p, const ThreadIdx& t) -> ThreadState {
    const int elem = block * bz + t.z;
    const int tid = (t.z * 9 + t.y) * 3 + t.x;
    switch (p) {
      case 0: {  // cooperative staging + shared zero-init
        for (int k = tid; k < 3 * bz; k += n_threads) {
          int g = block * 3 * bz + k;
          if (g < 3 * n_elems) {
            sx[k] = d.x[g];
            sy[k] = d.y[g];
            sidx[k] = d.g_idx[g];
          }
        }
        for (int k = tid; k < bz * 9; k += n_threads) local_a[k] = 0.0;
        for (int k = tid; k < bz * 3; k += n_threads) local_b[k] = 0.0;
        break;
      }
      case 1: {  // integrand evaluation into shared local matrix/vector
        if (elem >= n_elems) break;
        const double* ex = &sx[3 * t.z];
        const double* ey = &sy[3 * t.z];
        if (t.x == 0 && t.y == 0) {
          double det = (ex[1] - ex[0]) * (ey[2] - ey[0]) - (ex[2] - ex[0]) * (ey[1] - ey[0]);
          if (std::abs(det) <= kDegenerateTol) {
            throw DeviceError("degenerate element " + std::to_string(elem) +
                              " (|det J| <= 1e-14)");
          }
        }
        const std::array<double, 8> args{quad.xi[t.x], quad.eta[t.x], ex[0], ey[0],
                                         ex[1],        ey[1],        ex[2], ey[2]};
        local_a[t.z * 9 + t.y] += quad.w[t.x] * eval.bilinear(t.y, args);
        if (t.y < 3) local_b[t.z * 3 + t.y] += quad.w[t.x] * eval.linear(t.y, args);
        break;
      }
      case 2: {  // global scatter
        if (elem >= n_elems || t.x != 0) break;
        int gi = sidx[3 * t.z + t.y / 3];
        int gj = sidx[3 * t.z + t.y % 3];
        scatter_a(gi, gj, local_a[t.z * 9 + t.y]);
        if (t.y < 3) scatter_b(sidx[3 * t.z + t.y], local_b[t.z * 3 + t.y]);
        break;
      }
    }
    return ThreadState::Arrived;
  };
  run_block(dim, 3, phase);
}

template <typename ScatterA, typename ScatterB>
void run_launch(const DeviceArrays& d, const FormEvaluator& eval, const LaunchConfig& cfg,
                const ScatterA& scatter_a, const ScatterB& scatter_b) {
  cfg.validate();
  const QuadTable quad = quad_table();
  const int bz = cfg.elems_per_block;
  const int n_blocks = (d.element_count() + bz - 1) / bz;

  if (cfg.mode == ExecMode::Deterministic) {
    for (int block = 0; block < n_blocks; ++block) {
      run_assembly_block(block, d, quad, eval, bz, scatter_a, scatter_b);
    }
    return;
  }

  std::vector<int> order(n_blocks);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16) num_threads(cfg.workers)
  for (int k = 0; k < n_blocks; ++k) {
    try {
      run_assembly_block(order[k], d, quad, eval, bz, scatter_a, scatter_b);
    } catch (...) {
#pragma omp critical(femforge_device_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

DenseSystem assemble_dense(const FormEvaluator& eval, const DeviceArrays& d,
                           const LaunchConfig& cfg) {
  DenseSystem sys{linalg::DenseMatrix(d.n_nodes), linalg::Vector(d.n_nodes, 0.0)};
  const bool parallel = cfg.mode == ExecMode::Parallel;
  auto scatter_a = [&](int i, int j, double v) {
    double& cell = sys.a.at(i, j);
    if (parallel) {
      atomic_add(cell, v);
    } else {
      cell += v;
    }
  };
  auto scatter_b = [&](int i, double v) {
    if (parallel) {
      atomic_add(sys.b[i], v);
    } else {
      sys.b[i] += v;
    }
  };
  run_launch(d, eval, cfg, scatter_a, scatter_b);
  return sys;
}

EllSystem assemble_sparse(const FormEvaluator& eval, const DeviceArrays& d,
                          const SparsityPattern& sp, const LaunchConfig& cfg) {
  if (sp.n != d.n_nodes) {
    throw DeviceError("sparsity pattern is for a different mesh (" + std::to_string(sp.n) +
                      " rows vs " + std::to_string(d.n_nodes) + " nodes)");
  }
  EllSystem sys{linalg::EllMatrix(sp.n, sp.max_nz), linalg::Vector(sp.n, 0.0)};
  sys.a.columns = sp.row_cols;
  const bool parallel = cfg.mode == ExecMode::Parallel;
  auto scatter_a = [&](int i, int j, double v) {
    const int* row = &sp.row_cols[static_cast<std::size_t>(i) * sp.max_nz];
    int lo = 0, hi = sp.row_len[i];
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (row[mid] < j) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    if (lo >= sp.row_len[i] || row[lo] != j) {
      throw DeviceError("column " + std::to_string(j) + " not present in sparsity row " +
                        std::to_string(i) + " (inconsistent sparsity pattern)");
    }
    double& cell = sys.a.values[static_cast<std::size_t>(i) * sp.max_nz + lo];
    if (parallel) {
      atomic_add(cell, v);
    } else {
      cell += v;
    }
  };
  auto scatter_b = [&](int i, double v) {
    if (parallel) {
      atomic_add(sys.b[i], v);
    } else {
      sys.b[i] += v;
    }
  };
  run_launch(d, eval, cfg, scatter_a, scatter_b);
  return sys;
}

DenseSystem reference_assemble(const fem::InstantiatedForm& form, const fem::Mesh& m) {
  m.validate();
  const fem::QuadratureRule quad = fem::quadrature_rule();
  DenseSystem sys{linalg::DenseMatrix(m.node_count()), linalg::Vector(m.node_count(), 0.0)};
  for (int e = 0; e < m.element_count(); ++e) {
    const auto& nd = m.elements[e].nodes;
    const fem::Point& p0 = m.nodes[nd[0]];
    const fem::Point& p1 = m.nodes[nd[1]];
    const fem::Point& p2 = m.nodes[nd[2]];
    double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    if (std::abs(det) <= kDegenerateTol) {
      throw DeviceError("degenerate element " + std::to_string(e) + " (|det J| <= 1e-14)");
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int q = 0; q < quad.size(); ++q) {
          std::map<std::string, double> vals{
              {"xi", quad.points[q][0]}, {"eta", quad.points[q][1]},
              {"x0", p0.x}, {"y0", p0.y}, {"x1", p1.x}, {"y1", p1.y},
              {"x2", p2.x}, {"y2", p2.y}};
          acc += quad.weights[q] * symbolic::eval(form.bilinear[i * 3 + j], vals);
        }
        sys.a.at(nd[i], nd[j]) += acc;
      }
      double acc = 0.0;
      for (int q = 0; q < quad.size(); ++q) {
        std::map<std::string, double> vals{
            {"xi", quad.points[q][0]}, {"eta", quad.points[q][1]},
            {"x0", p0.x}, {"y0", p0.y}, {"x1", p1.x}, {"y1", p1.y},
            {"x2", p2.x}, {"y2", p2.y}};
        acc += quad.weights[q] * symbolic::eval(form.linear[i], vals);
      }
      sys.b[nd[i]] += acc;
    }
  }
  return sys;
}

}  // namespace femforge::device
