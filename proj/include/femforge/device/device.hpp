#ifndef FEMFORGE_DEVICE_DEVICE_HPP
#define FEMFORGE_DEVICE_DEVICE_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "femforge/codegen/kernel.hpp"
#include "femforge/fem/fem.hpp"
#include "femforge/linalg/linalg.hpp"

namespace femforge::device {

class DeviceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BarrierDeadlock : public DeviceError {
  using DeviceError::DeviceError;
};

// Linearizable addition into a shared cell: no lost updates under
// concurrent callers.
void atomic_add(double& cell, double value);

// --------------------------------------------------------------------------
// Simulated block execution
//
// A kernel is a sequence of phases separated by barriers. Threads run in
// (z, y, x) lexicographic order within each phase; a thread that exits
// before a barrier other threads reach deadlocks the block.

struct ThreadIdx {
  int x = 0, y = 0, z = 0;
};

struct BlockDim {
  int x = 1, y = 1, z = 1;
  int count() const { return x * y * z; }
};

enum class ThreadState { Arrived, Exited };

using PhaseFn = std::function<ThreadState(int phase, const ThreadIdx&)>;

void run_block(const BlockDim& dim, int n_phases, const PhaseFn& fn);

// --------------------------------------------------------------------------
// Device-side mesh layout

// Per-element flattened mesh: coordinates of the three nodes of element k at
// indices 3k..3k+2, with matching global node indices.
struct DeviceArrays {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<int> g_idx;
  int n_nodes = 0;

  int element_count() const { return static_cast<int>(g_idx.size()) / 3; }
};

DeviceArrays flatten_mesh(const fem::Mesh& m);

// Row-wise adjacency for the ELL layout: each row lists its own node plus
// mesh neighbors, sorted ascending, padded with -1 up to max_nz.
struct SparsityPattern {
  int n = 0;
  int max_nz = 0;
  std::vector<int> row_len;   // per-row populated count
  std::vector<int> row_cols;  // n x max_nz, row-major
};

SparsityPattern build_sparsity(const fem::Mesh& m);

// --------------------------------------------------------------------------
// Launch configuration

enum class ExecMode { Deterministic, Parallel };

struct LaunchConfig {
  int elems_per_block = 4;
  ExecMode mode = ExecMode::Deterministic;
  int workers = 1;
  std::uint64_t seed = 0;  // fixes the parallel block schedule

  BlockDim block_dim() const { return {3, 9, elems_per_block}; }
  void validate() const;  // throws on block limit violations
};

// --------------------------------------------------------------------------
// Integrand evaluation
//
// Entries 0..8 are the local stiffness matrix row-major; 0..2 the load
// vector. Implementations must be safe to call from multiple threads.

class FormEvaluator {
public:
  virtual ~FormEvaluator() = default;
  virtual double bilinear(int entry, std::span<const double, 8> args) const = 0;
  virtual double linear(int entry, std::span<const double, 8> args) const = 0;
};

// Runs the compiled kernel IR.
class CompiledEvaluator : public FormEvaluator {
public:
  explicit CompiledEvaluator(codegen::CompiledForm form) : form_(std::move(form)) {}
  double bilinear(int entry, std::span<const double, 8> args) const override;
  double linear(int entry, std::span<const double, 8> args) const override;

private:
  codegen::CompiledForm form_;
};

// Walks the instantiated expression trees directly; isolates the benefit of
// runtime compilation in benchmarks.
class TreeEvaluator : public FormEvaluator {
public:
  explicit TreeEvaluator(const fem::InstantiatedForm& form);
  double bilinear(int entry, std::span<const double, 8> args) const override;
  double linear(int entry, std::span<const double, 8> args) const override;

private:
  std::array<symbolic::SlotEvaluator, 9> bilinear_;
  std::array<symbolic::SlotEvaluator, 3> linear_;
};

// --------------------------------------------------------------------------
// Assembly

struct DenseSystem {
  linalg::DenseMatrix a;
  linalg::Vector b;
};

struct EllSystem {
  linalg::EllMatrix a;
  linalg::Vector b;
};

DenseSystem assemble_dense(const FormEvaluator& eval, const DeviceArrays& d,
                           const LaunchConfig& cfg);
EllSystem assemble_sparse(const FormEvaluator& eval, const DeviceArrays& d,
                          const SparsityPattern& sp, const LaunchConfig& cfg);

inline DenseSystem assemble_dense(const codegen::CompiledForm& cf, const DeviceArrays& d,
                                  const LaunchConfig& cfg) {
  return assemble_dense(CompiledEvaluator(cf), d, cfg);
}
inline EllSystem assemble_sparse(const codegen::CompiledForm& cf, const DeviceArrays& d,
                                 const SparsityPattern& sp, const LaunchConfig& cfg) {
  return assemble_sparse(CompiledEvaluator(cf), d, sp, cfg);
}

// Sequential oracle: plain per-element loop over the expression trees with
// the map-based evaluator, fixed iteration order, no IR, no atomics.
DenseSystem reference_assemble(const fem::InstantiatedForm& form, const fem::Mesh& m);

}  // namespace femforge::device

#endif
