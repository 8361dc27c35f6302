#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "femforge/codegen/kernel.hpp"
#include "femforge/device/device.hpp"
#include "femforge/fem/fem.hpp"
#include "femforge/linalg/linalg.hpp"
#include "femforge/meshgen/meshgen.hpp"
#include "femforge/symbolic/expr.hpp"

namespace {

using namespace femforge;

constexpr std::int64_t kDefaultMemCap = 2LL * 1024 * 1024 * 1024;

struct ProblemConfig {
  std::vector<std::string> sigma{"1", "-x-y", "x+y", "1"};
  double lambda = 1.0;
  std::string f = "-2*(x^2+y^2)+36";
  int n = 16;
  std::string mesh_file;
  std::string layout = "ell";
  std::string mode = "det";
  int workers = 0;  // 0 -> resolved from FEMFORGE_WORKERS or the host
  int elems_per_block = 4;
  std::string evaluator = "compiled";
  std::uint64_t seed = 0;
  std::int64_t mem_cap = kDefaultMemCap;
};

void add_problem_options(CLI::App* cmd, ProblemConfig& cfg) {
  cmd->add_option("--sigma", cfg.sigma, "four sigma entry expressions over x,y (row-major)")
      ->delimiter(',')
      ->expected(4);
  cmd->add_option("--lambda", cfg.lambda, "reaction coefficient");
  cmd->add_option("--f", cfg.f, "right hand side expression over x,y");
  cmd->add_option("--n", cfg.n, "structured unit-square mesh subdivisions per side");
  cmd->add_option("--mesh-file", cfg.mesh_file, "mesh file path (overrides --n)");
  cmd->add_option("--layout", cfg.layout, "matrix layout: dense|ell")
      ->check(CLI::IsMember({"dense", "ell"}));
  cmd->add_option("--mode", cfg.mode, "execution mode: det|par")
      ->check(CLI::IsMember({"det", "par"}));
  cmd->add_option("--workers", cfg.workers, "worker count for parallel mode");
  cmd->add_option("--elems-per-block", cfg.elems_per_block, "elements per thread block");
  cmd->add_option("--evaluator", cfg.evaluator, "integrand evaluator: compiled|interpreted")
      ->check(CLI::IsMember({"compiled", "interpreted"}));
  cmd->add_option("--seed", cfg.seed, "seed for the parallel block schedule");
  cmd->add_option("--mem-cap-bytes", cfg.mem_cap, "dense layout memory cap in bytes");
}

int resolve_workers(const ProblemConfig& cfg) {
  if (cfg.workers > 0) return cfg.workers;
  if (const char* env = std::getenv("FEMFORGE_WORKERS")) {
    int w = std::atoi(env);
    if (w > 0) return w;
  }
  return std::max(1, omp_get_max_threads());
}

device::LaunchConfig launch_config(const ProblemConfig& cfg) {
  device::LaunchConfig lc;
  lc.elems_per_block = cfg.elems_per_block;
  lc.mode = cfg.mode == "par" ? device::ExecMode::Parallel : device::ExecMode::Deterministic;
  lc.workers = resolve_workers(cfg);
  lc.seed = cfg.seed;
  return lc;
}

fem::Mesh load_mesh(const ProblemConfig& cfg) {
  if (!cfg.mesh_file.empty()) {
    auto r = meshgen::read_mesh(cfg.mesh_file);
    if (r.reoriented > 0) {
      std::fprintf(stderr, "note: reoriented %d element(s) to CCW\n", r.reoriented);
    }
    return std::move(r.mesh);
  }
  return meshgen::unit_square_mesh(cfg.n);
}

// Parse errors exit with code 2; anything else is a runtime failure (1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fem::WeakForm build_form(const ProblemConfig& cfg) {
  if (cfg.lambda <= 0.0) {
    std::fprintf(stderr, "warning: lambda = %g is not strictly positive\n", cfg.lambda);
  }
  try {
    fem::Mat2 sigma;
    for (int k = 0; k < 4; ++k) sigma[k] = symbolic::parse(cfg.sigma[k]);
    symbolic::Expr f = symbolic::parse(cfg.f);
    for (const auto& e : {sigma[0], sigma[1], sigma[2], sigma[3], f}) {
      for (const std::string& s : symbolic::free_symbols(e)) {
        if (s != "x" && s != "y") {
          throw UsageError("coefficient expression references symbol '" + s + "'");
        }
      }
    }
    return fem::helmholtz_form(sigma, symbolic::constant(cfg.lambda), f);
  } catch (const symbolic::ParseError& e) {
    throw UsageError(std::string("expression parse error: ") + e.what());
  }
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct AssembledSystem {
  device::DenseSystem dense;
  device::EllSystem ell;
  bool is_dense = false;
  int max_nz = 0;
  std::size_t nnz = 0;
};

AssembledSystem run_assembly(const ProblemConfig& cfg, const fem::Mesh& mesh) {
  fem::InstantiatedForm inst = fem::instantiate(build_form(cfg));
  device::DeviceArrays arrays = device::flatten_mesh(mesh);
  device::LaunchConfig lc = launch_config(cfg);

  std::unique_ptr<device::FormEvaluator> eval;
  if (cfg.evaluator == "compiled") {
    eval = std::make_unique<device::CompiledEvaluator>(codegen::compile_form(inst));
  } else {
    eval = std::make_unique<device::TreeEvaluator>(inst);
  }

  AssembledSystem out;
  if (cfg.layout == "dense") {
    std::int64_t need = static_cast<std::int64_t>(mesh.node_count()) * mesh.node_count() * 8;
    if (need > cfg.mem_cap) {
      throw UsageError("dense matrix needs " + std::to_string(need) +
                       " bytes, over the memory cap of " + std::to_string(cfg.mem_cap) +
                       " (use --layout ell or raise --mem-cap-bytes)");
    }
    out.is_dense = true;
    out.dense = device::assemble_dense(*eval, arrays, lc);
    out.nnz = static_cast<std::size_t>(mesh.node_count()) * mesh.node_count();
    out.max_nz = mesh.node_count();
  } else {
    device::SparsityPattern sp = device::build_sparsity(mesh);
    out.ell = device::assemble_sparse(*eval, arrays, sp, lc);
    out.max_nz = sp.max_nz;
    for (int len : sp.row_len) out.nnz += len;
  }
  return out;
}

int cmd_assemble(const ProblemConfig& cfg, const std::string& out_matrix,
                 const std::string& out_vector) {
  fem::Mesh mesh = load_mesh(cfg);
  double t0 = now_ms();
  AssembledSystem sys = run_assembly(cfg, mesh);
  double elapsed = now_ms() - t0;

  if (sys.is_dense) {
    linalg::export_matrix(sys.dense.a, out_matrix, linalg::ExportFormat::MatrixMarket);
    linalg::export_vector(sys.dense.b, out_vector, linalg::ExportFormat::MatrixMarket);
  } else {
    linalg::export_matrix(sys.ell.a, out_matrix, linalg::ExportFormat::MatrixMarket);
    linalg::export_vector(sys.ell.b, out_vector, linalg::ExportFormat::MatrixMarket);
  }
  std::printf("N: %d\nnnz: %zu\nMAX_NZ: %d\nwall_ms: %.3f\n", mesh.node_count(), sys.nnz,
              sys.max_nz, elapsed);
  std::printf("matrix: %s\nvector: %s\n", out_matrix.c_str(), out_vector.c_str());
  return 0;
}

int cmd_solve(const ProblemConfig& cfg, double tol, int max_iter, const std::string& exact) {
  fem::Mesh mesh = load_mesh(cfg);
  AssembledSystem sys = run_assembly(cfg, mesh);
  linalg::CgResult res;
  if (sys.is_dense) {
    res = linalg::cg_solve(sys.dense.a, sys.dense.b, tol, max_iter);
  } else {
    res = linalg::cg_solve(sys.ell.a, sys.ell.b, tol, max_iter);
  }
  std::printf("iterations: %d\nresidual: %.6e\nconverged: %s\n", res.iterations, res.residual,
              res.converged ? "yes" : "no");
  if (!res.converged) std::printf("note: reached max_iter %d without convergence\n", max_iter);
  if (!exact.empty()) {
    symbolic::Expr u;
    try {
      u = symbolic::parse(exact);
    } catch (const symbolic::ParseError& e) {
      throw UsageError(std::string("--exact parse error: ") + e.what());
    }
    std::printf("l2_error: %.6e\n", linalg::l2_error(res.x, u, mesh));
  }
  return 0;
}

int cmd_codegen(const ProblemConfig& cfg, const std::string& out_source,
                const std::string& out_ir) {
  fem::InstantiatedForm inst = fem::instantiate(build_form(cfg));
  device::SparsityPattern sp = device::build_sparsity(load_mesh(cfg));

  codegen::LaunchParams params;
  params.elems_per_block = cfg.elems_per_block;
  params.max_nz = sp.max_nz;
  std::ofstream src(out_source);
  if (!src) throw std::runtime_error("cannot open '" + out_source + "'");
  src << codegen::emit_source(inst, params);

  codegen::CompiledForm cf = codegen::compile_form(inst);
  std::ofstream ir(out_ir);
  if (!ir) throw std::runtime_error("cannot open '" + out_ir + "'");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      ir << "program bilinear_" << i << "_" << j << "\n"
         << cf.bilinear[i * 3 + j].disassemble() << "\n";
    }
  }
  for (int i = 0; i < 3; ++i) {
    ir << "program linear_" << i << "\n" << cf.linear[i].disassemble() << "\n";
  }
  std::printf("source: %s\nir: %s\n", out_source.c_str(), out_ir.c_str());
  return 0;
}

int cmd_mesh(int n, const std::string& out) {
  meshgen::write_mesh(meshgen::unit_square_mesh(n), out);
  std::printf("mesh: %s\n", out.c_str());
  return 0;
}

struct BenchRow {
  int n = 0, nodes = 0, elements = 0;
  std::string evaluator, mode;
  int workers = 0;
  double median_ms = 0.0;
  double speedup_vs_interpreted = 0.0;
};

int cmd_bench(const ProblemConfig& base, const std::vector<int>& sizes, int repeats,
              const std::string& csv_path) {
  std::vector<BenchRow> rows;
  for (int n : sizes) {
    ProblemConfig cfg = base;
    cfg.n = n;
    cfg.layout = "ell";
    fem::Mesh mesh = meshgen::unit_square_mesh(n);
    double interpreted_ms[2] = {0.0, 0.0};  // per mode
    for (const char* evaluator : {"interpreted", "compiled"}) {
      int mode_idx = 0;
      for (const char* mode : {"det", "par"}) {
        cfg.evaluator = evaluator;
        cfg.mode = mode;
        std::vector<double> times;
        for (int r = 0; r < repeats; ++r) {
          double t0 = now_ms();
          run_assembly(cfg, mesh);
          times.push_back(now_ms() - t0);
        }
        std::sort(times.begin(), times.end());
        double median = times[times.size() / 2];
        BenchRow row;
        row.n = n;
        row.nodes = mesh.node_count();
        row.elements = mesh.element_count();
        row.evaluator = evaluator;
        row.mode = mode == std::string("det") ? "deterministic" : "parallel";
        row.workers = mode == std::string("det") ? 1 : resolve_workers(cfg);
        row.median_ms = median;
        if (evaluator == std::string("interpreted")) {
          interpreted_ms[mode_idx] = median;
          row.speedup_vs_interpreted = 1.0;
        } else {
          row.speedup_vs_interpreted = interpreted_ms[mode_idx] / median;
        }
        rows.push_back(row);
        ++mode_idx;
      }
    }
  }

  std::printf("%6s %8s %9s %12s %13s %8s %12s %10s\n", "n", "nodes", "elements", "evaluator",
              "mode", "workers", "median_ms", "speedup");
  for (const BenchRow& r : rows) {
    std::printf("%6d %8d %9d %12s %13s %8d %12.2f %10.2f\n", r.n, r.nodes, r.elements,
                r.evaluator.c_str(), r.mode.c_str(), r.workers, r.median_ms,
                r.speedup_vs_interpreted);
  }

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot open '" + csv_path + "'");
    csv << "n,nodes,elements,evaluator,mode,workers,median_ms,speedup_vs_interpreted\n";
    for (const BenchRow& r : rows) {
      csv << r.n << ',' << r.nodes << ',' << r.elements << ',' << r.evaluator << ',' << r.mode
          << ',' << r.workers << ',' << r.median_ms << ',' << r.speedup_vs_interpreted << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symbolic-numeric finite element assembly under a simulated GPU execution model"};
  app.require_subcommand(1);

  ProblemConfig cfg;

  auto* assemble = app.add_subcommand("assemble", "assemble the global system and export it");
  add_problem_options(assemble, cfg);
  std::string out_matrix = "A.mtx", out_vector = "b.mtx";
  assemble->add_option("--out-matrix", out_matrix, "matrix output path");
  assemble->add_option("--out-vector", out_vector, "vector output path");

  auto* solve = app.add_subcommand("solve", "assemble and solve with conjugate gradients");
  add_problem_options(solve, cfg);
  double tol = 1e-10;
  int max_iter = 10000;
  std::string exact;
  solve->add_option("--tol", tol, "relative residual tolerance");
  solve->add_option("--max-iter", max_iter, "iteration cap");
  solve->add_option("--exact", exact, "exact solution expression for L2 error");

  auto* bench = app.add_subcommand("bench", "compare evaluators and execution modes");
  add_problem_options(bench, cfg);
  std::vector<int> sizes{64, 128, 256};
  int repeats = 3;
  std::string csv_path;
  bench->add_option("--sizes", sizes, "mesh sizes to benchmark")->delimiter(',');
  bench->add_option("--repeats", repeats, "repetitions per configuration");
  bench->add_option("--csv", csv_path, "CSV output path");

  auto* codegen_cmd = app.add_subcommand("codegen", "emit kernel source and IR disassembly");
  add_problem_options(codegen_cmd, cfg);
  std::string out_source = "kernel.cu", out_ir = "kernel.ir";
  codegen_cmd->add_option("--out-source", out_source, "kernel source output path");
  codegen_cmd->add_option("--out-ir", out_ir, "IR disassembly output path");

  auto* mesh_cmd = app.add_subcommand("mesh", "generate a structured unit-square mesh");
  int mesh_n = 0;
  std::string mesh_out = "mesh.txt";
  mesh_cmd->add_option("n", mesh_n, "subdivisions per side")->required();
  mesh_cmd->add_option("--out", mesh_out, "output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (assemble->parsed()) return cmd_assemble(cfg, out_matrix, out_vector);
    if (solve->parsed()) return cmd_solve(cfg, tol, max_iter, exact);
    if (bench->parsed()) return cmd_bench(cfg, sizes, repeats, csv_path);
    if (codegen_cmd->parsed()) return cmd_codegen(cfg, out_source, out_ir);
    if (mesh_cmd->parsed()) {
      if (mesh_n < 1) {
        std::fprintf(stderr, "error: n must be >= 1\n");
        return 2;
      }
      return cmd_mesh(mesh_n, mesh_out);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
