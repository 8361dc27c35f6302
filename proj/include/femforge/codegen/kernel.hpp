#ifndef FEMFORGE_CODEGEN_KERNEL_HPP
#define FEMFORGE_CODEGEN_KERNEL_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "femforge/fem/fem.hpp"
#include "femforge/symbolic/expr.hpp"

namespace femforge::codegen {

using symbolic::Expr;
using symbolic::SymbolTable;

enum class Op : std::uint8_t {
  LoadArg,    // imm = argument slot
  LoadConst,  // imm = constant pool index
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  PowInt,     // imm = exponent (|exponent| > 4 only; smaller are unrolled)
  Sin,
  Cos,
  Sqrt,
};

struct Instr {
  Op op;
  int a = -1;  // first operand register
  int b = -1;  // second operand register
  std::int64_t imm = 0;
};

class CodegenError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat SSA register program: instruction k writes register k.
struct KernelProgram {
  std::vector<Instr> code;
  std::vector<double> consts;
  int arity = 0;
  int result = 0;

  double run(std::span<const double> args) const;
  // Scratch-buffer variant for hot loops; scratch is resized as needed.
  double run(std::span<const double> args, std::vector<double>& scratch) const;
  std::string disassemble() const;
};

KernelProgram lower(const Expr& e, const SymbolTable& args);

struct CompiledForm {
  std::array<KernelProgram, 9> bilinear;
  std::array<KernelProgram, 3> linear;
  int n_quad = 3;
  int n_local = 3;
};

CompiledForm compile_form(const fem::InstantiatedForm& f);

struct LaunchParams {
  int n_quad = 3;
  int n_local = 3;
  int elems_per_block = 4;
  int max_nz = 7;
};

// Renders the kernel source template for inspection: C-like accelerator
// dialect, byte-deterministic for identical inputs.
std::string emit_source(const fem::InstantiatedForm& f, const LaunchParams& cfg);

}  // namespace femforge::codegen

#endif
