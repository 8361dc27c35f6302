#include "femforge/codegen/kernel.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <unordered_map>

namespace femforge::codegen {

using namespace symbolic;

// ---------------------------------------------------------------------------
// Execution

double KernelProgram::run(std::span<const double> args) const {
  std::vector<double> scratch;
  return run(args, scratch);
}

double KernelProgram::run(std::span<const double> args, std::vector<double>& scratch) const {
  if (static_cast<int>(args.size()) != arity) {
    throw CodegenError("argument count mismatch: expected " + std::to_string(arity) + ", got " +
                       std::to_string(args.size()));
  }
  if (scratch.size() < code.size()) scratch.resize(code.size());
  double* r = scratch.data();
  for (std::size_t k = 0; k < code.size(); ++k) {
    const Instr& in = code[k];
    switch (in.op) {
      case Op::LoadArg: r[k] = args[in.imm]; break;
      case Op::LoadConst: r[k] = consts[in.imm]; break;
      case Op::Add: r[k] = r[in.a] + r[in.b]; break;
      case Op::Sub: r[k] = r[in.a] - r[in.b]; break;
      case Op::Mul: r[k] = r[in.a] * r[in.b]; break;
      case Op::Div: r[k] = r[in.a] / r[in.b]; break;
      case Op::Neg: r[k] = -r[in.a]; break;
      case Op::PowInt: r[k] = pow_int(r[in.a], in.imm); break;
      case Op::Sin: r[k] = std::sin(r[in.a]); break;
      case Op::Cos: r[k] = std::cos(r[in.a]); break;
      case Op::Sqrt: r[k] = std::sqrt(r[in.a]); break;
    }
  }
  return r[result];
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

const char* op_name(Op op) {
  switch (op) {
    case Op::LoadArg: return "arg";
    case Op::LoadConst: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::PowInt: return "pow";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Sqrt: return "sqrt";
  }
  return "?";
}

}  // namespace

std::string KernelProgram::disassemble() const {
  std::string out;
  for (std::size_t k = 0; k < code.size(); ++k) {
    const Instr& in = code[k];
    out += "r" + std::to_string(k) + " = " + op_name(in.op);
    switch (in.op) {
      case Op::LoadArg:
        out += " " + std::to_string(in.imm);
        break;
      case Op::LoadConst:
        out += " " + format_double(consts[in.imm]);
        break;
      case Op::Neg:
      case Op::Sin:
      case Op::Cos:
      case Op::Sqrt:
        out += " r" + std::to_string(in.a);
        break;
      case Op::PowInt:
        out += " r" + std::to_string(in.a) + " " + std::to_string(in.imm);
        break;
      default:
        out += " r" + std::to_string(in.a) + " r" + std::to_string(in.b);
        break;
    }
    out += "\n";
  }
  out += "ret r" + std::to_string(result) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Lowering

namespace {

class Lowerer {
public:
  explicit Lowerer(const SymbolTable& args) : args_(args) {
    prog_.arity = args.size();
  }

  KernelProgram take(const Expr& root) {
    prog_.result = lower_node(root);
    return std::move(prog_);
  }

private:
  struct InstrKey {
    Op op;
    int a, b;
    std::int64_t imm;
    bool operator<(const InstrKey& o) const {
      if (op != o.op) return op < o.op;
      if (a != o.a) return a < o.a;
      if (b != o.b) return b < o.b;
      return imm < o.imm;
    }
  };

  int emit(Op op, int a = -1, int b = -1, std::int64_t imm = 0) {
    InstrKey key{op, a, b, imm};
    auto it = cse_.find(key);
    if (it != cse_.end()) return it->second;
    int reg = static_cast<int>(prog_.code.size());
    prog_.code.push_back({op, a, b, imm});
    cse_.emplace(key, reg);
    return reg;
  }

  int const_reg(double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    auto it = const_idx_.find(bits);
    int idx;
    if (it != const_idx_.end()) {
      idx = it->second;
    } else {
      idx = static_cast<int>(prog_.consts.size());
      prog_.consts.push_back(v);
      const_idx_.emplace(bits, idx);
    }
    return emit(Op::LoadConst, -1, -1, idx);
  }

  static bool is_negated(const Expr& e) {
    return e.kind() == Kind::Mul && e.children().front().is_constant() &&
           e.children().front().node().constant.is_minus_one();
  }

  // Lowers e with a leading -1 coefficient stripped (caller emits the sign).
  int lower_stripped(const Expr& e) {
    const auto& kids = e.children();
    if (kids.size() == 2) return lower_node(kids[1]);
    int acc = lower_node(kids[1]);
    for (std::size_t i = 2; i < kids.size(); ++i) acc = emit(Op::Mul, acc, lower_node(kids[i]));
    return acc;
  }

  int lower_node(const Expr& e) {
    auto it = memo_.find(e.raw());
    if (it != memo_.end()) return it->second;
    int reg;
    switch (e.kind()) {
      case Kind::Constant:
        reg = const_reg(e.constant_value());
        break;
      case Kind::Symbol: {
        int slot = args_.slot(e.name());
        if (slot < 0) throw CodegenError("unbound symbol '" + e.name() + "'");
        reg = emit(Op::LoadArg, -1, -1, slot);
        break;
      }
      case Kind::Add: {
        const auto& kids = e.children();
        // IEEE negation is exact, so (-1 * t) folds to sub/neg bit-identically.
        int acc;
        if (is_negated(kids[0])) {
          acc = emit(Op::Neg, lower_stripped(kids[0]));
        } else {
          acc = lower_node(kids[0]);
        }
        for (std::size_t i = 1; i < kids.size(); ++i) {
          if (is_negated(kids[i])) {
            acc = emit(Op::Sub, acc, lower_stripped(kids[i]));
          } else {
            acc = emit(Op::Add, acc, lower_node(kids[i]));
          }
        }
        reg = acc;
        break;
      }
      case Kind::Mul: {
        if (is_negated(e)) {
          reg = emit(Op::Neg, lower_stripped(e));
          break;
        }
        const auto& kids = e.children();
        // 2*t is t+t exactly; keeps doubled terms free of a constant load
        if (kids.size() == 2 && kids[0].is_constant() && kids[0].constant_value() == 2.0) {
          int t = lower_node(kids[1]);
          reg = emit(Op::Add, t, t);
          break;
        }
        int acc = lower_node(kids[0]);
        for (std::size_t i = 1; i < kids.size(); ++i) acc = emit(Op::Mul, acc, lower_node(kids[i]));
        reg = acc;
        break;
      }
      case Kind::Pow: {
        int base = lower_node(e.children().front());
        std::int64_t k = e.exponent();
        std::int64_t mag = k < 0 ? -k : k;
        int p;
        if (mag <= 4) {
          switch (mag) {
            case 1: p = base; break;
            case 2: p = emit(Op::Mul, base, base); break;
            case 3: p = emit(Op::Mul, emit(Op::Mul, base, base), base); break;
            default: {
              int s = emit(Op::Mul, base, base);
              p = emit(Op::Mul, s, s);
              break;
            }
          }
          reg = k < 0 ? emit(Op::Div, const_reg(1.0), p) : p;
        } else {
          reg = emit(Op::PowInt, base, -1, k);
        }
        break;
      }
      case Kind::Div:
        reg = emit(Op::Div, lower_node(e.children()[0]), lower_node(e.children()[1]));
        break;
      case Kind::Sin:
        reg = emit(Op::Sin, lower_node(e.children().front()));
        break;
      case Kind::Cos:
        reg = emit(Op::Cos, lower_node(e.children().front()));
        break;
      case Kind::Sqrt:
        reg = emit(Op::Sqrt, lower_node(e.children().front()));
        break;
      default:
        throw CodegenError("unsupported node kind");
    }
    memo_.emplace(e.raw(), reg);
    return reg;
  }

  const SymbolTable& args_;
  KernelProgram prog_;
  std::unordered_map<const Node*, int> memo_;
  std::map<InstrKey, int> cse_;
  std::unordered_map<std::uint64_t, int> const_idx_;
};

}  // namespace

KernelProgram lower(const Expr& e, const SymbolTable& args) {
  return Lowerer(args).take(e);
}

CompiledForm compile_form(const fem::InstantiatedForm& f) {
  CompiledForm cf;
  const SymbolTable& args = fem::kernel_args();
  for (int k = 0; k < 9; ++k) cf.bilinear[k] = lower(f.bilinear[k], args);
  for (int k = 0; k < 3; ++k) cf.linear[k] = lower(f.linear[k], args);
  return cf;
}

// ---------------------------------------------------------------------------
// Source emission

namespace {

const char* kKernelTemplate = R"(// generated finite element assembly kernel
#define N_QUAD {{N_QUAD}}
#define N_LOCAL {{N_LOCAL}}
#define ELEMS_PER_BLOCK {{ELEMS_PER_BLOCK}}
#define MAX_NZ {{MAX_NZ}}
#define N_ENTRY (N_LOCAL * N_LOCAL)

{{INTEGRAND_BODY}}

__constant__ double c_quad_xi[N_QUAD];
__constant__ double c_quad_eta[N_QUAD];
__constant__ double c_quad_w[N_QUAD];

__global__ void assemble(const double* X, const double* Y, const int* gIdx,
                         int nElems, double* A, double* b, int nNodes,
                         const int* gNbrNodeLen, const int* gNbrNodeIdx) {
  __shared__ double sX[3 * ELEMS_PER_BLOCK];
  __shared__ double sY[3 * ELEMS_PER_BLOCK];
  __shared__ int sIdx[3 * ELEMS_PER_BLOCK];
  __shared__ double localA[ELEMS_PER_BLOCK * N_ENTRY];
  __shared__ double localB[ELEMS_PER_BLOCK * N_LOCAL];

  const int q = threadIdx.x;
  const int entry = threadIdx.y;
  const int ez = threadIdx.z;
  const int elem = blockIdx.x * ELEMS_PER_BLOCK + ez;
  const int tid = (ez * N_ENTRY + entry) * N_QUAD + q;
  const int nThreads = N_QUAD * N_ENTRY * ELEMS_PER_BLOCK;

  for (int k = tid; k < 3 * ELEMS_PER_BLOCK; k += nThreads) {
    int g = blockIdx.x * 3 * ELEMS_PER_BLOCK + k;
    if (g < 3 * nElems) {
      sX[k] = X[g];
      sY[k] = Y[g];
      sIdx[k] = gIdx[g];
    }
  }
  for (int k = tid; k < ELEMS_PER_BLOCK * N_ENTRY; k += nThreads) localA[k] = 0.0;
  for (int k = tid; k < ELEMS_PER_BLOCK * N_LOCAL; k += nThreads) localB[k] = 0.0;
  __syncthreads();

  if (elem < nElems) {
    double args[8];
    args[0] = c_quad_xi[q];
    args[1] = c_quad_eta[q];
    args[2] = sX[3 * ez + 0];
    args[3] = sY[3 * ez + 0];
    args[4] = sX[3 * ez + 1];
    args[5] = sY[3 * ez + 1];
    args[6] = sX[3 * ez + 2];
    args[7] = sY[3 * ez + 2];
    double val = c_quad_w[q] * integrand_bilinear(entry, args);
    atomicAdd(&localA[ez * N_ENTRY + entry], val);
    if (entry < N_LOCAL) {
      double fval = c_quad_w[q] * integrand_linear(entry, args);
      atomicAdd(&localB[ez * N_LOCAL + entry], fval);
    }
  }
  __syncthreads();

  if (elem < nElems && q == 0) {
    int i = sIdx[3 * ez + entry / N_LOCAL];
    int j = sIdx[3 * ez + entry % N_LOCAL];
#if defined(SPARSE_ELL)
    int lo = 0, hi = gNbrNodeLen[i];
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (gNbrNodeIdx[i * MAX_NZ + mid] < j) lo = mid + 1; else hi = mid;
    }
    atomicAdd(&A[i * MAX_NZ + lo], localA[ez * N_ENTRY + entry]);
#else
    atomicAdd(&A[i * nNodes + j], localA[ez * N_ENTRY + entry]);
#endif
    if (entry < N_LOCAL) {
      atomicAdd(&b[sIdx[3 * ez + entry]], localB[ez * N_LOCAL + entry]);
    }
  }
}
)";

std::string render_program(const KernelProgram& p, const std::string& name) {
  std::string out = "__device__ double " + name + "(const double* q) {\n";
  for (std::size_t k = 0; k < p.code.size(); ++k) {
    const Instr& in = p.code[k];
    std::string rhs;
    auto r = [](int i) { return "r" + std::to_string(i); };
    switch (in.op) {
      case Op::LoadArg: rhs = "q[" + std::to_string(in.imm) + "]"; break;
      case Op::LoadConst: rhs = format_double(p.consts[in.imm]); break;
      case Op::Add: rhs = r(in.a) + " + " + r(in.b); break;
      case Op::Sub: rhs = r(in.a) + " - " + r(in.b); break;
      case Op::Mul: rhs = r(in.a) + " * " + r(in.b); break;
      case Op::Div: rhs = r(in.a) + " / " + r(in.b); break;
      case Op::Neg: rhs = "-" + r(in.a); break;
      case Op::PowInt:
        rhs = "pow(" + r(in.a) + ", " + std::to_string(in.imm) + ".0)";
        break;
      case Op::Sin: rhs = "sin(" + r(in.a) + ")"; break;
      case Op::Cos: rhs = "cos(" + r(in.a) + ")"; break;
      case Op::Sqrt: rhs = "sqrt(" + r(in.a) + ")"; break;
    }
    out += "  const double r" + std::to_string(k) + " = " + rhs + ";\n";
  }
  out += "  return r" + std::to_string(p.result) + ";\n}\n";
  return out;
}

void replace_placeholder(std::string& text, const std::string& key, const std::string& value) {
  std::string tag = "{{" + key + "}}";
  std::size_t pos = text.find(tag);
  if (pos == std::string::npos) throw CodegenError("missing placeholder " + tag);
  if (text.find(tag, pos + 1) != std::string::npos) {
    throw CodegenError("duplicate placeholder " + tag);
  }
  text.replace(pos, tag.size(), value);
}

}  // namespace

std::string emit_source(const fem::InstantiatedForm& f, const LaunchParams& cfg) {
  if (cfg.n_quad <= 0 || cfg.n_local <= 0 || cfg.elems_per_block <= 0 || cfg.max_nz <= 0) {
    throw CodegenError("missing placeholder value in launch parameters");
  }
  CompiledForm cf = compile_form(f);
  std::string body;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      body += render_program(cf.bilinear[i * 3 + j],
                             "integrand_" + std::to_string(i) + "_" + std::to_string(j));
      body += "\n";
    }
  }
  for (int i = 0; i < 3; ++i) {
    body += render_program(cf.linear[i], "integrand_f_" + std::to_string(i));
    body += "\n";
  }
  body += "__device__ double integrand_bilinear(int entry, const double* q) {\n";
  body += "  switch (entry) {\n";
  for (int k = 0; k < 9; ++k) {
    body += "    case " + std::to_string(k) + ": return integrand_" + std::to_string(k / 3) +
            "_" + std::to_string(k % 3) + "(q);\n";
  }
  body += "  }\n  return 0.0;\n}\n\n";
  body += "__device__ double integrand_linear(int entry, const double* q) {\n";
  body += "  switch (entry) {\n";
  for (int k = 0; k < 3; ++k) {
    body += "    case " + std::to_string(k) + ": return integrand_f_" + std::to_string(k) +
            "(q);\n";
  }
  body += "  }\n  return 0.0;\n}";

  std::string text = kKernelTemplate;
  replace_placeholder(text, "N_QUAD", std::to_string(cfg.n_quad));
  replace_placeholder(text, "N_LOCAL", std::to_string(cfg.n_local));
  replace_placeholder(text, "ELEMS_PER_BLOCK", std::to_string(cfg.elems_per_block));
  replace_placeholder(text, "MAX_NZ", std::to_string(cfg.max_nz));
  replace_placeholder(text, "INTEGRAND_BODY", body);
  if (text.find("{{") != std::string::npos) throw CodegenError("unresolved placeholder");
  return text;
}

}  // namespace femforge::codegen
