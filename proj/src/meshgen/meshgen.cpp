#include "femforge/meshgen/meshgen.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace femforge::meshgen {

using fem::Mesh;
using fem::MeshError;

Mesh unit_square_mesh(int n) {
  if (n < 1) throw MeshError("unit_square_mesh: n must be >= 1");
  Mesh m;
  const double h = 1.0 / n;
  m.nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      m.nodes.push_back({i * h, j * h});
    }
  }
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  m.elements.reserve(static_cast<std::size_t>(2) * n * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      int v00 = id(i, j), v10 = id(i + 1, j), v01 = id(i, j + 1), v11 = id(i + 1, j + 1);
      m.elements.push_back({{v00, v10, v11}});
      m.elements.push_back({{v00, v11, v01}});
    }
  }
  return m;
}

namespace {

// Strips comments, returns false for blank lines.
bool content_of(const std::string& line, std::string& out) {
  std::size_t hash = line.find('#');
  out = hash == std::string::npos ? line : line.substr(0, hash);
  return out.find_first_not_of(" \t\r\n") != std::string::npos;
}

[[noreturn]] void fail(const std::string& path, int lineno, const std::string& msg) {
  throw MeshError(path + ":" + std::to_string(lineno) + ": " + msg);
}

}  // namespace

ReadResult read_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open '" + path + "'");
  ReadResult result;
  Mesh& m = result.mesh;
  std::string raw, line;
  int lineno = 0;

  auto next_content = [&](const char* what) {
    while (std::getline(in, raw)) {
      ++lineno;
      if (content_of(raw, line)) return;
    }
    fail(path, lineno, std::string("unexpected end of file, expected ") + what);
  };

  next_content("'nodes <N>'");
  std::istringstream hdr(line);
  std::string tag;
  long count = -1;
  if (!(hdr >> tag >> count) || tag != "nodes" || count < 0) {
    fail(path, lineno, "expected 'nodes <N>'");
  }
  m.nodes.reserve(count);
  for (long k = 0; k < count; ++k) {
    next_content("node coordinates");
    std::istringstream is(line);
    fem::Point p;
    if (!(is >> p.x >> p.y)) fail(path, lineno, "malformed node line");
    m.nodes.push_back(p);
  }

  next_content("'elements <M>'");
  std::istringstream ehdr(line);
  if (!(ehdr >> tag >> count) || tag != "elements" || count < 0) {
    fail(path, lineno, "expected 'elements <M>'");
  }
  m.elements.reserve(count);
  for (long k = 0; k < count; ++k) {
    next_content("element indices");
    std::istringstream is(line);
    fem::Element e;
    if (!(is >> e.nodes[0] >> e.nodes[1] >> e.nodes[2])) fail(path, lineno, "malformed element line");
    for (int idx : e.nodes) {
      if (idx < 0 || idx >= m.node_count()) {
        fail(path, lineno, "node index " + std::to_string(idx) + " out of range");
      }
    }
    m.elements.push_back(e);
    int eidx = m.element_count() - 1;
    if (m.signed_area(eidx) < 0.0) {
      std::swap(m.elements[eidx].nodes[1], m.elements[eidx].nodes[2]);
      ++result.reoriented;
    }
  }
  m.validate();
  return result;
}

void write_mesh(const Mesh& m, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw MeshError("cannot open '" + path + "' for writing");
  std::fprintf(f, "nodes %d\n", m.node_count());
  for (const fem::Point& p : m.nodes) std::fprintf(f, "%.17g %.17g\n", p.x, p.y);
  std::fprintf(f, "elements %d\n", m.element_count());
  for (const fem::Element& e : m.elements) {
    std::fprintf(f, "%d %d %d\n", e.nodes[0], e.nodes[1], e.nodes[2]);
  }
  std::fclose(f);
}

}  // namespace femforge::meshgen
