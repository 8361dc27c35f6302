#ifndef FEMFORGE_MESHGEN_MESHGEN_HPP
#define FEMFORGE_MESHGEN_MESHGEN_HPP

#include <string>

#include "femforge/fem/fem.hpp"

namespace femforge::meshgen {

// Uniform triangulation of the unit square: n cells per side, each cell split
// along the lower-left-to-upper-right diagonal. (n+1)^2 nodes, 2n^2 CCW
// triangles.
fem::Mesh unit_square_mesh(int n);

struct ReadResult {
  fem::Mesh mesh;
  int reoriented = 0;  // number of elements flipped to CCW
};

// Text format: "nodes <N>" then N "x y" lines, "elements <M>" then M
// "i0 i1 i2" lines (0-based). '#' starts a comment.
ReadResult read_mesh(const std::string& path);
void write_mesh(const fem::Mesh& m, const std::string& path);

}  // namespace femforge::meshgen

#endif
