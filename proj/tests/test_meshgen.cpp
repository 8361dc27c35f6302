#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "femforge/meshgen/meshgen.hpp"

using namespace femforge;
using namespace femforge::meshgen;

namespace {

std::string write_temp(const char* name, const std::string& body) {
  std::string path = std::string("/tmp/femforge_mesh_") + name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("unit_square_mesh structure") {
  SUBCASE("smallest meshes") {
    fem::Mesh m1 = unit_square_mesh(1);
    CHECK(m1.node_count() == 4);
    CHECK(m1.element_count() == 2);
    fem::Mesh m2 = unit_square_mesh(2);
    CHECK(m2.node_count() == 9);
    CHECK(m2.element_count() == 8);
  }
  SUBCASE("counts, orientation, and total area") {
    for (int n : {1, 3, 7, 16}) {
      fem::Mesh m = unit_square_mesh(n);
      CHECK(m.node_count() == (n + 1) * (n + 1));
      CHECK(m.element_count() == 2 * n * n);
      CHECK_NOTHROW(m.validate());
      double area = 0.0;
      for (int e = 0; e < m.element_count(); ++e) {
        double s = m.signed_area(e);
        CHECK(s > 0.0);  // CCW
        area += s;
      }
      CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("nodes lie on the lattice and corners are present") {
    int n = 4;
    fem::Mesh m = unit_square_mesh(n);
    std::set<std::pair<double, double>> coords;
    for (const fem::Point& p : m.nodes) coords.insert({p.x, p.y});
    CHECK(static_cast<int>(coords.size()) == m.node_count());
    CHECK(coords.count({0.0, 0.0}) == 1);
    CHECK(coords.count({1.0, 0.0}) == 1);
    CHECK(coords.count({0.0, 1.0}) == 1);
    CHECK(coords.count({1.0, 1.0}) == 1);
  }
  SUBCASE("interior nodes have exactly six neighbors") {
    int n = 5;
    fem::Mesh m = unit_square_mesh(n);
    std::map<int, std::set<int>> adj;
    for (const auto& e : m.elements) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          if (i != j) adj[e.nodes[i]].insert(e.nodes[j]);
        }
      }
    }
    for (int i = 0; i < m.node_count(); ++i) {
      const fem::Point& p = m.nodes[i];
      bool interior = p.x > 0.0 && p.x < 1.0 && p.y > 0.0 && p.y < 1.0;
      if (interior) CHECK(adj[i].size() == 6);
    }
  }
  SUBCASE("invalid sizes") {
    CHECK_THROWS_AS(unit_square_mesh(0), fem::MeshError);
    CHECK_THROWS_AS(unit_square_mesh(-3), fem::MeshError);
  }
}

TEST_CASE("mesh file round trip") {
  fem::Mesh m = unit_square_mesh(3);
  std::string path = "/tmp/femforge_mesh_roundtrip.txt";
  write_mesh(m, path);
  ReadResult r = read_mesh(path);
  CHECK(r.reoriented == 0);
  REQUIRE(r.mesh.node_count() == m.node_count());
  REQUIRE(r.mesh.element_count() == m.element_count());
  for (int i = 0; i < m.node_count(); ++i) {
    CHECK(r.mesh.nodes[i].x == m.nodes[i].x);  // %.17g round trip is bit-exact
    CHECK(r.mesh.nodes[i].y == m.nodes[i].y);
  }
  for (int e = 0; e < m.element_count(); ++e) {
    CHECK(r.mesh.elements[e].nodes == m.elements[e].nodes);
  }
}

TEST_CASE("read_mesh parsing") {
  SUBCASE("comments and blank lines are ignored") {
    std::string path = write_temp("comments.txt",
                                  "# a unit right triangle\n"
                                  "nodes 3\n"
                                  "0 0  # origin\n"
                                  "\n"
                                  "1 0\n"
                                  "0 1\n"
                                  "elements 1\n"
                                  "0 1 2\n");
    ReadResult r = read_mesh(path);
    CHECK(r.mesh.node_count() == 3);
    CHECK(r.mesh.element_count() == 1);
    CHECK(r.reoriented == 0);
  }
  SUBCASE("clockwise elements are flipped and counted") {
    std::string path = write_temp("cw.txt",
                                  "nodes 3\n0 0\n1 0\n0 1\n"
                                  "elements 1\n0 2 1\n");
    ReadResult r = read_mesh(path);
    CHECK(r.reoriented == 1);
    CHECK_NOTHROW(r.mesh.validate());
    CHECK(r.mesh.signed_area(0) > 0.0);
    CHECK(r.mesh.elements[0].nodes[0] == 0);  // first vertex kept
  }
  SUBCASE("out-of-range node index reports the line") {
    std::string path = write_temp("oob.txt",
                                  "nodes 3\n0 0\n1 0\n0 1\n"
                                  "elements 1\n0 1 9\n");
    try {
      read_mesh(path);
      FAIL("expected MeshError");
    } catch (const fem::MeshError& e) {
      std::string msg = e.what();
      CHECK(msg.find(":6:") != std::string::npos);  // element line is line 6
      CHECK(msg.find("9") != std::string::npos);
    }
  }
  SUBCASE("malformed header") {
    std::string path = write_temp("bad_header.txt", "vertices 3\n");
    CHECK_THROWS_AS(read_mesh(path), fem::MeshError);
  }
  SUBCASE("truncated node list") {
    std::string path = write_temp("truncated.txt", "nodes 3\n0 0\n1 0\n");
    CHECK_THROWS_AS(read_mesh(path), fem::MeshError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_mesh("/nonexistent/mesh.txt"), fem::MeshError); }
}
