#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "nlfeti/geometry.hpp"

using namespace nlfeti;

namespace {

// Subdomains whose closure contains the node, by brute force over elements.
std::set<int> owners(const DecomposedMesh& m, int node) {
  std::set<int> s;
  for (int sd = 0; sd < m.num_subdomains(); ++sd)
    for (int e : m.subdomain_elements[sd])
      for (int v : m.elements[e])
        if (v == node) s.insert(sd);
  return s;
}

}  // namespace

TEST_CASE("structured mesh sizes") {
  auto m = build_mesh(5, 20);
  CHECK(m.nodes.size() == 10201);
  CHECK(m.elements.size() == 20000);
  CHECK(m.num_subdomains() == 25);
  for (const auto& els : m.subdomain_elements) CHECK(els.size() == 800);

  auto s = build_mesh(2, 2);
  CHECK(s.nodes.size() == 25);
  CHECK(s.elements.size() == 32);
  CHECK(s.num_subdomains() == 4);
}

TEST_CASE("mesh rejects degenerate sizes") {
  CHECK_THROWS_AS(build_mesh(1, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_mesh(3, 1), std::invalid_argument);
}

TEST_CASE("every element belongs to exactly one subdomain") {
  auto m = build_mesh(3, 4);
  std::vector<int> count(m.elements.size(), 0);
  for (const auto& els : m.subdomain_elements)
    for (int e : els) ++count[e];
  CHECK(std::all_of(count.begin(), count.end(), [](int c) { return c == 1; }));
}

TEST_CASE("triangles are positively oriented with area h^2/2") {
  auto m = build_mesh(2, 3);
  double h = 1.0 / 6.0;
  for (const auto& t : m.elements) {
    auto a = m.nodes[t[0]], b = m.nodes[t[1]], c = m.nodes[t[2]];
    double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    CHECK(det == doctest::Approx(h * h));
  }
  CHECK(m.element_area() == doctest::Approx(h * h / 2));
}

TEST_CASE("local meshes are structured square grids") {
  auto m = build_mesh(3, 4);
  for (const auto& l2g : m.local_to_global) CHECK(l2g.size() == 25);
}

TEST_CASE("interface of 5x5 decomposition") {
  auto m = build_mesh(5, 20);
  auto iface = enumerate_interface(m);
  CHECK(iface.vertex_nodes.size() == 28);
  CHECK(iface.edges.size() == 40);
  int touching = 0;
  for (const auto& e : iface.edges) {
    CHECK(e.nodes.size() == 19);
    CHECK(e.subdomains[0] < e.subdomains[1]);
    if (e.touches_dirichlet) ++touching;
  }
  // horizontal edges of the leftmost subdomain column
  CHECK(touching == 4);
  CHECK(iface.dirichlet_nodes.size() == 101);
  for (std::size_t k = 1; k < iface.edges.size(); ++k)
    CHECK(iface.edges[k - 1].subdomains < iface.edges[k].subdomains);
}

TEST_CASE("interface of 2x2 decomposition, brute force") {
  auto m = build_mesh(2, 2);
  auto iface = enumerate_interface(m);
  // center, bottom-mid, top-mid and right-mid; left-mid sits on x = 0
  std::vector<int> expected{m.node_index(2, 0), m.node_index(4, 2), m.node_index(2, 2), m.node_index(2, 4)};
  std::sort(expected.begin(), expected.end());
  CHECK(iface.vertex_nodes == expected);
  CHECK(iface.edges.size() == 4);
}

TEST_CASE("interface membership matches the closure definition") {
  for (auto [ns, hh] : std::vector<std::pair<int, int>>{{2, 2}, {3, 4}, {4, 3}}) {
    auto m = build_mesh(ns, hh);
    auto iface = enumerate_interface(m);
    std::set<int> gamma(iface.vertex_nodes.begin(), iface.vertex_nodes.end());
    std::map<int, int> edge_count;
    for (const auto& e : iface.edges)
      for (int n : e.nodes) {
        gamma.insert(n);
        ++edge_count[n];
      }
    for (int n = 0; n < static_cast<int>(m.nodes.size()); ++n) {
      bool on_dirichlet = m.node_ix(n) == 0;
      bool expect = owners(m, n).size() >= 2 && !on_dirichlet;
      CHECK(gamma.count(n) == static_cast<std::size_t>(expect));
    }
    for (auto [n, c] : edge_count) CHECK(c == 1);
    for (const auto& e : iface.edges) CHECK(static_cast<int>(e.nodes.size()) == hh - 1);
  }
}

TEST_CASE("index partition covers the non-Dirichlet dofs") {
  auto d = decompose(3, 4);
  std::set<int> seen;
  std::map<int, int> dual_multiplicity;
  for (const auto& l : d.partition) {
    std::vector<int> all = l.interior;
    all.insert(all.end(), l.vertices.begin(), l.vertices.end());
    auto dual = l.dual();
    all.insert(all.end(), dual.begin(), dual.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    CHECK(static_cast<int>(all.size()) == l.num_dofs());
    for (int k : all) seen.insert(l.dof_nodes[k]);
    for (int k : dual) ++dual_multiplicity[l.dof_nodes[k]];
  }
  int non_dirichlet = static_cast<int>(d.mesh.nodes.size() - d.interface.dirichlet_nodes.size());
  CHECK(static_cast<int>(seen.size()) == non_dirichlet);
  CHECK(d.num_global_dofs == non_dirichlet);
  for (auto [n, c] : dual_multiplicity) CHECK(c == 2);
}

TEST_CASE("construction is deterministic") {
  auto a = decompose(3, 5);
  auto b = decompose(3, 5);
  CHECK(a.mesh.elements == b.mesh.elements);
  CHECK(a.interface.vertex_nodes == b.interface.vertex_nodes);
  CHECK(a.global_dof == b.global_dof);
  for (std::size_t k = 0; k < a.partition.size(); ++k) {
    CHECK(a.partition[k].dof_nodes == b.partition[k].dof_nodes);
    CHECK(a.partition[k].element_dofs == b.partition[k].element_dofs);
  }
}
