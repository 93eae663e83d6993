#include "nlfeti/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace nlfeti {

std::array<int, 2> DecomposedMesh::element_cell(int e) const {
  const int cell = e / 2;
  return {cell % cells_per_dim(), cell / cells_per_dim()};
}

int DecomposedMesh::subdomain_of_cell(int cx, int cy) const {
  return (cy / elements_per_subdomain_edge) * subdomains_per_dim + cx / elements_per_subdomain_edge;
}

double DecomposedMesh::element_area() const {
  const double h = 1.0 / cells_per_dim();
  return 0.5 * h * h;
}

DecomposedMesh build_mesh(int subdomains_per_dim, int elements_per_subdomain_edge) {
  if (subdomains_per_dim < 2)
    throw std::invalid_argument("build_mesh: need at least 2 subdomains per dimension, got " +
                                std::to_string(subdomains_per_dim));
  if (elements_per_subdomain_edge < 2)
    throw std::invalid_argument("build_mesh: need H/h >= 2, got " +
                                std::to_string(elements_per_subdomain_edge));

  DecomposedMesh mesh;
  mesh.subdomains_per_dim = subdomains_per_dim;
  mesh.elements_per_subdomain_edge = elements_per_subdomain_edge;
  const int n = mesh.cells_per_dim();
  const int np = n + 1;

  mesh.nodes.reserve(static_cast<std::size_t>(np) * np);
  for (int iy = 0; iy < np; ++iy)
    for (int ix = 0; ix < np; ++ix)
      mesh.nodes.push_back({static_cast<double>(ix) / n, static_cast<double>(iy) / n});

  const int ns = mesh.num_subdomains();
  mesh.subdomain_elements.assign(ns, {});
  mesh.elements.reserve(2 * static_cast<std::size_t>(n) * n);
  for (int cy = 0; cy < n; ++cy) {
    for (int cx = 0; cx < n; ++cx) {
      const int v0 = mesh.node_index(cx, cy);
      const int v1 = v0 + 1;
      const int v2 = v0 + np;
      const int v3 = v2 + 1;
      const int sd = mesh.subdomain_of_cell(cx, cy);
      mesh.subdomain_elements[sd].push_back(static_cast<int>(mesh.elements.size()));
      mesh.elements.push_back({v0, v1, v3});
      mesh.subdomain_elements[sd].push_back(static_cast<int>(mesh.elements.size()));
      mesh.elements.push_back({v0, v3, v2});
    }
  }

  const int hh = elements_per_subdomain_edge;
  mesh.local_to_global.assign(ns, {});
  for (int sy = 0; sy < subdomains_per_dim; ++sy) {
    for (int sx = 0; sx < subdomains_per_dim; ++sx) {
      auto& l2g = mesh.local_to_global[sy * subdomains_per_dim + sx];
      l2g.reserve(static_cast<std::size_t>(hh + 1) * (hh + 1));
      for (int ly = 0; ly <= hh; ++ly)
        for (int lx = 0; lx <= hh; ++lx) l2g.push_back(mesh.node_index(sx * hh + lx, sy * hh + ly));
    }
  }
  return mesh;
}

InterfaceConnectivity enumerate_interface(const DecomposedMesh& mesh) {
  InterfaceConnectivity iface;
  const int ns = mesh.subdomains_per_dim;
  const int hh = mesh.elements_per_subdomain_edge;
  const int n = mesh.cells_per_dim();

  for (int iy = 0; iy <= n; ++iy) iface.dirichlet_nodes.push_back(mesh.node_index(0, iy));

  // A subdomain corner lies in >= 2 subdomain closures unless it is a corner
  // of the unit square; x = 0 is excluded as Dirichlet boundary.
  for (int iy = 0; iy <= n; iy += hh) {
    for (int ix = hh; ix <= n; ix += hh) {
      const bool square_corner = ix == n && (iy == 0 || iy == n);
      if (!square_corner) iface.vertex_nodes.push_back(mesh.node_index(ix, iy));
    }
  }

  for (int sy = 0; sy < ns; ++sy) {
    for (int sx = 0; sx < ns; ++sx) {
      const int i = sy * ns + sx;
      if (sx + 1 < ns) {
        Edge e;
        e.subdomains = {i, i + 1};
        const int ix = (sx + 1) * hh;
        for (int k = 1; k < hh; ++k) e.nodes.push_back(mesh.node_index(ix, sy * hh + k));
        iface.edges.push_back(std::move(e));
      }
      if (sy + 1 < ns) {
        Edge e;
        e.subdomains = {i, i + ns};
        e.horizontal = true;
        e.touches_dirichlet = sx == 0;
        const int iy = (sy + 1) * hh;
        for (int k = 1; k < hh; ++k) e.nodes.push_back(mesh.node_index(sx * hh + k, iy));
        iface.edges.push_back(std::move(e));
      }
    }
  }
  std::sort(iface.edges.begin(), iface.edges.end(),
            [](const Edge& a, const Edge& b) { return a.subdomains < b.subdomains; });
  for (std::size_t k = 0; k < iface.edges.size(); ++k) iface.edges[k].id = static_cast<int>(k);
  return iface;
}

std::vector<int> SubdomainLayout::dual() const {
  std::vector<int> out;
  for (const auto& slot : edges) out.insert(out.end(), slot.dofs.begin(), slot.dofs.end());
  return out;
}

IndexPartition build_partition(const DecomposedMesh& mesh, const InterfaceConnectivity& iface) {
  const int hh = mesh.elements_per_subdomain_edge;
  std::unordered_map<int, int> vertex_pos;
  for (std::size_t k = 0; k < iface.vertex_nodes.size(); ++k)
    vertex_pos[iface.vertex_nodes[k]] = static_cast<int>(k);
  std::unordered_map<int, int> edge_of_node;
  for (const auto& e : iface.edges)
    for (int node : e.nodes) edge_of_node[node] = e.id;

  IndexPartition partition(mesh.num_subdomains());
  for (int sd = 0; sd < mesh.num_subdomains(); ++sd) {
    auto& layout = partition[sd];
    const auto& l2g = mesh.local_to_global[sd];
    std::vector<int> local_node_to_dof(l2g.size(), -1);
    std::unordered_map<int, int> global_to_dof;
    for (std::size_t ln = 0; ln < l2g.size(); ++ln) {
      const int g = l2g[ln];
      if (mesh.node_ix(g) == 0) continue;
      const int dof = layout.num_dofs();
      local_node_to_dof[ln] = dof;
      global_to_dof[g] = dof;
      layout.dof_nodes.push_back(g);
      if (auto v = vertex_pos.find(g); v != vertex_pos.end()) {
        layout.vertices.push_back(dof);
        layout.vertex_ids.push_back(v->second);
      } else if (!edge_of_node.contains(g)) {
        layout.interior.push_back(dof);
      }
    }
    for (const auto& e : iface.edges) {
      if (e.subdomains[0] != sd && e.subdomains[1] != sd) continue;
      SubdomainLayout::EdgeSlot slot;
      slot.edge = e.id;
      slot.sign = e.subdomains[0] == sd ? 1 : -1;
      for (int node : e.nodes) slot.dofs.push_back(global_to_dof.at(node));
      layout.edges.push_back(std::move(slot));
    }
    const int sx0 = (sd % mesh.subdomains_per_dim) * hh;
    const int sy0 = (sd / mesh.subdomains_per_dim) * hh;
    for (int e : mesh.subdomain_elements[sd]) {
      std::array<int, 3> dofs{};
      for (int c = 0; c < 3; ++c) {
        const int g = mesh.elements[e][c];
        const int ln = (mesh.node_iy(g) - sy0) * (hh + 1) + (mesh.node_ix(g) - sx0);
        dofs[c] = local_node_to_dof[ln];
      }
      layout.element_dofs.push_back(dofs);
    }
  }
  return partition;
}

Decomposition decompose(int subdomains_per_dim, int elements_per_subdomain_edge) {
  Decomposition d;
  d.mesh = build_mesh(subdomains_per_dim, elements_per_subdomain_edge);
  d.interface = enumerate_interface(d.mesh);
  d.partition = build_partition(d.mesh, d.interface);
  d.global_dof.assign(d.mesh.nodes.size(), -1);
  for (std::size_t g = 0; g < d.mesh.nodes.size(); ++g)
    if (d.mesh.node_ix(static_cast<int>(g)) != 0) d.global_dof[g] = d.num_global_dofs++;
  return d;
}

}  // namespace nlfeti
