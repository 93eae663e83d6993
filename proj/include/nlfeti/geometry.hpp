#pragma once

#include <array>
#include <vector>

namespace nlfeti {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Structured triangulation of the unit square split into N_s x N_s square
/// subdomains of (H/h) x (H/h) grid cells each. Nodes and elements are
/// numbered row-major by grid coordinate; every grid cell is split along its
/// lower-left to upper-right diagonal.
struct DecomposedMesh {
  int subdomains_per_dim = 0;
  int elements_per_subdomain_edge = 0;
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> elements;
  std::vector<std::vector<int>> subdomain_elements;
  std::vector<std::vector<int>> local_to_global;

  int cells_per_dim() const { return subdomains_per_dim * elements_per_subdomain_edge; }
  int nodes_per_dim() const { return cells_per_dim() + 1; }
  int num_subdomains() const { return subdomains_per_dim * subdomains_per_dim; }
  int node_index(int ix, int iy) const { return iy * nodes_per_dim() + ix; }
  int node_ix(int node) const { return node % nodes_per_dim(); }
  int node_iy(int node) const { return node / nodes_per_dim(); }
  /// Grid cell (ix, iy) owning element e.
  std::array<int, 2> element_cell(int e) const;
  int subdomain_of_cell(int cx, int cy) const;
  double element_area() const;
};

DecomposedMesh build_mesh(int subdomains_per_dim, int elements_per_subdomain_edge);

struct Edge {
  int id = 0;
  /// Adjacent subdomains, lower index first.
  std::array<int, 2> subdomains{};
  /// Edge-interior global nodes, ordered bottom to top (vertical edges) or
  /// left to right (horizontal edges).
  std::vector<int> nodes;
  bool touches_dirichlet = false;
  bool horizontal = false;
};

struct InterfaceConnectivity {
  /// Subdomain corner nodes on the interface (primal vertices), ascending.
  std::vector<int> vertex_nodes;
  std::vector<Edge> edges;
  /// Nodes on x = 0.
  std::vector<int> dirichlet_nodes;
};

InterfaceConnectivity enumerate_interface(const DecomposedMesh& mesh);

/// Local degree-of-freedom layout of one subdomain. Local dofs are the
/// subdomain's non-Dirichlet nodes in local row-major order.
struct SubdomainLayout {
  struct EdgeSlot {
    int edge = 0;
    /// +1 if this subdomain is the lower-indexed side of the edge.
    int sign = 1;
    /// Local dofs in the edge's node order.
    std::vector<int> dofs;
  };

  std::vector<int> dof_nodes;  // global node of each local dof
  std::vector<int> interior;
  std::vector<int> vertices;
  std::vector<int> vertex_ids;  // position in InterfaceConnectivity::vertex_nodes
  std::vector<EdgeSlot> edges;
  /// Per local element: local dof of each corner, -1 for Dirichlet nodes.
  std::vector<std::array<int, 3>> element_dofs;

  int num_dofs() const { return static_cast<int>(dof_nodes.size()); }
  std::vector<int> dual() const;
};

using IndexPartition = std::vector<SubdomainLayout>;

IndexPartition build_partition(const DecomposedMesh& mesh, const InterfaceConnectivity& iface);

/// Mesh, interface and per-subdomain layouts bundled together; what the
/// solver modules consume.
struct Decomposition {
  DecomposedMesh mesh;
  InterfaceConnectivity interface;
  IndexPartition partition;
  /// Global dof index per node (-1 on the Dirichlet boundary).
  std::vector<int> global_dof;
  int num_global_dofs = 0;

  int num_subdomains() const { return mesh.num_subdomains(); }
  int num_edges() const { return static_cast<int>(interface.edges.size()); }
};

Decomposition decompose(int subdomains_per_dim, int elements_per_subdomain_edge);

}  // namespace nlfeti
