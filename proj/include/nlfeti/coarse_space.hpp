#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "nlfeti/geometry.hpp"

namespace nlfeti {

enum class ConstraintSource { adaptive, learned, manual };

struct ConstraintProvenance {
  ConstraintSource source = ConstraintSource::manual;
  double eigenvalue = 0.0;  // adaptive only
  int rank = 0;             // learned only, 1-based
  int newton_step = 0;      // outer step the constraint was computed at
};

struct EdgeConstraints {
  std::vector<Eigen::VectorXd> vectors;  // orthonormal, over edge-interior nodes
  std::vector<ConstraintProvenance> provenance;

  int count() const { return static_cast<int>(vectors.size()); }
};

/// Primal vertices plus weighted edge constraints.
struct CoarseSpace {
  std::vector<int> vertex_nodes;
  std::vector<EdgeConstraints> edges;
  std::vector<int> edge_sizes;  // edge-interior node count per edge
  int dropped = 0;              // near-dependent vectors discarded during orthonormalization
  std::string label;

  int num_edge_constraints() const;
  int size() const { return static_cast<int>(vertex_nodes.size()) + num_edge_constraints(); }
};

struct CandidateConstraint {
  Eigen::VectorXd vector;
  ConstraintProvenance provenance;
};

CoarseSpace vertex_coarse(const InterfaceConnectivity& iface);

/// Orthonormalizes the supplied candidates edge by edge (in order, so the
/// span of the first r kept vectors contains the first r candidates) and
/// drops vectors whose remainder after projection falls below `drop_tol`
/// relative to their norm.
CoarseSpace manual_coarse(const InterfaceConnectivity& iface,
                          const std::vector<std::vector<CandidateConstraint>>& per_edge, double drop_tol = 1e-8);

nlohmann::json to_json(const CoarseSpace& space);
CoarseSpace coarse_from_json(const nlohmann::json& j);

}  // namespace nlfeti
